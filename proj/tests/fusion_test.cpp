#include "tonefit/fusion.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support/test_util.hpp"

namespace tonefit {
namespace {

using testing::random_image;

std::vector<Image> random_solutions(std::mt19937_64& rng, int n, int w, int h) {
  std::vector<Image> v;
  for (int i = 0; i < n; ++i) v.push_back(random_image(rng, w, h, 3));
  return v;
}

ConfidenceMaps random_maps(std::mt19937_64& rng, FusionMode mode, int n, int w, int h,
                           double lo = 0.0, double hi = 1.0) {
  std::vector<Image> maps;
  for (int i = 0; i < n; ++i) maps.push_back(random_image(rng, w, h, map_channels(mode), lo, hi));
  return {mode, std::move(maps)};
}

TEST(FusePlain, DegenerateMapsSelectOneSolution) {
  std::mt19937_64 rng(1);
  const auto v = random_solutions(rng, 3, 5, 4);
  std::vector<Image> maps{Image(5, 4, 3, 1.0), Image(5, 4, 3, 0.0), Image(5, 4, 3, 0.0)};
  const Image r = fuse_plain(v, ConfidenceMaps(FusionMode::Plain, std::move(maps)));
  EXPECT_EQ(r, v[0]);
}

TEST(FusePlain, PartitionOfUnityOnEqualSolutions) {
  std::mt19937_64 rng(2);
  const Image base = random_image(rng, 6, 6, 3);
  const std::vector<Image> v{base, base, base};
  const Image r = fuse_plain(v, ConfidenceMaps::uniform(FusionMode::Plain, 3, 6, 6, 1.0 / 3));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r.data()[i], base.data()[i], 1e-15);
}

TEST(FusePlain, MatchesScalarLoopBitwise) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_solutions(rng, 3, 4, 4);
    const auto maps = random_maps(rng, FusionMode::Plain, 3, 4, 4, -1.0, 2.0);
    const Image r = fuse_plain(v, maps);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          double acc = 0.0;
          for (int i = 0; i < 3; ++i) acc += v[i].at(c, y, x) * maps[i].at(c, y, x);
          ASSERT_EQ(r.at(c, y, x), acc);
        }
  }
}

TEST(FusePlain, Errors) {
  std::mt19937_64 rng(4);
  const auto v = random_solutions(rng, 2, 4, 4);
  EXPECT_THROW(fuse_plain(v, ConfidenceMaps::uniform(FusionMode::Constrained, 2, 4, 4, 0.5)),
               ModeMismatch);
  EXPECT_THROW(fuse_plain(v, ConfidenceMaps::uniform(FusionMode::Plain, 3, 4, 4, 0.5)),
               DimensionMismatch);
  EXPECT_THROW(fuse_plain(v, ConfidenceMaps::uniform(FusionMode::Plain, 2, 5, 4, 0.5)),
               DimensionMismatch);
  EXPECT_THROW(ConfidenceMaps(FusionMode::Constrained, {Image(2, 2, 1, 1.5)}),
               std::invalid_argument);
  EXPECT_THROW(ConfidenceMaps(FusionMode::Constrained, {Image(2, 2, 3, 0.5)}), ModeMismatch);
}

TEST(FusePlain, LinearInSolutionsAndMaps) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    auto v = random_solutions(rng, 2, 4, 3);
    const auto v_alt = random_image(rng, 4, 3, 3);
    const auto maps = random_maps(rng, FusionMode::Plain, 2, 4, 3, -1.0, 1.0);
    const double a = 0.7, b = -1.3;
    // Superposition in V_0.
    auto v1 = v, v2 = v, vs = v;
    v2[0] = v_alt;
    for (std::size_t q = 0; q < vs[0].size(); ++q)
      vs[0].data()[q] = a * v[0].data()[q] + b * v_alt.data()[q];
    const Image r1 = fuse_plain(v1, maps), r2 = fuse_plain(v2, maps), rs = fuse_plain(vs, maps);
    const Image r_rest = fuse_plain(
        std::vector<Image>{Image(4, 3, 3, 0.0), v[1]}, maps);
    for (std::size_t q = 0; q < rs.size(); ++q) {
      const double expected = a * (r1.data()[q] - r_rest.data()[q]) +
                              b * (r2.data()[q] - r_rest.data()[q]) + r_rest.data()[q];
      EXPECT_NEAR(rs.data()[q], expected, 1e-12);
    }
    // Scaling a map scales its contribution.
    std::vector<Image> scaled_maps(maps.maps().begin(), maps.maps().end());
    for (auto& x : scaled_maps[1].data()) x *= a;
    const Image rm = fuse_plain(v, ConfidenceMaps(FusionMode::Plain, scaled_maps));
    for (std::size_t q = 0; q < rm.size(); ++q) {
      const double c0 = v[0].data()[q] * maps[0].data()[q];
      const double c1 = v[1].data()[q] * maps[1].data()[q];
      EXPECT_NEAR(rm.data()[q], c0 + a * c1, 1e-12);
    }
  }
}

TEST(Interpolate, MatchesScalarLoop) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> wdist(0.01, 10.0);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_solutions(rng, 3, 4, 4);
    const auto maps = random_maps(rng, FusionMode::Constrained, 3, 4, 4);
    const InterpolationWeights w({wdist(rng), wdist(rng), wdist(rng)});
    const Image r = interpolate(v, maps, w);
    const auto cw = w.canonical();
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double denom = 0.0;
        for (int i = 0; i < 3; ++i) denom += maps[i].at(0, y, x) * cw[i];
        denom += kFusionEpsilon;
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = 0; i < 3; ++i) acc += v[i].at(c, y, x) * (maps[i].at(0, y, x) * cw[i] / denom);
          ASSERT_LE(std::abs(r.at(c, y, x) - acc), 1e-12);
        }
      }
  }
}

TEST(Interpolate, CanonicalWeightsStayCloseToRawFormula) {
  std::mt19937_64 rng(7);
  const auto v = random_solutions(rng, 3, 4, 4);
  const auto maps = random_maps(rng, FusionMode::Constrained, 3, 4, 4, 0.1, 1.0);
  const std::vector<double> raw{2.0, 0.01, 0.1};
  const Image r = interpolate(v, maps, InterpolationWeights(raw));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double denom = kFusionEpsilon;
      for (int i = 0; i < 3; ++i) denom += maps[i].at(0, y, x) * raw[i];
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) acc += v[i].at(c, y, x) * maps[i].at(0, y, x) * raw[i] / denom;
        EXPECT_NEAR(r.at(c, y, x), acc, 1e-6);
      }
    }
}

TEST(Interpolate, HomogeneousInWeights) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> wdist(0.01, 10.0), cdist(1e-3, 1e3);
  for (int t = 0; t < 20; ++t) {
    const auto v = random_solutions(rng, 3, 4, 4);
    const auto maps = random_maps(rng, FusionMode::Constrained, 3, 4, 4);
    const std::vector<double> w{wdist(rng), wdist(rng), wdist(rng)};
    const double c = cdist(rng);
    const Image a = interpolate(v, maps, InterpolationWeights(w));
    const Image b = interpolate(v, maps, InterpolationWeights({c * w[0], c * w[1], c * w[2]}));
    EXPECT_EQ(a, b);
  }
  const auto v = random_solutions(rng, 3, 4, 4);
  const auto maps = random_maps(rng, FusionMode::Constrained, 3, 4, 4);
  EXPECT_EQ(interpolate(v, maps, InterpolationWeights({1, 1, 1})),
            interpolate(v, maps, InterpolationWeights({5, 5, 5})));
}

TEST(Interpolate, DominantWeightConvergesToSolution) {
  std::mt19937_64 rng(9);
  const auto v = random_solutions(rng, 3, 6, 6);
  const auto maps = random_maps(rng, FusionMode::Constrained, 3, 6, 6, 0.1, 1.0);
  const Image r = interpolate(v, maps, InterpolationWeights({1e9, 1, 1}));
  double sup = 0.0;
  for (std::size_t q = 0; q < r.size(); ++q) sup = std::max(sup, std::abs(r.data()[q] - v[0].data()[q]));
  EXPECT_LT(sup, 1e-6);
}

TEST(Interpolate, RejectsBadWeights) {
  EXPECT_THROW(InterpolationWeights({1.0, 0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(InterpolationWeights({1.0, -2.0}), std::invalid_argument);
  EXPECT_THROW(InterpolationWeights({}), std::invalid_argument);
  std::mt19937_64 rng(10);
  const auto v = random_solutions(rng, 3, 4, 4);
  EXPECT_THROW(interpolate(v, random_maps(rng, FusionMode::Constrained, 3, 4, 4),
                           InterpolationWeights({1.0, 1.0})),
               std::invalid_argument);
  EXPECT_THROW(interpolate(v, random_maps(rng, FusionMode::Plain, 3, 4, 4),
                           InterpolationWeights({1.0, 1.0, 1.0})),
               ModeMismatch);
}

TEST(NormalizeMaps, Examples) {
  std::vector<Image> maps{Image(1, 1, 1, 0.2), Image(1, 1, 1, 0.2), Image(1, 1, 1, 0.2)};
  const auto n = normalize_maps(ConfidenceMaps(FusionMode::Constrained, maps));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(n[i].data()[0], 1.0 / 3, 1e-7);

  std::vector<Image> one_hot{Image(1, 1, 1, 1.0), Image(1, 1, 1, 0.0), Image(1, 1, 1, 0.0)};
  const auto m = normalize_maps(ConfidenceMaps(FusionMode::Constrained, one_hot));
  EXPECT_NEAR(m[0].data()[0], 1.0, 1e-7);
  EXPECT_EQ(m[1].data()[0], 0.0);
  EXPECT_EQ(m[2].data()[0], 0.0);
}

TEST(NormalizeMaps, EqualWeightsEquivalentToNormalizedFusion) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto v = random_solutions(rng, 3, 5, 5);
    const auto maps = random_maps(rng, FusionMode::Constrained, 3, 5, 5);
    const Image a = interpolate(v, maps, InterpolationWeights({0.7, 0.7, 0.7}));
    const Image b = fuse(v, normalize_maps(maps));
    for (std::size_t q = 0; q < a.size(); ++q) EXPECT_NEAR(a.data()[q], b.data()[q], 1e-12);
  }
}

TEST(NormalizeMaps, ConvexCombination) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto v = random_solutions(rng, 3, 5, 5);
    const auto maps = normalize_maps(random_maps(rng, FusionMode::Constrained, 3, 5, 5, 0.05, 1.0));
    const Image r = fuse(v, maps);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
          const double lo = std::min({v[0].at(c, y, x), v[1].at(c, y, x), v[2].at(c, y, x)});
          const double hi = std::max({v[0].at(c, y, x), v[1].at(c, y, x), v[2].at(c, y, x)});
          // The epsilon in the denominator can pull the sum of weights just below 1.
          EXPECT_GE(r.at(c, y, x), lo - 1e-6);
          EXPECT_LE(r.at(c, y, x), hi + 1e-12);
        }
  }
}

}  // namespace
}  // namespace tonefit
