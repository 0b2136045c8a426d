#include "tonefit/solution_space.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace tonefit {
namespace {

RgbPoint random_point(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  return {d(rng), d(rng), d(rng)};
}

// Dense grid over [0,1]^3 with the given step: the brute-force projection.
double grid_distance(RgbPoint x, RgbPoint y, RgbPoint z, RgbPoint d, double step) {
  const int n = static_cast<int>(std::round(1.0 / step));
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a <= n; ++a)
    for (int b = 0; b <= n; ++b)
      for (int c = 0; c <= n; ++c) {
        const BasisWeights w{a * step, b * step, c * step};
        best = std::min(best, distance(combine(x, y, z, w), d));
      }
  return best;
}

TEST(DeviationSum, Examples) {
  const RgbPoint p{0.2, 0.3, 0.4};
  const std::vector<RgbPoint> same{p, p, p};
  EXPECT_EQ(deviation_sum(p, same), 0.0);
  const std::vector<RgbPoint> units{{1, 0, 0}, {0, 1, 0}};
  EXPECT_DOUBLE_EQ(deviation_sum({0, 0, 0}, units), 2.0);
  EXPECT_THROW(deviation_sum(p, std::vector<RgbPoint>{}), std::invalid_argument);

  std::mt19937_64 rng(1);
  const RgbPoint a = random_point(rng);
  std::vector<RgbPoint> t;
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    t.push_back(random_point(rng));
    expected += std::sqrt(std::pow(a.r - t.back().r, 2) + std::pow(a.g - t.back().g, 2) +
                          std::pow(a.b - t.back().b, 2));
  }
  EXPECT_NEAR(deviation_sum(a, t), expected, 1e-14);
}

TEST(SolveBasisWeights, Canonical) {
  const auto w = solve_basis_weights({1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.2, 0.5, 0.7});
  EXPECT_DOUBLE_EQ(w[0], 0.2);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  EXPECT_DOUBLE_EQ(w[2], 0.7);
}

TEST(SolveBasisWeights, SingularBasis) {
  const RgbPoint x{0.3, 0.1, 0.9};
  EXPECT_THROW(solve_basis_weights(x, 2.0 * x, {0, 0, 1}, {0.1, 0.1, 0.1}), SingularBasis);
  EXPECT_THROW(solve_basis_weights({0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.1, 0.1, 0.1}),
               SingularBasis);
}

TEST(SolveBasisWeights, ResidualOnRandomBases) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const RgbPoint x = random_point(rng), y = random_point(rng), z = random_point(rng);
    const RgbPoint d = random_point(rng, -2, 2);
    BasisWeights w;
    try {
      w = solve_basis_weights(x, y, z, d);
    } catch (const SingularBasis&) {
      continue;
    }
    EXPECT_LT(distance(combine(x, y, z, w), d), 1e-9 * (1 + norm(d)));
  }
}

TEST(ProjectConstrained, Examples) {
  const RgbPoint x{0.9, 0.2, 0.1}, y{0.1, 0.8, 0.3}, z{0.2, 0.1, 0.7};
  const auto inside = project_constrained(x, y, z, 0.5 * x + 0.5 * y);
  EXPECT_NEAR(inside.distance, 0.0, 1e-12);

  const auto out = project_constrained({1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {2, 0, 0});
  EXPECT_NEAR(out.distance, 1.0, 1e-12);
  EXPECT_NEAR(out.point.r, 1.0, 1e-12);
  EXPECT_NEAR(out.point.g, 0.0, 1e-12);
  EXPECT_NEAR(out.point.b, 0.0, 1e-12);
}

TEST(ProjectConstrained, DependentBasisStillProjects) {
  const RgbPoint x{0.3, 0.1, 0.9};
  const auto p = project_constrained(x, 2.0 * x, x, {0.6, 0.2, 1.8});
  EXPECT_NEAR(p.distance, 0.0, 1e-12);
  const auto q = project_constrained(x, 2.0 * x, x, {0.0, 1.0, 0.0});
  EXPECT_NEAR(q.distance, grid_distance(x, 2.0 * x, x, {0.0, 1.0, 0.0}, 0.01), 1e-2);
}

TEST(ProjectConstrained, FirstOrderConditions) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const RgbPoint x = random_point(rng), y = random_point(rng), z = random_point(rng);
    const RgbPoint d = random_point(rng, -2, 2);
    const auto p = project_constrained(x, y, z, d);
    const RgbPoint r = p.point - d;
    const std::array<RgbPoint, 3> basis{x, y, z};
    for (int i = 0; i < 3; ++i) {
      const double g = dot(basis[i], r);  // d/dw_i of |Bw - d|^2 / 2
      const double w = p.weights[i];
      if (w > 1e-9 && w < 1 - 1e-9) {
        EXPECT_NEAR(g, 0.0, 1e-8);
      } else if (w <= 1e-9) {
        EXPECT_GE(g, -1e-8);
      } else {
        EXPECT_LE(g, 1e-8);
      }
    }
  }
}

TEST(ProjectConstrained, MatchesGridSearch) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const RgbPoint x = random_point(rng, 0, 1), y = random_point(rng, 0, 1),
                   z = random_point(rng, 0, 1);
    const RgbPoint d = random_point(rng, 0, 1.5);
    EXPECT_NEAR(project_constrained(x, y, z, d).distance, grid_distance(x, y, z, d, 0.01), 2e-2);
  }
}

TEST(ProjectConstrained, IdempotentAndConsistentWithExactSolve) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const RgbPoint x = random_point(rng), y = random_point(rng), z = random_point(rng);
    const RgbPoint d = random_point(rng);
    const auto p = project_constrained(x, y, z, d);
    EXPECT_NEAR(project_constrained(x, y, z, p.point).distance, 0.0, 1e-12);
    try {
      const auto w = solve_basis_weights(x, y, z, d);
      if (w[0] >= 0 && w[0] <= 1 && w[1] >= 0 && w[1] <= 1 && w[2] >= 0 && w[2] <= 1) {
        EXPECT_NEAR(p.distance, 0.0, 1e-9);
      }
    } catch (const SingularBasis&) {
    }
  }
}

TEST(ProjectConstrained, DeviationOrdering) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const RgbPoint x = random_point(rng, 0, 1), y = random_point(rng, 0, 1),
                   z = random_point(rng, 0, 1);
    std::vector<RgbPoint> targets;
    for (int k = 0; k < 4; ++k) targets.push_back(random_point(rng, 0, 1));
    double constrained = 0.0;
    for (const auto& d : targets) constrained += project_constrained(x, y, z, d).distance;
    const RgbPoint fixed = combine(x, y, z, {unit(rng), unit(rng), unit(rng)});
    EXPECT_LE(constrained, deviation_sum(fixed, targets) + 1e-12);
  }
}

}  // namespace
}  // namespace tonefit
