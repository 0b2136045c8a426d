#include "tonefit/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/reference_ssim.hpp"
#include "support/test_util.hpp"

namespace tonefit {
namespace {

using testing::random_image;

TEST(L2Loss, Examples) {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 4, 4);
  EXPECT_EQ(l2_loss(a, a), 0.0);
  EXPECT_DOUBLE_EQ(l2_loss(Image(3, 3, 3, 0.0), Image(3, 3, 3, 0.5)), 0.25);

  const Image b = random_image(rng, 4, 4);
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    double per_channel = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) per_channel += std::pow(a.at(c, y, x) - b.at(c, y, x), 2);
    sum += per_channel / 16.0;
  }
  EXPECT_NEAR(l2_loss(a, b), sum / 3.0, 1e-15);
  EXPECT_THROW(l2_loss(a, Image(5, 4, 3)), DimensionMismatch);
}

TEST(Psnr, Examples) {
  const Image a(4, 4, 3, 0.3);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_EQ(psnr(Image(4, 4, 3, 0.0), Image(4, 4, 3, 1.0)), 0.0);
  EXPECT_NEAR(psnr(Image(4, 4, 3, 0.2), Image(4, 4, 3, 0.3)), 20.0, 1e-9);
}

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(2);
  const Image a = random_image(rng, 20, 17);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-15);
  EXPECT_NEAR(ssim_loss(a, a), 0.0, 1e-15);
  EXPECT_NEAR(total_pair_loss(a, a), 0.0, 1e-15);
}

TEST(Ssim, NegativeDegrades) {
  std::mt19937_64 rng(3);
  const Image a = random_image(rng, 16, 16);
  Image neg = a;
  for (auto& v : neg.data()) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg), 1.0);
}

TEST(Ssim, MatchesReferenceImplementation) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Image a = random_image(rng, 32, 32);
    const Image b = random_image(rng, 32, 32);
    EXPECT_NEAR(ssim(a, b), testing::reference_ssim(a, b, 13, 0.02, 0.03), 1e-10);
  }
  const Image a = random_image(rng, 21, 15);
  const Image b = random_image(rng, 21, 15);
  EXPECT_NEAR(ssim(a, b, 5), testing::reference_ssim(a, b, 5, 0.02, 0.03), 1e-10);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Image a = random_image(rng, 16, 14);
    const Image b = random_image(rng, 16, 14);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, ssim(b, a), 1e-15);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_EQ(l2_loss(a, b), l2_loss(b, a));
  }
}

TEST(Ssim, RejectsSmallImages) {
  EXPECT_THROW(ssim(Image(12, 20, 3), Image(12, 20, 3)), WindowTooLarge);
  EXPECT_EQ(fitting_window(Image(8, 8, 3)), 8);
  EXPECT_EQ(fitting_window(Image(64, 40, 3)), 13);
}

TEST(PairLoss, Components) {
  std::mt19937_64 rng(6);
  const Image a = random_image(rng, 16, 16);
  const Image b = random_image(rng, 16, 16);
  EXPECT_NEAR(ssim_loss(a, b), 1.0 - ssim(a, b), 1e-15);
  EXPECT_EQ(total_pair_loss(a, b, 0.0), l2_loss(a, b));
  EXPECT_NEAR(total_pair_loss(a, b, 0.1), l2_loss(a, b) + 0.1 * ssim_loss(a, b), 1e-15);
  EXPECT_THROW(total_pair_loss(a, b, -1.0), std::invalid_argument);
}

double fd_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-9});
}

TEST(Gradients, L2MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Image a = random_image(rng, 16, 16);
  const Image b = random_image(rng, 16, 16);
  const Image g = l2_gradient(a, b);
  double worst = 0.0;
  for (std::size_t q = 0; q < a.size(); q += 7) {
    const double saved = a.data()[q];
    a.data()[q] = saved + 1e-6;
    const double up = l2_loss(a, b);
    a.data()[q] = saved - 1e-6;
    const double down = l2_loss(a, b);
    a.data()[q] = saved;
    worst = std::max(worst, fd_rel_error(g.data()[q], (up - down) / 2e-6));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Gradients, SsimMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int window : {13, 5}) {
    Image a = random_image(rng, 16, 16);
    const Image b = random_image(rng, 16, 16);
    const auto vg = ssim_with_gradient(a, b, window);
    EXPECT_NEAR(vg.value, ssim(a, b, window), 1e-15);
    double worst = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) {
      const double saved = a.data()[q];
      a.data()[q] = saved + 1e-6;
      const double up = ssim(a, b, window);
      a.data()[q] = saved - 1e-6;
      const double down = ssim(a, b, window);
      a.data()[q] = saved;
      worst = std::max(worst, fd_rel_error(vg.gradient.data()[q], (up - down) / 2e-6));
    }
    EXPECT_LT(worst, 1e-4) << "window " << window;
  }
}

TEST(QualityReport, ClampsBeforeMeasuring) {
  Image a(16, 16, 3, 1.4);
  const Image b(16, 16, 3, 1.0);
  const auto q = quality_report(a, b);
  EXPECT_TRUE(std::isinf(q.psnr));
  EXPECT_NEAR(q.ssim, 1.0, 1e-15);
}

}  // namespace
}  // namespace tonefit
