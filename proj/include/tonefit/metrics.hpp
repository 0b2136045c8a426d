#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tonefit/image.hpp"

namespace tonefit {

inline constexpr int kSsimWindow = 13;
inline constexpr double kSsimK1 = 0.02;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kDefaultSsimWeight = 0.1;

class WindowTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline double l2_loss(const Image& result, const Image& reference) {
  require_same_shape(result, reference, "l2_loss");
  double sum = 0.0;
  const auto a = result.data();
  const auto b = reference.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

// d l2_loss / d result.
inline Image l2_gradient(const Image& result, const Image& reference) {
  require_same_shape(result, reference, "l2_gradient");
  Image grad(result.width(), result.height(), result.channels());
  const double scale = 2.0 / static_cast<double>(result.size());
  const auto a = result.data();
  const auto b = reference.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = scale * (a[i] - b[i]);
  return grad;
}

// +infinity for identical inputs.
inline double psnr(const Image& result, const Image& reference) {
  const double mse = l2_loss(result, reference);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

// Sums over every valid window x window block; output is
// (width - window + 1) x (height - window + 1).
inline std::vector<double> box_sum_valid(std::span<const double> in, int width,
                                         int height, int window) {
  const int ow = width - window + 1;
  const int oh = height - window + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * height);
  for (int y = 0; y < height; ++y) {
    const double* src = in.data() + static_cast<std::size_t>(y) * width;
    double* dst = rows.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < window; ++k) s += src[x + k];
      dst[x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * ow;
    for (int k = 0; k < window; ++k) {
      const double* src = rows.data() + static_cast<std::size_t>(y + k) * ow;
      for (int x = 0; x < ow; ++x) dst[x] += src[x];
    }
  }
  return out;
}

// Adjoint of box_sum_valid: each pixel receives the sum over the windows that
// cover it.
inline std::vector<double> box_sum_adjoint(std::span<const double> in, int width,
                                           int height, int window) {
  const int ow = width - window + 1;
  const int oh = height - window + 1;
  std::vector<double> cols(static_cast<std::size_t>(ow) * height, 0.0);
  for (int y = 0; y < oh; ++y) {
    const double* src = in.data() + static_cast<std::size_t>(y) * ow;
    for (int k = 0; k < window; ++k) {
      double* dst = cols.data() + static_cast<std::size_t>(y + k) * ow;
      for (int x = 0; x < ow; ++x) dst[x] += src[x];
    }
  }
  std::vector<double> out(static_cast<std::size_t>(width) * height, 0.0);
  for (int y = 0; y < height; ++y) {
    const double* src = cols.data() + static_cast<std::size_t>(y) * ow;
    double* dst = out.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < ow; ++x) {
      const double v = src[x];
      for (int k = 0; k < window; ++k) dst[x + k] += v;
    }
  }
  return out;
}

struct SsimPlane {
  double sum;          // sum of per-window SSIM values
  std::size_t windows;
};

// SSIM of one channel pair. When grad is non-empty, accumulates
// scale * d(sum of window SSIM)/d x into it.
inline SsimPlane ssim_plane(std::span<const double> x, std::span<const double> y,
                            int width, int height, int window,
                            std::span<double> grad = {}, double scale = 1.0) {
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const double inv_k = 1.0 / (static_cast<double>(window) * window);
  const std::size_t n = x.size();

  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto sx = box_sum_valid(x, width, height, window);
  const auto sy = box_sum_valid(y, width, height, window);
  const auto sxx = box_sum_valid(xx, width, height, window);
  const auto syy = box_sum_valid(yy, width, height, window);
  const auto sxy = box_sum_valid(xy, width, height, window);

  const std::size_t windows = sx.size();
  const bool want_grad = !grad.empty();
  std::vector<double> coef_a, coef_b, coef_c;
  if (want_grad) {
    coef_a.resize(windows);
    coef_b.resize(windows);
    coef_c.resize(windows);
  }

  double total = 0.0;
  for (std::size_t w = 0; w < windows; ++w) {
    const double mx = sx[w] * inv_k;
    const double my = sy[w] * inv_k;
    const double vx = sxx[w] * inv_k - mx * mx;
    const double vy = syy[w] * inv_k - my * my;
    const double cxy = sxy[w] * inv_k - mx * my;
    const double n1 = 2.0 * mx * my + c1;
    const double n2 = 2.0 * cxy + c2;
    const double d1 = mx * mx + my * my + c1;
    const double d2 = vx + vy + c2;
    const double s = (n1 * n2) / (d1 * d2);
    total += s;
    if (want_grad) {
      const double ds_dmx = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
      const double ds_dvx = -s / d2;
      const double ds_dcxy = 2.0 * n1 / (d1 * d2);
      coef_a[w] = ds_dmx - 2.0 * mx * ds_dvx - my * ds_dcxy;
      coef_b[w] = 2.0 * ds_dvx;
      coef_c[w] = ds_dcxy;
    }
  }

  if (want_grad) {
    const auto a = box_sum_adjoint(coef_a, width, height, window);
    const auto b = box_sum_adjoint(coef_b, width, height, window);
    const auto c = box_sum_adjoint(coef_c, width, height, window);
    const double f = scale * inv_k;
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += f * (a[i] + b[i] * x[i] + c[i] * y[i]);
    }
  }
  return {total, windows};
}

inline void check_window(const Image& img, int window) {
  if (window < 1 || img.width() < window || img.height() < window) {
    throw WindowTooLarge("SSIM window " + std::to_string(window) + "x" +
                         std::to_string(window) + " does not fit a " +
                         std::to_string(img.width()) + "x" +
                         std::to_string(img.height()) + " image");
  }
}

}  // namespace detail

// Largest usable window, capped at the standard 13x13.
inline int fitting_window(const Image& img) noexcept {
  return std::min({kSsimWindow, img.width(), img.height()});
}

// Mean SSIM over all valid uniform windows, channels averaged.
inline double ssim(const Image& result, const Image& reference,
                   int window = kSsimWindow) {
  require_same_shape(result, reference, "ssim");
  detail::check_window(result, window);
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < result.channels(); ++c) {
    const auto s = detail::ssim_plane(result.plane(c), reference.plane(c),
                                      result.width(), result.height(), window);
    total += s.sum;
    count += s.windows;
  }
  return total / static_cast<double>(count);
}

struct ValueAndGradient {
  double value;
  Image gradient;
};

// ssim and its gradient with respect to `result`.
inline ValueAndGradient ssim_with_gradient(const Image& result,
                                           const Image& reference,
                                           int window = kSsimWindow) {
  require_same_shape(result, reference, "ssim");
  detail::check_window(result, window);
  Image grad(result.width(), result.height(), result.channels());
  const int ow = result.width() - window + 1;
  const int oh = result.height() - window + 1;
  const double count =
      static_cast<double>(ow) * oh * static_cast<double>(result.channels());
  double total = 0.0;
  for (int c = 0; c < result.channels(); ++c) {
    total += detail::ssim_plane(result.plane(c), reference.plane(c),
                                result.width(), result.height(), window,
                                grad.plane(c), 1.0 / count)
                 .sum;
  }
  return {total / count, std::move(grad)};
}

inline double ssim_loss(const Image& result, const Image& reference,
                        int window = kSsimWindow) {
  return 1.0 - ssim(result, reference, window);
}

inline double total_pair_loss(const Image& result, const Image& reference,
                              double ssim_weight = kDefaultSsimWeight,
                              int window = kSsimWindow) {
  if (ssim_weight < 0.0) throw std::invalid_argument("ssim weight must be >= 0");
  return l2_loss(result, reference) +
         ssim_weight * ssim_loss(result, reference, window);
}

struct QualityReport {
  double psnr;  // dB; +infinity for identical images
  double ssim;
};

// PSNR and SSIM of the [0,1]-clamped result. Images smaller than the
// standard window use the largest window that fits.
inline QualityReport quality_report(const Image& result, const Image& reference) {
  const Image r = clamped(result);
  const Image j = clamped(reference);
  return {psnr(r, j), ssim(r, j, fitting_window(r))};
}

}  // namespace tonefit
