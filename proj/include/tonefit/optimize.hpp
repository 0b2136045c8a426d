#pragma once

// Direct per-image fitting of N curve triples and their confidence maps by
// Adam on  L = l2(R, J) + w_s * (1 - SSIM(R, J)),  R = sum_i V_i * C_i.
//
// Parameterization:
//   knots        raw values
//   alphas       tanh(latent), so |alpha| <= 1 always
//   plain maps   raw values (3 channels per solution)
//   constrained  sigmoid(latent), one channel per solution
//
// Maps may live on a coarser grid than the image (map_resolution); they are
// then bilinearly upsampled inside the objective.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include "tonefit/adam.hpp"
#include "tonefit/curve.hpp"
#include "tonefit/fusion.hpp"
#include "tonefit/image.hpp"
#include "tonefit/imageio.hpp"
#include "tonefit/metrics.hpp"
#include "tonefit/solution_set.hpp"

namespace tonefit {

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FitConfig {
  int solutions = kDefaultSolutions;
  int pieces = kDefaultPieces;
  int iterations = kDefaultIterations;
  int steps = 2000;
  double learning_rate = 0.01;
  double ssim_weight = kDefaultSsimWeight;
  FusionMode fusion_mode = FusionMode::Plain;
  bool monotone_knots = false;
  std::uint64_t seed = 0;
  int fit_scale = 1;
  // Amplitude (relative to 1/N) of the zero-sum spatial ramp added to the
  // initial maps. Identical maps would keep all N solutions identical under
  // gradient descent.
  double map_jitter = 0.1;
  bool freeze_maps = false;
  int record_every = 10;
  // Long-side size of the map grid; 0 keeps one map value per pixel.
  int map_resolution = 0;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw InvalidConfig(field + ": " + why);
    };
    if (solutions < 1) fail("solutions", "must be >= 1");
    if (pieces < 1) fail("pieces", "must be >= 1");
    if (iterations < 1) fail("iterations", "must be >= 1");
    if (steps < 1) fail("steps", "must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      fail("learning_rate", "must be a positive number");
    if (!(ssim_weight >= 0.0) || !std::isfinite(ssim_weight))
      fail("ssim_weight", "must be >= 0");
    if (fit_scale < 1 || fit_scale > 4) fail("fit_scale", "must be 1, 2, 3 or 4");
    if (!(map_jitter >= 0.0) || map_jitter >= 1.0) fail("map_jitter", "must be in [0,1)");
    if (record_every < 1) fail("record_every", "must be >= 1");
    if (map_resolution < 0) fail("map_resolution", "must be >= 0");
  }
};

struct Extent {
  int width;
  int height;
  friend bool operator==(const Extent&, const Extent&) = default;
};

// Map grid for an image; keeps the aspect ratio and never exceeds the image.
inline Extent map_grid_extent(int width, int height, int resolution) noexcept {
  const int longest = std::max(width, height);
  if (resolution <= 0 || resolution >= longest) return {width, height};
  auto scaled = [&](int extent) {
    return std::clamp(static_cast<int>(std::lround(static_cast<double>(extent) * resolution / longest)),
                      1, extent);
  };
  return {scaled(width), scaled(height)};
}

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

// Latent whose sigmoid is v; saturates at +-40 for v at the interval ends.
inline double logit(double v) noexcept {
  if (v >= 1.0) return 40.0;
  if (v <= 0.0) return -40.0;
  return std::clamp(std::log(v) - std::log1p(-v), -40.0, 40.0);
}

// Latent whose tanh is alpha; saturates at +-20 for |alpha| = 1.
inline double alpha_latent(double alpha) noexcept {
  if (alpha >= 1.0) return 20.0;
  if (alpha <= -1.0) return -20.0;
  return std::clamp(std::atanh(alpha), -20.0, 20.0);
}

// Identity curves; maps sum to one at every pixel.
inline SolutionSet init_solution_set(const FitConfig& config, int width, int height) {
  config.validate();
  const int n = config.solutions;
  std::vector<CurveTriple> triples(
      n, CurveTriple::identity(config.pieces, config.iterations));

  std::vector<double> offsets(n, 0.0);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double amplitude = n > 1 ? config.map_jitter / n : 0.0;
  for (int i = 0; i < n; ++i) offsets[i] = std::cos(phase + 2.0 * std::numbers::pi * i / n);

  std::vector<Image> maps;
  const int channels = map_channels(config.fusion_mode);
  for (int i = 0; i < n; ++i) maps.emplace_back(width, height, channels, 1.0 / n);
  if (amplitude > 0.0) {
    const double ca = std::cos(angle) * std::numbers::sqrt2;
    const double sa = std::sin(angle) * std::numbers::sqrt2;
    for (int y = 0; y < height; ++y) {
      const double v = (y + 0.5) / height - 0.5;
      for (int x = 0; x < width; ++x) {
        const double u = (x + 0.5) / width - 0.5;
        const double ramp = u * ca + v * sa;
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < channels; ++c) {
            maps[i].at(c, y, x) = 1.0 / n + amplitude * ramp * offsets[i];
          }
        }
      }
    }
  }
  if (config.fusion_mode == FusionMode::Constrained) {
    // Round-trip through the latent so the stored values are exactly what the
    // optimizer will produce.
    for (auto& m : maps)
      for (auto& v : m.data()) v = sigmoid(logit(v));
  }
  SolutionSet set{std::move(triples), ConfidenceMaps(config.fusion_mode, std::move(maps))};
  return set;
}

// Flat parameter vector layout: knots, then alpha latents, then map latents.
class ParameterLayout {
 public:
  ParameterLayout(int solutions, int pieces, int iterations, FusionMode mode,
                  int width, int height, int map_width = 0, int map_height = 0)
      : solutions_{solutions},
        pieces_{pieces},
        iterations_{iterations},
        mode_{mode},
        width_{width},
        height_{height},
        map_width_{map_width > 0 ? map_width : width},
        map_height_{map_height > 0 ? map_height : height} {}

  int solutions() const noexcept { return solutions_; }
  int pieces() const noexcept { return pieces_; }
  int iterations() const noexcept { return iterations_; }
  FusionMode mode() const noexcept { return mode_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int map_width() const noexcept { return map_width_; }
  int map_height() const noexcept { return map_height_; }
  bool maps_upsampled() const noexcept {
    return map_width_ != width_ || map_height_ != height_;
  }
  std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::size_t map_pixels() const noexcept {
    return static_cast<std::size_t>(map_width_) * map_height_;
  }
  int map_channels() const noexcept { return tonefit::map_channels(mode_); }

  std::size_t knot_count() const noexcept {
    return static_cast<std::size_t>(solutions_) * 3 * (pieces_ + 1);
  }
  std::size_t alpha_count() const noexcept {
    return static_cast<std::size_t>(solutions_) * 3 * pieces_;
  }
  std::size_t map_count() const noexcept {
    return static_cast<std::size_t>(solutions_) * map_channels() * map_pixels();
  }
  std::size_t size() const noexcept { return knot_count() + alpha_count() + map_count(); }

  std::size_t knot_offset(int i, int c) const noexcept {
    return (static_cast<std::size_t>(i) * 3 + c) * (pieces_ + 1);
  }
  std::size_t alpha_offset(int i, int c) const noexcept {
    return knot_count() + (static_cast<std::size_t>(i) * 3 + c) * pieces_;
  }
  std::size_t map_offset(int i, int c = 0) const noexcept {
    return knot_count() + alpha_count() +
           (static_cast<std::size_t>(i) * map_channels() + c) * map_pixels();
  }
  std::size_t map_begin() const noexcept { return knot_count() + alpha_count(); }

 private:
  int solutions_, pieces_, iterations_;
  FusionMode mode_;
  int width_, height_;
  int map_width_, map_height_;
};

// Layout whose maps have the set's own resolution; the image may be larger.
inline ParameterLayout layout_for(const SolutionSet& set, int width = 0, int height = 0) {
  return {set.solutions(), set.pieces(), set.iterations(), set.mode(),
          width > 0 ? width : set.maps.width(), height > 0 ? height : set.maps.height(),
          set.maps.width(), set.maps.height()};
}

inline std::vector<double> encode_parameters(const SolutionSet& set,
                                             const ParameterLayout& layout) {
  std::vector<double> p(layout.size());
  for (int i = 0; i < layout.solutions(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const PngCurve& curve = set.triples[i][c];
      std::copy(curve.knots().begin(), curve.knots().end(),
                p.begin() + static_cast<std::ptrdiff_t>(layout.knot_offset(i, c)));
      for (int m = 0; m < layout.pieces(); ++m)
        p[layout.alpha_offset(i, c) + m] = alpha_latent(curve.alphas()[m]);
    }
    for (int c = 0; c < layout.map_channels(); ++c) {
      const auto plane = set.maps[i].plane(c);
      const std::size_t off = layout.map_offset(i, c);
      for (std::size_t q = 0; q < plane.size(); ++q) {
        p[off + q] = layout.mode() == FusionMode::Plain ? plane[q] : logit(plane[q]);
      }
    }
  }
  return p;
}

inline SolutionSet decode_parameters(std::span<const double> p,
                                     const ParameterLayout& layout) {
  std::vector<CurveTriple> triples;
  triples.reserve(layout.solutions());
  for (int i = 0; i < layout.solutions(); ++i) {
    auto curve = [&](int c) {
      const auto k = p.subspan(layout.knot_offset(i, c), layout.pieces() + 1);
      std::vector<double> alphas(layout.pieces());
      for (int m = 0; m < layout.pieces(); ++m)
        alphas[m] = std::tanh(p[layout.alpha_offset(i, c) + m]);
      return PngCurve({k.begin(), k.end()}, std::move(alphas), layout.iterations());
    };
    triples.emplace_back(curve(0), curve(1), curve(2));
  }
  std::vector<Image> maps;
  for (int i = 0; i < layout.solutions(); ++i) {
    Image m(layout.map_width(), layout.map_height(), layout.map_channels());
    for (int c = 0; c < layout.map_channels(); ++c) {
      auto plane = m.plane(c);
      const std::size_t off = layout.map_offset(i, c);
      for (std::size_t q = 0; q < plane.size(); ++q) {
        plane[q] = layout.mode() == FusionMode::Plain ? p[off + q] : sigmoid(p[off + q]);
      }
    }
    maps.push_back(std::move(m));
  }
  return {std::move(triples), ConfidenceMaps(layout.mode(), std::move(maps))};
}

// Normalized centers at which the fit image samples the maps, one per column
// and one per row.
struct MapSampling {
  std::vector<double> x;
  std::vector<double> y;
};

inline MapSampling pixel_centers(int width, int height) {
  MapSampling s{std::vector<double>(width), std::vector<double>(height)};
  for (int i = 0; i < width; ++i) s.x[i] = (i + 0.5) / width;
  for (int i = 0; i < height; ++i) s.y[i] = (i + 0.5) / height;
  return s;
}

// Centers of the full-resolution pixels kept by a nearest-neighbour
// downsample from (full_w, full_h) to (width, height).
inline MapSampling decimated_centers(int full_w, int full_h, int width, int height) {
  auto axis = [](int full, int n) {
    std::vector<double> c(n);
    const double scale = static_cast<double>(full) / n;
    for (int i = 0; i < n; ++i) {
      const int k = std::min(static_cast<int>((i + 0.5) * scale), full - 1);
      c[i] = (k + 0.5) / full;
    }
    return c;
  };
  return {axis(full_w, width), axis(full_h, height)};
}

struct LossBreakdown {
  double total;
  double l2;
  double ssim_loss;
};

// Objective over a flat parameter vector for one (input, reference) pair.
class PairObjective {
 public:
  // Without `sampling` the fit pixels sit at their own pixel centers.
  PairObjective(const Image& input, const Image& reference, ParameterLayout layout,
                double ssim_weight, bool freeze_maps = false,
                std::optional<MapSampling> sampling = std::nullopt)
      : input_{input},
        reference_{reference},
        layout_{layout},
        ssim_weight_{ssim_weight},
        freeze_maps_{freeze_maps},
        resample_maps_{layout.maps_upsampled() || sampling.has_value()},
        window_{fitting_window(input)} {
    require_same_shape(input, reference, "fit");
    if (input.channels() != 3) throw DimensionMismatch("fit images must have 3 channels");
    if (input.width() != layout.width() || input.height() != layout.height()) {
      throw DimensionMismatch("parameter layout does not match the image size");
    }
    const std::size_t px = layout_.pixels();
    piece_.resize(3 * px);
    local_.resize(3 * px);
    for (int c = 0; c < 3; ++c) {
      const auto plane = input.plane(c);
      for (std::size_t q = 0; q < px; ++q) {
        const auto pos = locate_piece(plane[q], layout_.pieces());
        piece_[c * px + q] = pos.piece;
        local_[c * px + q] = pos.local;
      }
    }
    const std::size_t slots = static_cast<std::size_t>(layout_.solutions()) * 3 * px;
    v_.resize(slots);
    f_.resize(slots);
    df_.resize(slots);
    map_values_.resize(layout_.map_count());
    if (resample_maps_) {
      const MapSampling at = sampling ? *std::move(sampling)
                                      : pixel_centers(layout_.width(), layout_.height());
      if (at.x.size() != static_cast<std::size_t>(layout_.width()) ||
          at.y.size() != static_cast<std::size_t>(layout_.height())) {
        throw DimensionMismatch("map sampling does not match the image size");
      }
      taps_x_ = detail::bilinear_taps_at(at.x, layout_.map_width());
      taps_y_ = detail::bilinear_taps_at(at.y, layout_.map_height());
      map_full_.resize(static_cast<std::size_t>(layout_.solutions()) * layout_.map_channels() * px);
    }
    output_ = Image(input.width(), input.height(), 3);
  }

  const ParameterLayout& layout() const noexcept { return layout_; }
  int ssim_window() const noexcept { return window_; }

  // Loss at p; fills grad (same size as p) when it is non-empty.
  LossBreakdown evaluate(std::span<const double> p, std::span<double> grad = {}) {
    if (p.size() != layout_.size()) throw std::invalid_argument("parameter size mismatch");
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != p.size()) {
      throw std::invalid_argument("gradient size mismatch");
    }
    forward(p, want_grad);

    const double l2 = l2_loss(output_, reference_);
    double ssim_value;
    Image g_out;
    if (want_grad) {
      g_out = l2_gradient(output_, reference_);
      if (ssim_weight_ > 0.0) {
        auto s = ssim_with_gradient(output_, reference_, window_);
        ssim_value = s.value;
        auto gd = g_out.data();
        const auto gs = s.gradient.data();
        for (std::size_t q = 0; q < gd.size(); ++q) gd[q] -= ssim_weight_ * gs[q];
      } else {
        ssim_value = ssim(output_, reference_, window_);
      }
    } else {
      ssim_value = ssim(output_, reference_, window_);
    }
    const LossBreakdown loss{l2 + ssim_weight_ * (1.0 - ssim_value), l2,
                             1.0 - ssim_value};
    if (want_grad) backward(p, g_out, grad);
    return loss;
  }

  // Fused output at the most recent evaluate() call.
  const Image& output() const noexcept { return output_; }

 private:
  void forward(std::span<const double> p, bool want_grad) {
    const std::size_t px = layout_.pixels();
    const int pieces = layout_.pieces();
    const int iterations = layout_.iterations();
    const bool plain = layout_.mode() == FusionMode::Plain;

    for (std::size_t q = 0; q < map_values_.size(); ++q) {
      const double z = p[layout_.map_begin() + q];
      map_values_[q] = plain ? z : sigmoid(z);
    }
    if (resample_maps_) {
      const std::size_t planes = map_full_.size() / px;
      for (std::size_t k = 0; k < planes; ++k) {
        detail::resample_plane(
            std::span<const double>(map_values_).subspan(k * layout_.map_pixels(), layout_.map_pixels()),
            layout_.map_width(), layout_.map_height(),
            std::span<double>(map_full_).subspan(k * px, px), layout_.width(), layout_.height(),
            taps_x_, taps_y_, scratch_);
      }
    }
    const double* full = resample_maps_ ? map_full_.data() : map_values_.data();
    std::fill(output_.data().begin(), output_.data().end(), 0.0);
    std::vector<double> alphas(pieces);

    for (int i = 0; i < layout_.solutions(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const double* knots = p.data() + layout_.knot_offset(i, c);
        for (int m = 0; m < pieces; ++m) alphas[m] = std::tanh(p[layout_.alpha_offset(i, c) + m]);
        const std::size_t slot = (static_cast<std::size_t>(i) * 3 + c) * px;
        const double* map =
            full + (static_cast<std::size_t>(i) * layout_.map_channels() + (plain ? c : 0)) * px;
        auto out = output_.plane(c);
        const int* piece = piece_.data() + c * px;
        const double* local = local_.data() + c * px;
        for (std::size_t q = 0; q < px; ++q) {
          const int j = piece[q];
          const double a = alphas[j];
          double f = local[q];
          double df = 0.0;
          if (want_grad) {
            for (int t = 0; t < iterations; ++t) {
              const double g = f * (1.0 - f);
              df = df * (1.0 + a - 2.0 * a * f) + g;
              f = f + a * g;
            }
            f_[slot + q] = f;
            df_[slot + q] = df;
          } else {
            for (int t = 0; t < iterations; ++t) f = f + a * f * (1.0 - f);
          }
          const double v = knots[j] + (knots[j + 1] - knots[j]) * f;
          v_[slot + q] = v;
          out[q] += v * map[q];
        }
      }
    }
  }

  void backward(std::span<const double> p, const Image& g_out, std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const std::size_t px = layout_.pixels();
    const int pieces = layout_.pieces();
    const bool plain = layout_.mode() == FusionMode::Plain;
    const bool upsampled = resample_maps_;
    std::vector<double> alphas(pieces);
    const double* full = upsampled ? map_full_.data() : map_values_.data();
    // Map gradients are gathered per pixel first when maps are upsampled.
    if (upsampled && !freeze_maps_) g_full_.assign(map_full_.size(), 0.0);

    for (int i = 0; i < layout_.solutions(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const double* knots = p.data() + layout_.knot_offset(i, c);
        double* g_knots = grad.data() + layout_.knot_offset(i, c);
        double* g_alpha = grad.data() + layout_.alpha_offset(i, c);
        for (int m = 0; m < pieces; ++m) alphas[m] = std::tanh(p[layout_.alpha_offset(i, c) + m]);
        const std::size_t slot = (static_cast<std::size_t>(i) * 3 + c) * px;
        const std::size_t map_off =
            (static_cast<std::size_t>(i) * layout_.map_channels() + (plain ? c : 0)) * px;
        const double* map = full + map_off;
        double* g_map = upsampled ? g_full_.data() + map_off
                                  : grad.data() + layout_.map_begin() + map_off;
        const auto g_r = g_out.plane(c);
        const int* piece = piece_.data() + c * px;

        for (std::size_t q = 0; q < px; ++q) {
          const double gv = g_r[q] * map[q];
          const int j = piece[q];
          const double f = f_[slot + q];
          g_knots[j] += gv * (1.0 - f);
          g_knots[j + 1] += gv * f;
          g_alpha[j] += gv * (knots[j + 1] - knots[j]) * df_[slot + q];
          if (!freeze_maps_) g_map[q] += g_r[q] * v_[slot + q];
        }
        for (int m = 0; m < pieces; ++m) g_alpha[m] *= 1.0 - alphas[m] * alphas[m];
      }
    }
    if (upsampled && !freeze_maps_) {
      const std::size_t planes = map_full_.size() / px;
      for (std::size_t k = 0; k < planes; ++k) {
        detail::resample_plane_adjoint(
            std::span<const double>(g_full_).subspan(k * px, px), layout_.width(),
            layout_.height(),
            grad.subspan(layout_.map_begin() + k * layout_.map_pixels(), layout_.map_pixels()),
            layout_.map_width(), layout_.map_height(), taps_x_, taps_y_, scratch_);
      }
    }
    if (!plain && !freeze_maps_) {
      // Chain through the sigmoid.
      for (std::size_t q = 0; q < map_values_.size(); ++q) {
        const double s = map_values_[q];
        grad[layout_.map_begin() + q] *= s * (1.0 - s);
      }
    }
  }

  Image input_;
  Image reference_;
  ParameterLayout layout_;
  double ssim_weight_;
  bool freeze_maps_;
  bool resample_maps_;
  int window_;
  std::vector<int> piece_;
  std::vector<double> local_;
  std::vector<double> v_, f_, df_;
  std::vector<double> map_values_;
  std::vector<detail::BilinearTap> taps_x_, taps_y_;
  std::vector<double> map_full_, g_full_, scratch_;
  Image output_;
};

// Euclidean projection of a sequence onto nondecreasing sequences
// (pool-adjacent-violators).
inline void project_nondecreasing(std::span<double> values) {
  std::vector<double> level;
  std::vector<std::size_t> width;
  for (double v : values) {
    level.push_back(v);
    width.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] > level.back()) {
      const std::size_t w = width.back() + width[width.size() - 2];
      const double merged =
          (level.back() * width.back() + level[level.size() - 2] * width[width.size() - 2]) / w;
      level.pop_back();
      width.pop_back();
      level.back() = merged;
      width.back() = w;
    }
  }
  std::size_t k = 0;
  for (std::size_t b = 0; b < level.size(); ++b)
    for (std::size_t j = 0; j < width[b]; ++j) values[k++] = level[b];
}

struct TraceEntry {
  int step;
  double total;
  double l2;
  double ssim_loss;
};

struct FitTrace {
  // Every `record_every` steps; the last entry reports the returned solution.
  std::vector<TraceEntry> entries;
  QualityReport final{0.0, 0.0};
};

class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, FitTrace trace)
      : std::runtime_error(what), trace_{std::move(trace)} {}
  const FitTrace& trace() const noexcept { return trace_; }

 private:
  FitTrace trace_;
};

struct FitProgress {
  int step;
  int steps;
  double loss;
  double psnr;  // of the unclamped fused output at this step
};

struct FitHooks {
  std::function<void(const FitProgress&)> on_progress;
  std::stop_token stop;
};

struct FitResult {
  SolutionSet set;
  FitTrace trace;
  Image output;  // clamped fused result at full resolution
};

namespace detail {

inline FitResult run_fit(const Image& input, const Image& reference,
                         const FitConfig& config, const FitHooks& hooks) {
  config.validate();
  require_same_shape(input, reference, "fit");
  const Image fit_input = downsample(input, config.fit_scale, ResizeMethod::Nearest);
  const Image fit_reference = downsample(reference, config.fit_scale, ResizeMethod::Nearest);

  const Extent grid =
      map_grid_extent(fit_input.width(), fit_input.height(), config.map_resolution);
  const SolutionSet init = init_solution_set(config, grid.width, grid.height);
  const ParameterLayout layout = layout_for(init, fit_input.width(), fit_input.height());
  std::optional<MapSampling> sampling;
  if (config.fit_scale > 1) {
    sampling = decimated_centers(input.width(), input.height(), fit_input.width(),
                                 fit_input.height());
  }
  PairObjective objective(fit_input, fit_reference, layout, config.ssim_weight,
                          config.freeze_maps, std::move(sampling));
  std::vector<double> params = encode_parameters(init, layout);
  std::vector<double> grad(params.size());
  std::vector<std::uint8_t> mask(params.size(), 1);
  if (config.freeze_maps) {
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(layout.map_begin()), mask.end(), 0);
  }

  Adam adam(params.size(), {.learning_rate = config.learning_rate});
  std::vector<double> best = params;
  LossBreakdown best_loss{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  FitTrace trace;

  int step = 0;
  for (;; ++step) {
    const LossBreakdown loss = objective.evaluate(params, grad);
    if (!std::isfinite(loss.total)) {
      throw Diverged("fit diverged at step " + std::to_string(step), std::move(trace));
    }
    if (loss.total < best_loss.total) {
      best_loss = loss;
      best = params;
    }
    const bool last = step == config.steps || hooks.stop.stop_requested();
    if (step % config.record_every == 0 && !last) {
      trace.entries.push_back({step, loss.total, loss.l2, loss.ssim_loss});
      if (hooks.on_progress) {
        hooks.on_progress({step, config.steps, loss.total,
                           loss.l2 > 0.0 ? -10.0 * std::log10(loss.l2)
                                         : std::numeric_limits<double>::infinity()});
      }
    }
    if (last) break;
    adam.step(params, grad, mask);
    if (config.monotone_knots) {
      for (int i = 0; i < layout.solutions(); ++i)
        for (int c = 0; c < 3; ++c)
          project_nondecreasing(std::span<double>(params).subspan(
              layout.knot_offset(i, c), layout.pieces() + 1));
    }
  }
  trace.entries.push_back({step, best_loss.total, best_loss.l2, best_loss.ssim_loss});

  SolutionSet set = decode_parameters(best, layout);
  if (set.maps.width() != input.width() || set.maps.height() != input.height()) {
    std::vector<Image> maps;
    for (const Image& m : set.maps.maps())
      maps.push_back(resize(m, input.width(), input.height(), ResizeMethod::Bilinear));
    set.maps = ConfidenceMaps(set.mode(), std::move(maps));
  }
  Image output = clamped(render(set, input));
  trace.final = quality_report(output, reference);
  if (hooks.on_progress) {
    hooks.on_progress({step, config.steps, best_loss.total, trace.final.psnr});
  }
  return {std::move(set), std::move(trace), std::move(output)};
}

}  // namespace detail

inline FitResult fit_pair(const Image& input, const Image& reference,
                          const FitConfig& config, const FitHooks& hooks = {}) {
  return detail::run_fit(input, reference, config, hooks);
}

// Single solution with its map frozen at 1: curves only.
inline FitResult fit_global_only(const Image& input, const Image& reference,
                                 FitConfig config, const FitHooks& hooks = {}) {
  config.solutions = 1;
  config.fusion_mode = FusionMode::Plain;
  config.freeze_maps = true;
  return detail::run_fit(input, reference, config, hooks);
}

struct GradCheckOptions {
  int trials = 100;
  double epsilon = 1e-5;
  std::uint64_t seed = 42;
  int width = 8;
  int height = 8;
  bool freeze_maps = false;
};

enum class ParameterClass { Knots = 0, AlphaLatents = 1, MapLatents = 2 };

inline const char* to_string(ParameterClass c) noexcept {
  switch (c) {
    case ParameterClass::Knots: return "knots";
    case ParameterClass::AlphaLatents: return "alpha-latents";
    case ParameterClass::MapLatents: return "map-latents";
  }
  return "?";
}

struct GradCheckReport {
  std::array<double, 3> max_relative_error{0.0, 0.0, 0.0};
  std::array<double, 3> max_abs_analytic{0.0, 0.0, 0.0};
  int trials{0};

  bool passes(double tolerance) const noexcept {
    return std::all_of(max_relative_error.begin(), max_relative_error.end(),
                       [&](double e) { return e < tolerance; });
  }
};

// Relative error with an absolute floor for near-zero gradients.
inline double relative_error(double analytic, double numeric) noexcept {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// Compares the analytic objective gradient to central finite differences on
// random problems with random shapes, modes and parameters.
inline GradCheckReport gradient_check(const GradCheckOptions& options) {
  if (options.trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  GradCheckReport report;

  for (int trial = 0; trial < options.trials; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int pieces = 1 + static_cast<int>(rng() % 7);
    const int iterations = 1 + static_cast<int>(rng() % 4);
    const FusionMode mode = (rng() % 2 == 0) ? FusionMode::Plain : FusionMode::Constrained;
    const double ssim_weight = trial % 4 == 0 ? kDefaultSsimWeight : unit(rng);

    Image input(options.width, options.height, 3);
    Image reference(options.width, options.height, 3);
    for (auto& v : input.data()) v = unit(rng);
    for (auto& v : reference.data()) v = unit(rng);

    // A third of the trials put the maps on a coarser grid.
    int map_w = options.width, map_h = options.height;
    if (trial % 3 == 2) {
      map_w = 1 + static_cast<int>(rng() % options.width);
      map_h = 1 + static_cast<int>(rng() % options.height);
    }
    const ParameterLayout layout(n, pieces, iterations, mode, options.width, options.height,
                                 map_w, map_h);
    std::vector<double> p(layout.size());
    for (std::size_t q = 0; q < layout.knot_count(); ++q) p[q] = -0.2 + 1.4 * unit(rng);
    for (std::size_t q = layout.knot_count(); q < layout.map_begin(); ++q) p[q] = normal(rng);
    for (std::size_t q = layout.map_begin(); q < p.size(); ++q) {
      p[q] = mode == FusionMode::Plain ? unit(rng) * 2.0 / n : 1.5 * normal(rng);
    }

    // Another third samples the maps as a 2x decimated fit would.
    std::optional<MapSampling> sampling;
    if (trial % 3 == 1) {
      sampling = decimated_centers(2 * options.width, 2 * options.height, options.width,
                                   options.height);
    }
    PairObjective objective(input, reference, layout, ssim_weight, options.freeze_maps,
                            std::move(sampling));
    std::vector<double> grad(p.size());
    objective.evaluate(p, grad);

    for (std::size_t q = 0; q < p.size(); ++q) {
      const double saved = p[q];
      p[q] = saved + options.epsilon;
      const double up = objective.evaluate(p).total;
      p[q] = saved - options.epsilon;
      const double down = objective.evaluate(p).total;
      p[q] = saved;
      double numeric = (up - down) / (2.0 * options.epsilon);
      const int cls = q < layout.knot_count() ? 0 : (q < layout.map_begin() ? 1 : 2);
      if (cls == 2 && options.freeze_maps) numeric = 0.0;
      double err = relative_error(grad[q], numeric);
      if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
      report.max_relative_error[cls] = std::max(report.max_relative_error[cls], err);
      report.max_abs_analytic[cls] = std::max(report.max_abs_analytic[cls], std::abs(grad[q]));
    }
    ++report.trials;
  }
  return report;
}

}  // namespace tonefit
