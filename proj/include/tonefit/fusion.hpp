#pragma once

// Confidence-map fusion of N globally adjusted results.
//
//   Plain:        R = sum_i V_i * C_i, per channel, maps unconstrained.
//   Constrained:  one-channel maps in [0,1], broadcast over RGB.
//   Interpolate:  C_ai = C_i w_i / (sum_j C_j w_j + eps),  R~ = sum_i V_i * C_ai.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tonefit/image.hpp"

namespace tonefit {

inline constexpr double kFusionEpsilon = 1e-8;

enum class FusionMode { Plain, Constrained };

inline const char* to_string(FusionMode mode) noexcept {
  return mode == FusionMode::Plain ? "plain" : "constrained";
}

inline FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "plain") return FusionMode::Plain;
  if (text == "constrained") return FusionMode::Constrained;
  throw std::invalid_argument("unknown fusion mode '" + text +
                              "' (expected plain or constrained)");
}

class ModeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline int map_channels(FusionMode mode) noexcept {
  return mode == FusionMode::Plain ? 3 : 1;
}

class ConfidenceMaps {
 public:
  ConfidenceMaps() = default;

  ConfidenceMaps(FusionMode mode, std::vector<Image> maps)
      : mode_{mode}, maps_{std::move(maps)} {
    validate();
  }

  // N maps filled with a constant value.
  static ConfidenceMaps uniform(FusionMode mode, int count, int width,
                                int height, double value) {
    std::vector<Image> maps;
    maps.reserve(count);
    for (int i = 0; i < count; ++i)
      maps.emplace_back(width, height, map_channels(mode), value);
    return {mode, std::move(maps)};
  }

  FusionMode mode() const noexcept { return mode_; }
  int count() const noexcept { return static_cast<int>(maps_.size()); }
  int width() const noexcept { return maps_.empty() ? 0 : maps_[0].width(); }
  int height() const noexcept { return maps_.empty() ? 0 : maps_[0].height(); }
  const Image& operator[](int i) const noexcept { return maps_[i]; }
  std::span<const Image> maps() const noexcept { return maps_; }

  void validate() const {
    if (maps_.empty()) throw std::invalid_argument("at least one confidence map required");
    const int channels = map_channels(mode_);
    for (std::size_t i = 0; i < maps_.size(); ++i) {
      const Image& m = maps_[i];
      if (m.channels() != channels) {
        throw ModeMismatch("confidence map " + std::to_string(i) + " has " +
                           std::to_string(m.channels()) + " channels, " +
                           to_string(mode_) + " mode needs " +
                           std::to_string(channels));
      }
      if (!m.same_extent(maps_[0])) {
        throw DimensionMismatch("confidence maps differ in size");
      }
      for (double v : m.data()) {
        if (!std::isfinite(v)) throw std::invalid_argument("confidence map values must be finite");
        if (mode_ == FusionMode::Constrained && (v < 0.0 || v > 1.0)) {
          throw std::invalid_argument("constrained confidence map " +
                                      std::to_string(i) +
                                      " has a value outside [0,1]");
        }
      }
    }
  }

  friend bool operator==(const ConfidenceMaps&, const ConfidenceMaps&) = default;

 private:
  FusionMode mode_{FusionMode::Plain};
  std::vector<Image> maps_;
};

class InterpolationWeights {
 public:
  explicit InterpolationWeights(std::vector<double> weights)
      : weights_{std::move(weights)} {
    if (weights_.empty()) throw std::invalid_argument("at least one weight required");
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
        throw std::invalid_argument("weight " + std::to_string(i) +
                                    " must be a finite positive number");
      }
    }
  }

  int count() const noexcept { return static_cast<int>(weights_.size()); }
  std::span<const double> values() const noexcept { return weights_; }

  // Weights divided by the largest and rounded to single precision. Scaling
  // every weight by the same factor leaves this vector unchanged, which makes
  // interpolation results bitwise-invariant under uniform rescaling.
  std::vector<double> canonical() const {
    const double top = *std::max_element(weights_.begin(), weights_.end());
    std::vector<double> out(weights_.size());
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out[i] = static_cast<double>(static_cast<float>(weights_[i] / top));
    }
    return out;
  }

 private:
  std::vector<double> weights_;
};

namespace detail {

inline void check_solutions(std::span<const Image> solutions,
                            const ConfidenceMaps& maps) {
  if (solutions.empty()) throw std::invalid_argument("fusion needs at least one solution");
  if (static_cast<int>(solutions.size()) != maps.count()) {
    throw DimensionMismatch("solution count " + std::to_string(solutions.size()) +
                            " != map count " + std::to_string(maps.count()));
  }
  for (const Image& v : solutions) {
    if (v.channels() != 3) throw DimensionMismatch("solutions must have 3 channels");
    if (!v.same_extent(solutions[0]) || v.width() != maps.width() ||
        v.height() != maps.height()) {
      throw DimensionMismatch("solution and map sizes differ");
    }
  }
}

}  // namespace detail

// R = sum_i V_i * C_i for either mode; constrained maps broadcast over RGB.
inline Image fuse(std::span<const Image> solutions, const ConfidenceMaps& maps) {
  detail::check_solutions(solutions, maps);
  const Image& first = solutions[0];
  Image out(first.width(), first.height(), 3, 0.0);
  const std::size_t plane = first.plane_size();
  for (std::size_t i = 0; i < solutions.size(); ++i) {
    const Image& map = maps[static_cast<int>(i)];
    for (int c = 0; c < 3; ++c) {
      auto v = solutions[i].plane(c);
      auto w = map.plane(map.channels() == 3 ? c : 0);
      auto r = out.plane(c);
      for (std::size_t p = 0; p < plane; ++p) r[p] += v[p] * w[p];
    }
  }
  return out;
}

inline Image fuse_plain(std::span<const Image> solutions,
                        const ConfidenceMaps& maps) {
  if (maps.mode() != FusionMode::Plain) {
    throw ModeMismatch("fuse_plain requires plain-mode confidence maps");
  }
  return fuse(solutions, maps);
}

inline ConfidenceMaps normalize_maps(const ConfidenceMaps& maps) {
  if (maps.mode() != FusionMode::Constrained) {
    throw ModeMismatch("normalize_maps requires constrained-mode confidence maps");
  }
  const int n = maps.count();
  const std::size_t plane = maps[0].plane_size();
  std::vector<Image> out(maps.maps().begin(), maps.maps().end());
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += maps[i].data()[p];
    const double denom = sum + kFusionEpsilon;
    for (int i = 0; i < n; ++i) out[i].data()[p] = maps[i].data()[p] / denom;
  }
  return {FusionMode::Constrained, std::move(out)};
}

// Per-pixel adjusted maps C_ai of the weighted interpolation.
inline ConfidenceMaps adjusted_maps(const ConfidenceMaps& maps,
                                    const InterpolationWeights& weights) {
  if (maps.mode() != FusionMode::Constrained) {
    throw ModeMismatch("interpolation requires constrained mode");
  }
  if (weights.count() != maps.count()) {
    throw std::invalid_argument("expected " + std::to_string(maps.count()) +
                                " weights, got " + std::to_string(weights.count()));
  }
  const auto w = weights.canonical();
  const int n = maps.count();
  const std::size_t plane = maps[0].plane_size();
  std::vector<Image> out(maps.maps().begin(), maps.maps().end());
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += maps[i].data()[p] * w[i];
    const double denom = sum + kFusionEpsilon;
    for (int i = 0; i < n; ++i)
      out[i].data()[p] = maps[i].data()[p] * w[i] / denom;
  }
  return {FusionMode::Constrained, std::move(out)};
}

inline Image interpolate(std::span<const Image> solutions,
                         const ConfidenceMaps& maps,
                         const InterpolationWeights& weights) {
  return fuse(solutions, adjusted_maps(maps, weights));
}

}  // namespace tonefit
