#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tonefit/curve.hpp"
#include "tonefit/fusion.hpp"
#include "tonefit/image.hpp"

namespace tonefit {

inline constexpr int kDefaultSolutions = 3;
inline constexpr int kRenderLutResolution = 4096;

// N curve triples and their confidence maps.
struct SolutionSet {
  std::vector<CurveTriple> triples;
  ConfidenceMaps maps;

  int solutions() const noexcept { return static_cast<int>(triples.size()); }
  int pieces() const noexcept { return triples.empty() ? 0 : triples[0].pieces(); }
  int iterations() const noexcept {
    return triples.empty() ? 0 : triples[0].iterations();
  }
  FusionMode mode() const noexcept { return maps.mode(); }

  void validate() const {
    if (triples.empty()) throw std::invalid_argument("solution set needs at least one curve triple");
    for (std::size_t i = 1; i < triples.size(); ++i) {
      if (triples[i].pieces() != pieces() || triples[i].iterations() != iterations()) {
        throw InvalidCurve("curve triple " + std::to_string(i) +
                           " disagrees on piece or iteration count");
      }
    }
    maps.validate();
    if (maps.count() != solutions()) {
      throw std::invalid_argument("solution set has " + std::to_string(solutions()) +
                                  " curve triples but " +
                                  std::to_string(maps.count()) + " confidence maps");
    }
  }

  friend bool operator==(const SolutionSet&, const SolutionSet&) = default;
};

// V = the triple applied per channel, exact evaluation.
inline Image apply_triple(const CurveTriple& triple, const Image& input) {
  if (input.channels() != 3) throw DimensionMismatch("input must have 3 channels");
  Image out(input.width(), input.height(), 3);
  for (int c = 0; c < 3; ++c) eval_curve_plane(triple[c], input.plane(c), out.plane(c));
  return out;
}

inline std::vector<Image> globally_adjusted(const SolutionSet& set,
                                            const Image& input) {
  std::vector<Image> out;
  out.reserve(set.triples.size());
  for (const auto& t : set.triples) out.push_back(apply_triple(t, input));
  return out;
}

// Fused output of the set on `input` (not clamped).
inline Image render(const SolutionSet& set, const Image& input) {
  return fuse(globally_adjusted(set, input), set.maps);
}

// Precomputed per-channel lookup tables for fast application.
class SolutionLuts {
 public:
  explicit SolutionLuts(const SolutionSet& set,
                        int resolution = kRenderLutResolution) {
    luts_.reserve(set.triples.size() * 3);
    for (const auto& t : set.triples)
      for (int c = 0; c < 3; ++c) luts_.emplace_back(t[c], resolution);
  }

  const CurveLut& lut(int solution, int channel) const noexcept {
    return luts_[static_cast<std::size_t>(solution) * 3 + channel];
  }

 private:
  std::vector<CurveLut> luts_;
};

// Curve application through LUTs fused with the set's maps, written into
// `out` (3 channels, input size). Rows are split across `threads` workers.
inline void render_lut(const SolutionSet& set, const SolutionLuts& luts,
                       const Image& input, Image& out, int threads = 1) {
  if (!input.same_extent(out) || out.channels() != 3 || input.channels() != 3) {
    throw DimensionMismatch("render_lut: output must match the input size");
  }
  if (input.width() != set.maps.width() || input.height() != set.maps.height()) {
    throw DimensionMismatch("render_lut: confidence maps do not match the input size");
  }
  const int n = set.solutions();
  const int width = input.width();
  auto band = [&](int y0, int y1) {
    const std::size_t begin = static_cast<std::size_t>(y0) * width;
    const std::size_t end = static_cast<std::size_t>(y1) * width;
    for (int c = 0; c < 3; ++c) {
      const auto in = input.plane(c);
      auto dst = out.plane(c);
      for (std::size_t p = begin; p < end; ++p) dst[p] = 0.0;
      for (int i = 0; i < n; ++i) {
        const CurveLut& lut = luts.lut(i, c);
        const Image& map = set.maps[i];
        const auto w = map.plane(map.channels() == 3 ? c : 0);
        for (std::size_t p = begin; p < end; ++p) dst[p] += lut(in[p]) * w[p];
      }
    }
  };
  threads = std::clamp(threads, 1, input.height());
  if (threads == 1) {
    band(0, input.height());
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    const int y0 = input.height() * t / threads;
    const int y1 = input.height() * (t + 1) / threads;
    workers.emplace_back(band, y0, y1);
  }
}

inline Image render_lut(const SolutionSet& set, const Image& input, int threads = 1) {
  const SolutionLuts luts(set);
  Image out(input.width(), input.height(), 3);
  render_lut(set, luts, input, out, threads);
  return out;
}

}  // namespace tonefit
