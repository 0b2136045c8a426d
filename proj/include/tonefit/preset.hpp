#pragma once

// Preset directory layout:
//
//   preset.json   format_version, n_solutions, pieces, iterations, fusion_mode,
//                 width, height, curves[N][3]{knots, alphas}, maps[N],
//                 map_range[N] = [lo, hi]
//   map_<i>.png   16-bit confidence map; gray for constrained, RGB for plain.
//                 Stored value t in [0,1] decodes to lo*(1-t) + hi*t.

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tonefit/curve.hpp"
#include "tonefit/fusion.hpp"
#include "tonefit/image.hpp"
#include "tonefit/imageio.hpp"
#include "tonefit/solution_set.hpp"

namespace tonefit {

inline constexpr int kPresetFormatVersion = 1;
inline constexpr const char* kManifestName = "preset.json";

class PresetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ManifestParseError : public PresetError {
 public:
  using PresetError::PresetError;
};
class VersionMismatch : public PresetError {
 public:
  using PresetError::PresetError;
};
class InconsistentPreset : public PresetError {
 public:
  using PresetError::PresetError;
};
class MissingSidecar : public PresetError {
 public:
  using PresetError::PresetError;
};

inline std::string map_file_name(int i) { return "map_" + std::to_string(i) + ".png"; }

struct MapRange {
  double lo;
  double hi;
};

inline MapRange stored_range(const Image& map, FusionMode mode) {
  if (mode == FusionMode::Constrained) return {0.0, 1.0};
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  return {*lo, *hi};
}

// Manifest for a solution set (also the body of the service's curve API).
inline nlohmann::json to_manifest(const SolutionSet& set) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& triple : set.triples) {
    nlohmann::json channels = nlohmann::json::array();
    for (int c = 0; c < 3; ++c) {
      const PngCurve& curve = triple[c];
      channels.push_back({{"knots", std::vector<double>(curve.knots().begin(), curve.knots().end())},
                          {"alphas", std::vector<double>(curve.alphas().begin(), curve.alphas().end())}});
    }
    curves.push_back(std::move(channels));
  }
  nlohmann::json maps = nlohmann::json::array();
  nlohmann::json ranges = nlohmann::json::array();
  for (int i = 0; i < set.solutions(); ++i) {
    maps.push_back(map_file_name(i));
    const MapRange r = stored_range(set.maps[i], set.mode());
    ranges.push_back({r.lo, r.hi});
  }
  return {{"format_version", kPresetFormatVersion},
          {"n_solutions", set.solutions()},
          {"pieces", set.pieces()},
          {"iterations", set.iterations()},
          {"fusion_mode", to_string(set.mode())},
          {"width", set.maps.width()},
          {"height", set.maps.height()},
          {"curves", std::move(curves)},
          {"maps", std::move(maps)},
          {"map_range", std::move(ranges)}};
}

namespace detail {

template <typename T>
T manifest_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw InconsistentPreset(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InconsistentPreset(std::string("field '") + key + "' has the wrong type");
  }
}

inline std::vector<double> number_array(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw InconsistentPreset(path + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw InconsistentPreset(path + "[" + std::to_string(i) + "]: expected a number");
    }
    out.push_back(j[i].get<double>());
  }
  return out;
}

}  // namespace detail

struct ManifestHeader {
  int solutions;
  int pieces;
  int iterations;
  FusionMode mode;
  int width;
  int height;
};

inline ManifestHeader parse_manifest_header(const nlohmann::json& j) {
  if (!j.is_object()) throw ManifestParseError("manifest must be a JSON object");
  const int version = detail::manifest_field<int>(j, "format_version");
  if (version != kPresetFormatVersion) {
    throw VersionMismatch("unsupported preset format_version " + std::to_string(version) +
                          " (expected " + std::to_string(kPresetFormatVersion) + ")");
  }
  ManifestHeader h{};
  h.solutions = detail::manifest_field<int>(j, "n_solutions");
  h.pieces = detail::manifest_field<int>(j, "pieces");
  h.iterations = detail::manifest_field<int>(j, "iterations");
  try {
    h.mode = parse_fusion_mode(detail::manifest_field<std::string>(j, "fusion_mode"));
  } catch (const std::invalid_argument& e) {
    throw InconsistentPreset(std::string("fusion_mode: ") + e.what());
  }
  h.width = detail::manifest_field<int>(j, "width");
  h.height = detail::manifest_field<int>(j, "height");
  if (h.solutions < 1) throw InconsistentPreset("n_solutions: must be >= 1");
  if (h.pieces < 1) throw InconsistentPreset("pieces: must be >= 1");
  if (h.iterations < 1) throw InconsistentPreset("iterations: must be >= 1");
  if (h.width < 1 || h.height < 1) throw InconsistentPreset("width/height: must be >= 1");
  return h;
}

// Curve triples from a manifest; error messages name the offending field.
inline std::vector<CurveTriple> parse_manifest_curves(const nlohmann::json& j,
                                                      const ManifestHeader& h) {
  if (!j.contains("curves") || !j["curves"].is_array()) {
    throw InconsistentPreset("curves: missing or not an array");
  }
  const auto& curves = j["curves"];
  if (static_cast<int>(curves.size()) != h.solutions) {
    throw InconsistentPreset("curves: expected " + std::to_string(h.solutions) +
                             " entries, got " + std::to_string(curves.size()));
  }
  std::vector<CurveTriple> triples;
  for (int i = 0; i < h.solutions; ++i) {
    const std::string base = "curves[" + std::to_string(i) + "]";
    if (!curves[i].is_array() || curves[i].size() != 3) {
      throw InconsistentPreset(base + ": expected 3 channel curves");
    }
    std::vector<PngCurve> channel;
    for (int c = 0; c < 3; ++c) {
      const std::string path = base + "[" + std::to_string(c) + "]";
      const auto& entry = curves[i][c];
      if (!entry.is_object() || !entry.contains("knots") || !entry.contains("alphas")) {
        throw InconsistentPreset(path + ": expected {knots, alphas}");
      }
      auto knots = detail::number_array(entry["knots"], path + ".knots");
      auto alphas = detail::number_array(entry["alphas"], path + ".alphas");
      if (static_cast<int>(knots.size()) != h.pieces + 1) {
        throw InconsistentPreset(path + ".knots: expected " + std::to_string(h.pieces + 1) +
                                 " values, got " + std::to_string(knots.size()));
      }
      if (static_cast<int>(alphas.size()) != h.pieces) {
        throw InconsistentPreset(path + ".alphas: expected " + std::to_string(h.pieces) +
                                 " values, got " + std::to_string(alphas.size()));
      }
      for (std::size_t m = 0; m < alphas.size(); ++m) {
        if (!(alphas[m] >= -1.0 && alphas[m] <= 1.0)) {
          throw InconsistentPreset(path + ".alphas[" + std::to_string(m) + "]: alpha " +
                                   nlohmann::json(alphas[m]).dump() + " outside [-1,1]");
        }
      }
      try {
        channel.emplace_back(std::move(knots), std::move(alphas), h.iterations);
      } catch (const InvalidCurve& e) {
        throw InconsistentPreset(path + ": " + e.what());
      }
    }
    triples.emplace_back(channel[0], channel[1], channel[2]);
  }
  return triples;
}

inline std::vector<MapRange> parse_map_ranges(const nlohmann::json& j, const ManifestHeader& h) {
  if (!j.contains("map_range") || !j["map_range"].is_array() ||
      static_cast<int>(j["map_range"].size()) != h.solutions) {
    throw InconsistentPreset("map_range: expected " + std::to_string(h.solutions) + " [lo, hi] pairs");
  }
  std::vector<MapRange> out;
  for (int i = 0; i < h.solutions; ++i) {
    const auto r = detail::number_array(j["map_range"][i], "map_range[" + std::to_string(i) + "]");
    if (r.size() != 2 || !(r[0] <= r[1])) {
      throw InconsistentPreset("map_range[" + std::to_string(i) + "]: expected [lo, hi] with lo <= hi");
    }
    out.push_back({r[0], r[1]});
  }
  return out;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) {
    throw MissingSidecar("preset manifest not found: " + path.string());
  }
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestParseError(path.string() + ": " + e.what());
  }
}

inline void save_preset(const SolutionSet& set, const std::filesystem::path& dir) {
  set.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create preset directory '" + dir.string() + "': " + ec.message());

  const nlohmann::json manifest = to_manifest(set);
  for (int i = 0; i < set.solutions(); ++i) {
    const Image& map = set.maps[i];
    const MapRange r = stored_range(map, set.mode());
    Image stored(map.width(), map.height(), map.channels());
    const double span = r.hi - r.lo;
    const auto src = map.data();
    auto dst = stored.data();
    for (std::size_t q = 0; q < src.size(); ++q) {
      dst[q] = span > 0.0 ? (src[q] - r.lo) / span : 0.0;
    }
    save_png(stored, dir / map_file_name(i), 16);
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / kManifestName,
             {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline SolutionSet load_preset(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  const ManifestHeader h = parse_manifest_header(manifest);
  auto triples = parse_manifest_curves(manifest, h);
  const auto ranges = parse_map_ranges(manifest, h);
  if (!manifest.contains("maps") || !manifest["maps"].is_array() ||
      static_cast<int>(manifest["maps"].size()) != h.solutions) {
    throw InconsistentPreset("maps: expected " + std::to_string(h.solutions) + " file names");
  }

  std::vector<Image> maps;
  const int channels = map_channels(h.mode);
  for (int i = 0; i < h.solutions; ++i) {
    if (!manifest["maps"][i].is_string()) {
      throw InconsistentPreset("maps[" + std::to_string(i) + "]: expected a file name");
    }
    const std::string name = manifest["maps"][i].get<std::string>();
    const std::filesystem::path file = dir / std::filesystem::path(name).filename();
    if (!std::filesystem::exists(file)) {
      throw MissingSidecar("confidence map sidecar missing: " + file.string());
    }
    const Image stored = load_png(file);
    if (stored.width() != h.width || stored.height() != h.height) {
      throw InconsistentPreset("maps[" + std::to_string(i) + "]: size " +
                               std::to_string(stored.width()) + "x" +
                               std::to_string(stored.height()) + " does not match manifest");
    }
    Image map(h.width, h.height, channels);
    const MapRange r = ranges[i];
    for (int c = 0; c < channels; ++c) {
      const auto src = stored.plane(c);
      auto dst = map.plane(c);
      for (std::size_t q = 0; q < src.size(); ++q) {
        dst[q] = std::clamp(r.lo * (1.0 - src[q]) + r.hi * src[q], r.lo, r.hi);
      }
    }
    maps.push_back(std::move(map));
  }
  SolutionSet set{std::move(triples), ConfidenceMaps(h.mode, std::move(maps))};
  set.validate();
  return set;
}

enum class MapPolicy { Stored, Uniform };

inline MapPolicy parse_map_policy(const std::string& text) {
  if (text == "stored") return MapPolicy::Stored;
  if (text == "uniform") return MapPolicy::Uniform;
  throw std::invalid_argument("unknown map policy '" + text + "' (expected stored or uniform)");
}

// Maps of `set` brought to the given size: stored maps resized bilinearly,
// or uniform 1/N maps.
inline ConfidenceMaps maps_for(const SolutionSet& set, int width, int height,
                               MapPolicy policy) {
  if (policy == MapPolicy::Uniform) {
    return ConfidenceMaps::uniform(set.mode(), set.solutions(), width, height,
                                   1.0 / set.solutions());
  }
  if (set.maps.width() == width && set.maps.height() == height) return set.maps;
  std::vector<Image> maps;
  for (const Image& m : set.maps.maps()) maps.push_back(resize(m, width, height));
  return {set.mode(), std::move(maps)};
}

inline Image apply_preset(const Image& image, const SolutionSet& set,
                          MapPolicy policy = MapPolicy::Uniform) {
  const ConfidenceMaps maps = maps_for(set, image.width(), image.height(), policy);
  return clamped(fuse(globally_adjusted(set, image), maps));
}

}  // namespace tonefit
