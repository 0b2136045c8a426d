#pragma once

// HTTP session service: upload an image, fit in the background, preview
// weighted interpolations, edit curves, export presets.
//
// Needs cpp-httplib on the include path and links OpenSSL (libcrypto) for
// session tokens and base64.

#include <httplib.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tonefit/fusion.hpp"
#include "tonefit/imageio.hpp"
#include "tonefit/optimize.hpp"
#include "tonefit/preset.hpp"
#include "tonefit/solution_set.hpp"
#include "tonefit/zip.hpp"

namespace tonefit::service {

using Clock = std::chrono::steady_clock;

inline constexpr std::size_t kMaxUploadBytes = 64u << 20;

struct ServiceOptions {
  std::string cors_origin;  // empty: no CORS headers
  std::chrono::seconds idle_timeout{3600};
  std::size_t max_body_bytes = kMaxUploadBytes;
  std::function<Clock::time_point()> now = [] { return Clock::now(); };
};

// 128 random bits from the OpenSSL CSPRNG, hex encoded.
inline std::string new_session_id() {
  unsigned char bytes[16];
  if (RAND_bytes(bytes, sizeof bytes) != 1) throw std::runtime_error("RAND_bytes failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id;
  for (unsigned char b : bytes) {
    id.push_back(kHex[b >> 4]);
    id.push_back(kHex[b & 15]);
  }
  return id;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

// Whitespace is ignored; anything else that is not canonical padded base64
// yields nullopt.
inline std::optional<std::vector<std::uint8_t>> base64_decode(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char ch : text) {
    if (ch != ' ' && ch != '\n' && ch != '\r' && ch != '\t') clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) return std::nullopt;
  if (clean.empty()) return std::vector<std::uint8_t>{};
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) return std::nullopt;
  std::size_t padding = 0;
  if (clean.back() == '=') ++padding;
  if (clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

// Per-channel stretch of the 1st..99th percentile range to [0,1]; stands in
// for a reference when the client sends none.
inline Image auto_contrast(const Image& src) {
  Image out = src;
  for (int c = 0; c < src.channels(); ++c) {
    std::vector<double> sorted(src.plane(c).begin(), src.plane(c).end());
    std::sort(sorted.begin(), sorted.end());
    auto rank = [&](double p) {
      const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(sorted.size() - 1)));
      return sorted[k];
    };
    const double lo = rank(0.01);
    const double hi = rank(0.99);
    if (!(hi > lo)) continue;
    for (auto& v : out.plane(c)) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  }
  return out;
}

enum class JobState { Idle, Running, Done, Error };

inline const char* to_string(JobState s) noexcept {
  switch (s) {
    case JobState::Idle: return "idle";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Error: return "error";
  }
  return "?";
}

struct FitSnapshot {
  JobState state = JobState::Idle;
  double progress = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

class Session {
 public:
  Session(std::string id, Image source, Clock::time_point now)
      : id_{std::move(id)}, source_{std::move(source)}, created_{now}, last_used_{now} {}

  const std::string& id() const noexcept { return id_; }
  const Image& source() const noexcept { return source_; }
  Clock::time_point created() const noexcept { return created_; }

  void touch(Clock::time_point now) {
    std::lock_guard lock(mutex_);
    last_used_ = now;
  }
  Clock::time_point last_used() const {
    std::lock_guard lock(mutex_);
    return last_used_;
  }

  FitSnapshot snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
  }
  bool running() const { return snapshot().state == JobState::Running; }

  // Fitted (or edited) set and a counter bumped on every replacement.
  std::pair<std::shared_ptr<const SolutionSet>, std::uint64_t> result() const {
    std::lock_guard lock(mutex_);
    return {result_, version_};
  }

  // False when a job is already running.
  bool start_fit(const Image& reference, const FitConfig& config) {
    std::lock_guard lock(mutex_);
    if (running()) return false;
    publish({JobState::Running, 0.0, std::numeric_limits<double>::quiet_NaN(),
             std::numeric_limits<double>::quiet_NaN(), {}});
    // The previous worker, if any, has finished; assigning joins it.
    worker_ = std::jthread([this, reference, config](std::stop_token stop) {
      run(reference, config, std::move(stop));
    });
    return true;
  }

  enum class ReplaceResult { Ok, NoFit, Busy };

  ReplaceResult replace_curves(std::vector<CurveTriple> triples) {
    std::lock_guard lock(mutex_);
    if (running()) return ReplaceResult::Busy;
    if (!result_) return ReplaceResult::NoFit;
    auto next = std::make_shared<SolutionSet>(*result_);
    next->triples = std::move(triples);
    next->validate();
    result_ = std::move(next);
    ++version_;
    return ReplaceResult::Ok;
  }

  // Single-entry cache of the last rendered preview.
  std::optional<std::string> cached_preview(const std::string& key) const {
    std::lock_guard lock(cache_mutex_);
    if (cache_key_ == key) return cache_value_;
    return std::nullopt;
  }
  void store_preview(std::string key, std::string png) {
    std::lock_guard lock(cache_mutex_);
    cache_key_ = std::move(key);
    cache_value_ = std::move(png);
  }

 private:
  void publish(FitSnapshot s) {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(s);
  }

  void run(const Image& reference, const FitConfig& config, std::stop_token stop) {
    FitHooks hooks;
    hooks.stop = stop;
    double progress = 0.0;
    hooks.on_progress = [&](const FitProgress& p) {
      progress = std::max(progress, std::min(1.0, static_cast<double>(p.step) / p.steps));
      publish({JobState::Running, progress, p.loss, p.psnr, {}});
    };
    try {
      FitResult fit = fit_pair(source_, reference, config, hooks);
      const double loss = fit.trace.entries.back().total;
      {
        std::lock_guard lock(mutex_);
        result_ = std::make_shared<const SolutionSet>(std::move(fit.set));
        ++version_;
      }
      publish({JobState::Done, 1.0, loss, fit.trace.final.psnr, {}});
    } catch (const std::exception& e) {
      publish({JobState::Error, progress, std::numeric_limits<double>::quiet_NaN(),
               std::numeric_limits<double>::quiet_NaN(), e.what()});
    }
  }

  const std::string id_;
  const Image source_;
  const Clock::time_point created_;

  mutable std::mutex mutex_;
  Clock::time_point last_used_;
  std::shared_ptr<const SolutionSet> result_;
  std::uint64_t version_{0};

  mutable std::mutex snapshot_mutex_;
  FitSnapshot snapshot_;

  mutable std::mutex cache_mutex_;
  std::string cache_key_;
  std::string cache_value_;

  // Declared last: destroyed (stop + join) before the state it uses.
  std::jthread worker_;
};

class SessionStore {
 public:
  explicit SessionStore(std::chrono::seconds idle_timeout,
                        std::function<Clock::time_point()> now)
      : idle_timeout_{idle_timeout}, now_{std::move(now)} {}

  std::shared_ptr<Session> create(Image source) {
    auto session = std::make_shared<Session>(new_session_id(), std::move(source), now_());
    std::lock_guard lock(mutex_);
    evict_locked();
    sessions_[session->id()] = session;
    return session;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mutex_);
    evict_locked();
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    it->second->touch(now_());
    return it->second;
  }

  std::size_t size() {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  void evict_idle() {
    std::lock_guard lock(mutex_);
    evict_locked();
  }

 private:
  // Sessions with a running fit are never idle.
  void evict_locked() {
    const auto now = now_();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (!it->second->running() && now - it->second->last_used() > idle_timeout_) {
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::chrono::seconds idle_timeout_;
  std::function<Clock::time_point()> now_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Reads a FitConfig from a JSON request body. Absent fields keep their
// defaults, except fusion_mode which defaults to constrained. Errors name the
// field.
struct FitRequest {
  FitConfig config;
  std::optional<Image> reference;
};

class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& what) : std::runtime_error(what), status_{status} {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

inline FitRequest parse_fit_request(const std::string& body) {
  FitRequest request;
  request.config.fusion_mode = FusionMode::Constrained;
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return request;

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError(400, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw RequestError(422, "fit body must be a JSON object");

  FitConfig& c = request.config;
  auto integer = [&](const std::string& key, auto& field) {
    const auto& v = j[key];
    if (!v.is_number_integer()) throw RequestError(422, key + ": expected an integer");
    field = v.template get<std::remove_reference_t<decltype(field)>>();
  };
  auto real = [&](const std::string& key, double& field) {
    const auto& v = j[key];
    if (!v.is_number()) throw RequestError(422, key + ": expected a number");
    field = v.get<double>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "solutions") integer(key, c.solutions);
    else if (key == "pieces") integer(key, c.pieces);
    else if (key == "iterations") integer(key, c.iterations);
    else if (key == "steps") integer(key, c.steps);
    else if (key == "fit_scale") integer(key, c.fit_scale);
    else if (key == "map_resolution") integer(key, c.map_resolution);
    else if (key == "seed") {
      if (!value.is_number_unsigned()) throw RequestError(422, "seed: expected a nonnegative integer");
      c.seed = value.get<std::uint64_t>();
    } else if (key == "learning_rate") real(key, c.learning_rate);
    else if (key == "ssim_weight") real(key, c.ssim_weight);
    else if (key == "monotone_knots") {
      if (!value.is_boolean()) throw RequestError(422, "monotone_knots: expected a boolean");
      c.monotone_knots = value.get<bool>();
    } else if (key == "fusion_mode") {
      if (!value.is_string()) throw RequestError(422, "fusion_mode: expected a string");
      try {
        c.fusion_mode = parse_fusion_mode(value.get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw RequestError(422, std::string("fusion_mode: ") + e.what());
      }
    } else if (key == "reference") {
      if (!value.is_string()) throw RequestError(422, "reference: expected a base64 string");
      const auto bytes = base64_decode(value.get<std::string>());
      if (!bytes) throw RequestError(422, "reference: invalid base64");
      try {
        request.reference = decode_png(*bytes);
      } catch (const IoError& e) {
        throw RequestError(422, std::string("reference: ") + e.what());
      }
    } else {
      throw RequestError(422, key + ": unknown field");
    }
  }
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw RequestError(422, e.what());
  }
  return request;
}

// Positive weights from "a,b,c"; the count must equal `expected`.
inline InterpolationWeights parse_weights(const std::string& text, int expected) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("weight '" + item + "' is not a number");
    }
    if (used != item.size()) throw std::invalid_argument("weight '" + item + "' is not a number");
    values.push_back(v);
  }
  if (!text.empty() && text.back() == ',') throw std::invalid_argument("empty weight");
  if (static_cast<int>(values.size()) != expected) {
    throw std::invalid_argument("expected " + std::to_string(expected) + " weights, got " +
                                std::to_string(values.size()));
  }
  return InterpolationWeights(std::move(values));
}

// Preset directory contents as a zip archive, built via a scratch directory.
inline std::vector<std::uint8_t> export_zip(const SolutionSet& set) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const fs::path dir = fs::temp_directory_path() /
                       ("tonefit-export-" + std::to_string(rd()) + std::to_string(rd()));
  struct Cleanup {
    fs::path path;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(path, ec);
    }
  } cleanup{dir};
  save_preset(set, dir);
  std::vector<ZipEntry> entries;
  entries.push_back({kManifestName, read_file(dir / kManifestName)});
  for (int i = 0; i < set.solutions(); ++i) {
    entries.push_back({map_file_name(i), read_file(dir / map_file_name(i))});
  }
  return make_zip(entries);
}

inline std::string to_body(const std::vector<std::uint8_t>& bytes) {
  return {bytes.begin(), bytes.end()};
}

class Service {
 public:
  explicit Service(ServiceOptions options = {})
      : options_{std::move(options)}, sessions_{options_.idle_timeout, options_.now} {}

  SessionStore& sessions() noexcept { return sessions_; }

  void install(httplib::Server& server) {
    server.set_payload_max_length(options_.max_body_bytes);
    if (!options_.cors_origin.empty()) {
      server.set_post_routing_handler([origin = options_.cors_origin](const httplib::Request&,
                                                                        httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
      });
      server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
      });
    }
    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "internal error";
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          error(res, 500, what);
        });

    server.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      create_session(req, res);
    });
    server.Post(R"(/api/sessions/([0-9a-f]+)/fit)",
                [this](const httplib::Request& req, httplib::Response& res) { start_fit(req, res); });
    server.Get(R"(/api/sessions/([0-9a-f]+)/fit/status)",
               [this](const httplib::Request& req, httplib::Response& res) { status(req, res); });
    server.Get(R"(/api/sessions/([0-9a-f]+)/preview)",
               [this](const httplib::Request& req, httplib::Response& res) { preview(req, res); });
    server.Get(R"(/api/sessions/([0-9a-f]+)/solutions/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) { solution(req, res); });
    server.Get(R"(/api/sessions/([0-9a-f]+)/curves)",
               [this](const httplib::Request& req, httplib::Response& res) { get_curves(req, res); });
    server.Put(R"(/api/sessions/([0-9a-f]+)/curves)",
               [this](const httplib::Request& req, httplib::Response& res) { put_curves(req, res); });
    server.Get(R"(/api/sessions/([0-9a-f]+)/export)",
               [this](const httplib::Request& req, httplib::Response& res) { export_preset(req, res); });
  }

 private:
  static void error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
  }

  static void json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }

  std::shared_ptr<Session> session_or_404(const httplib::Request& req, httplib::Response& res) {
    auto session = sessions_.find(req.matches[1]);
    if (!session) error(res, 404, "unknown session");
    return session;
  }

  // The fitted set, or a 409 when there is none yet.
  static std::pair<std::shared_ptr<const SolutionSet>, std::uint64_t> fitted_or_409(
      const Session& session, httplib::Response& res) {
    auto result = session.result();
    if (!result.first) error(res, 409, "no completed fit");
    return result;
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) return error(res, 400, "empty body: expected PNG bytes");
    Image image;
    try {
      image = decode_png({reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()});
    } catch (const IoError& e) {
      return error(res, 400, e.what());
    }
    auto session = sessions_.create(std::move(image));
    json(res, 201,
         {{"session_id", session->id()},
          {"width", session->source().width()},
          {"height", session->source().height()}});
  }

  void start_fit(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    FitRequest request;
    try {
      request = parse_fit_request(req.body);
    } catch (const RequestError& e) {
      return error(res, e.status(), e.what());
    }
    Image reference = request.reference ? std::move(*request.reference)
                                        : auto_contrast(session->source());
    if (!reference.same_shape(session->source())) {
      return error(res, 422, "reference: dimensions differ from the session image");
    }
    if (!session->start_fit(reference, request.config)) {
      return error(res, 409, "a fit is already running for this session");
    }
    json(res, 202, {{"job", "started"}});
  }

  void status(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const FitSnapshot s = session->snapshot();
    nlohmann::json body{{"state", to_string(s.state)},
                        {"progress", s.progress},
                        {"loss", finite_or_null(s.loss)},
                        {"psnr", finite_or_null(s.psnr)}};
    if (!s.error.empty()) body["error"] = s.error;
    json(res, 200, body);
  }

  void preview(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const auto [set, version] = fitted_or_409(*session, res);
    if (!set) return;
    if (set->mode() != FusionMode::Constrained) {
      return error(res, 409, "interpolation requires constrained mode");
    }
    std::optional<InterpolationWeights> weights;
    try {
      if (!req.has_param("weights")) {
        weights.emplace(std::vector<double>(set->solutions(), 1.0));
      } else {
        weights.emplace(parse_weights(req.get_param_value("weights"), set->solutions()));
      }
    } catch (const std::invalid_argument& e) {
      return error(res, 422, std::string("weights: ") + e.what());
    }
    std::string key = std::to_string(version);
    for (double w : weights->canonical()) key += "," + nlohmann::json(w).dump();
    if (auto hit = session->cached_preview(key)) {
      res.set_content(*hit, "image/png");
      return;
    }
    const auto solutions = globally_adjusted(*set, session->source());
    const Image out = clamped(interpolate(solutions, set->maps, *weights));
    std::string png = to_body(encode_png(out, 8));
    session->store_preview(std::move(key), png);
    res.set_content(std::move(png), "image/png");
  }

  void solution(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const auto [set, version] = fitted_or_409(*session, res);
    if (!set) return;
    const std::string text = req.matches[2];
    int index = -1;
    if (!text.empty() && text.size() < 9 &&
        std::all_of(text.begin(), text.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      index = std::stoi(text);
    }
    if (index < 0 || index >= set->solutions()) return error(res, 404, "no such solution");
    const Image out = clamped(apply_triple(set->triples[index], session->source()));
    res.set_content(to_body(encode_png(out, 8)), "image/png");
  }

  void get_curves(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const auto [set, version] = fitted_or_409(*session, res);
    if (!set) return;
    json(res, 200, to_manifest(*set));
  }

  void put_curves(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const auto [set, version] = fitted_or_409(*session, res);
    if (!set) return;
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      return error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    std::vector<CurveTriple> triples;
    try {
      const ManifestHeader h = parse_manifest_header(body);
      if (h.solutions != set->solutions()) {
        return error(res, 422, "n_solutions: expected " + std::to_string(set->solutions()));
      }
      if (h.mode != set->mode()) {
        return error(res, 422, std::string("fusion_mode: expected ") + to_string(set->mode()));
      }
      triples = parse_manifest_curves(body, h);
    } catch (const PresetError& e) {
      return error(res, 422, e.what());
    }
    switch (session->replace_curves(std::move(triples))) {
      case Session::ReplaceResult::Ok: res.status = 204; return;
      case Session::ReplaceResult::Busy: return error(res, 409, "a fit is running for this session");
      case Session::ReplaceResult::NoFit: return error(res, 409, "no completed fit");
    }
  }

  void export_preset(const httplib::Request& req, httplib::Response& res) {
    auto session = session_or_404(req, res);
    if (!session) return;
    const auto [set, version] = fitted_or_409(*session, res);
    if (!set) return;
    res.set_header("Content-Disposition", "attachment; filename=\"preset.zip\"");
    res.set_content(to_body(export_zip(*set)), "application/zip");
  }

  ServiceOptions options_;
  SessionStore sessions_;
};

// Blocks serving on host:port until the server is stopped.
inline bool serve(const std::string& host, int port, ServiceOptions options = {}) {
  httplib::Server server;
  Service service(std::move(options));
  service.install(server);
  return server.listen(host, port);
}

}  // namespace tonefit::service
