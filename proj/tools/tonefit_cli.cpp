// tonefit-cli: fit, apply and inspect tone-curve presets.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tonefit/fusion.hpp"
#include "tonefit/imageio.hpp"
#include "tonefit/metrics.hpp"
#include "tonefit/optimize.hpp"
#include "tonefit/preset.hpp"
#include "tonefit/service.hpp"
#include "tonefit/solution_set.hpp"
#include "tonefit/solution_space.hpp"

using namespace tonefit;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

// Flag values that parse but make no sense; reported as usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw UsageError(std::string(flag) + ": '" + item + "' is not a number");
    }
  }
  if (text.empty() || text.back() == ',') throw UsageError(std::string(flag) + ": empty value");
  return out;
}

RgbPoint parse_point(const std::string& text, const char* flag) {
  const auto v = parse_list(text, flag);
  if (v.size() != 3) throw UsageError(std::string(flag) + ": expected r,g,b");
  return {v[0], v[1], v[2]};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt(RgbPoint p) { return fmt(p.r) + " " + fmt(p.g) + " " + fmt(p.b); }

struct FitArgs {
  std::string input, reference, out;
  FitConfig config;
  std::string mode = "plain";
};

int cmd_fit(FitArgs& a) {
  a.config.fusion_mode = parse_fusion_mode(a.mode);
  try {
    a.config.validate();
  } catch (const InvalidConfig& e) {
    throw UsageError(e.what());
  }
  const Image input = load_png(a.input);
  const Image reference = load_png(a.reference);
  const FitResult fit = fit_pair(input, reference, a.config);
  save_preset(fit.set, a.out);
  std::cout << "loss=" << fit.trace.entries.back().total << " psnr=" << fit.trace.final.psnr
            << " ssim=" << fit.trace.final.ssim << "\n";
  return 0;
}

int cmd_apply(const std::string& input, const std::string& preset, const std::string& out,
              const std::string& maps) {
  MapPolicy policy;
  try {
    policy = parse_map_policy(maps);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const SolutionSet set = load_preset(preset);
  save_png(apply_preset(load_png(input), set, policy), out);
  return 0;
}

int cmd_interpolate(const std::string& input, const std::string& preset,
                    const std::string& weights_text, const std::string& out) {
  const auto values = parse_list(weights_text, "--weights");
  for (double w : values) {
    if (!(w > 0.0) || !std::isfinite(w)) throw UsageError("--weights: weights must be positive");
  }
  const SolutionSet set = load_preset(preset);
  if (set.mode() != FusionMode::Constrained) {
    throw std::runtime_error("interpolation requires constrained mode");
  }
  if (static_cast<int>(values.size()) != set.solutions()) {
    throw UsageError("--weights: preset has " + std::to_string(set.solutions()) +
                     " solutions, got " + std::to_string(values.size()) + " weights");
  }
  const Image image = load_png(input);
  const auto solutions = globally_adjusted(set, image);
  const ConfidenceMaps maps = maps_for(set, image.width(), image.height(), MapPolicy::Stored);
  save_png(clamped(interpolate(solutions, maps, InterpolationWeights(values))), out);
  return 0;
}

int cmd_gradcheck(const GradCheckOptions& options) {
  constexpr double kTolerance = 1e-4;
  if (options.trials < 1) throw UsageError("--trials must be at least 1");
  if (!(options.epsilon > 0.0)) throw UsageError("--eps must be positive");
  const GradCheckReport report = gradient_check(options);
  for (int c = 0; c < 3; ++c) {
    std::printf("%-13s max_rel_err=%.3e %s\n", to_string(static_cast<ParameterClass>(c)),
                report.max_relative_error[c],
                report.max_relative_error[c] < kTolerance ? "ok" : "FAIL");
  }
  std::printf("trials=%d eps=%g\n", report.trials, options.epsilon);
  return report.passes(kTolerance) ? 0 : kRuntime;
}

int cmd_eval(const std::string& a, const std::string& b) {
  const QualityReport q = quality_report(load_png(a), load_png(b));
  std::cout << "PSNR: " << (std::isinf(q.psnr) ? std::string("inf") : fmt(q.psnr)) << " dB\n"
            << "SSIM: " << fmt(q.ssim) << "\n";
  return 0;
}

int cmd_bench(int size, int threads, int repetitions, std::uint64_t seed, double budget_ms) {
  if (size < 1 || repetitions < 1) throw UsageError("--size and --repetitions must be positive");
  if (threads < 1) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> alpha(-1.0, 1.0);

  Image input(size, size);
  for (auto& v : input.data()) v = unit(rng);
  FitConfig config;
  config.seed = seed;
  SolutionSet set = init_solution_set(config, size, size);
  for (auto& t : set.triples) {
    for (int c = 0; c < 3; ++c) {
      std::vector<double> knots(t[c].knots().size());
      std::vector<double> alphas(t[c].alphas().size());
      for (auto& k : knots) k = unit(rng);
      for (auto& x : alphas) x = alpha(rng);
      t[c] = PngCurve(std::move(knots), std::move(alphas), t[c].iterations());
    }
  }
  // LUT construction is part of applying a preset, so it is timed too.
  Image out(size, size);
  double total_ms = 0.0;
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const SolutionLuts luts(set);
    render_lut(set, luts, input, out, threads);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  std::printf("size=%dx%d solutions=%d threads=%d repetitions=%d\n", size, size, set.solutions(),
              threads, repetitions);
  const double mean = total_ms / repetitions;
  const bool ok = mean <= budget_ms;
  std::printf("mean_ms=%.3f budget_ms=%g %s\n", mean, budget_ms, ok ? "ok" : "OVER BUDGET");
  return ok ? 0 : kRuntime;
}

struct GeometryArgs {
  std::string x = "1,0,0", y = "0,1,0", z = "0,0,1";
  std::string d;
  std::vector<std::string> targets;
};

int cmd_geometry(const GeometryArgs& a) {
  const RgbPoint x = parse_point(a.x, "--x");
  const RgbPoint y = parse_point(a.y, "--y");
  const RgbPoint z = parse_point(a.z, "--z");
  const RgbPoint d = parse_point(a.d, "--d");

  try {
    const BasisWeights w = solve_basis_weights(x, y, z, d);
    std::cout << "weights: " << fmt(w[0]) << " " << fmt(w[1]) << " " << fmt(w[2]) << "\n";
  } catch (const SingularBasis&) {
    std::cout << "weights: singular basis\n";
  }
  const Projection p = project_constrained(x, y, z, d);
  std::cout << "projection: " << fmt(p.point) << "\n"
            << "projection_weights: " << fmt(p.weights[0]) << " " << fmt(p.weights[1]) << " "
            << fmt(p.weights[2]) << "\n"
            << "distance: " << fmt(p.distance) << "\n";

  if (!a.targets.empty()) {
    std::vector<RgbPoint> targets;
    for (const auto& t : a.targets) targets.push_back(parse_point(t, "--target"));
    std::cout << "deviation_from_d: " << fmt(deviation_sum(d, targets)) << "\n"
              << "deviation_from_projection: " << fmt(deviation_sum(p.point, targets)) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit and apply piecewise tone-curve presets"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a preset to an input/reference pair");
  fit_cmd->add_option("--input", fit.input)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--reference", fit.reference)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit.out, "Preset directory")->required();
  fit_cmd->add_option("--solutions", fit.config.solutions)->capture_default_str();
  fit_cmd->add_option("--pieces", fit.config.pieces)->capture_default_str();
  fit_cmd->add_option("--iters", fit.config.iterations, "Curve iterations n")->capture_default_str();
  fit_cmd->add_option("--steps", fit.config.steps)->capture_default_str();
  fit_cmd->add_option("--lr", fit.config.learning_rate)->capture_default_str();
  fit_cmd->add_option("--ssim-weight", fit.config.ssim_weight)->capture_default_str();
  fit_cmd->add_option("--mode", fit.mode)->check(CLI::IsMember({"plain", "constrained"}))->capture_default_str();
  fit_cmd->add_option("--fit-scale", fit.config.fit_scale, "Integer downsampling factor for fitting")
      ->capture_default_str();
  fit_cmd->add_option("--map-resolution", fit.config.map_resolution,
                      "Long side of the confidence-map grid (0: per pixel)")
      ->capture_default_str();
  fit_cmd->add_flag("--monotone-knots", fit.config.monotone_knots);
  fit_cmd->add_option("--seed", fit.config.seed)->capture_default_str();

  std::string input, preset, out, maps = "stored", weights;
  auto* apply_cmd = app.add_subcommand("apply", "Apply a preset to an image");
  apply_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  apply_cmd->add_option("--preset", preset)->required();
  apply_cmd->add_option("--out", out)->required();
  apply_cmd->add_option("--maps", maps, "stored|uniform")->capture_default_str();

  auto* interp_cmd = app.add_subcommand("interpolate", "Reweight a constrained preset's solutions");
  interp_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  interp_cmd->add_option("--preset", preset)->required();
  interp_cmd->add_option("--weights", weights, "Comma-separated positive weights")->required();
  interp_cmd->add_option("--out", out)->required();

  GradCheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc_cmd->add_option("--trials", gc.trials)->capture_default_str();
  gc_cmd->add_option("--eps", gc.epsilon)->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();

  std::string eval_a, eval_b;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR and SSIM between two images");
  eval_cmd->add_option("--a", eval_a)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--b", eval_b)->required()->check(CLI::ExistingFile);

  int bench_size = 512, bench_threads = 0, bench_reps = 100;
  std::uint64_t bench_seed = 0;
  double bench_budget = 50.0;
  auto* bench_cmd = app.add_subcommand("bench", "Time LUT curve application and fusion");
  bench_cmd->add_option("--size", bench_size)->capture_default_str();
  bench_cmd->add_option("--threads", bench_threads, "Worker threads (0: logical cores)")
      ->capture_default_str();
  bench_cmd->add_option("--repetitions", bench_reps)->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_option("--budget-ms", bench_budget, "Fail when the mean exceeds this")
      ->capture_default_str();

  GeometryArgs geo;
  auto* geo_cmd = app.add_subcommand("geometry", "Solution-space weights and projection for a point");
  geo_cmd->add_option("--x", geo.x, "Basis vector r,g,b")->capture_default_str();
  geo_cmd->add_option("--y", geo.y)->capture_default_str();
  geo_cmd->add_option("--z", geo.z)->capture_default_str();
  geo_cmd->add_option("--d", geo.d, "Query point r,g,b")->required();
  geo_cmd->add_option("--target", geo.targets, "Reference point for deviation sums (repeatable)");

  std::string host = "127.0.0.1", cors;
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535))->capture_default_str();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--cors-origin", cors, "Allowed browser origin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit);
    if (*apply_cmd) return cmd_apply(input, preset, out, maps);
    if (*interp_cmd) return cmd_interpolate(input, preset, weights, out);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*eval_cmd) return cmd_eval(eval_a, eval_b);
    if (*bench_cmd) return cmd_bench(bench_size, bench_threads, bench_reps, bench_seed, bench_budget);
    if (*geo_cmd) return cmd_geometry(geo);
    if (*serve_cmd) {
      service::ServiceOptions options;
      options.cors_origin = cors;
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!service::serve(host, port, options)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return kRuntime;
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
