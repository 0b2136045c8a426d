#pragma once

// Piecewise nonlinear global tone curve.
//
// A curve with M pieces maps x in [0,1] through
//
//   V(x) = k_0 + sum_{m=0}^{M-1} (k_{m+1} - k_m) * G_m(x)
//   G_m(x) = F^n(clamp01(x*M - m); alpha_m)
//   F(u; a) = u + a*u*(1-u),   F^j = F(F^{j-1})
//
// Pieces left of x are saturated (G = 1), pieces right of x are zero, so only
// the piece containing x contributes a nonlinear term.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tonefit {

class InvalidCurve : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kDefaultPieces = 7;
inline constexpr int kDefaultIterations = 4;

inline double basic_curve(double x, double alpha) noexcept {
  return x + alpha * x * (1.0 - x);
}

inline double iterated_curve(double x, double alpha, int n) {
  if (n < 1) throw InvalidCurve("iteration count must be >= 1");
  double f = x;
  for (int j = 0; j < n; ++j) f = f + alpha * f * (1.0 - f);
  return f;
}

struct ValueAndSlope {
  double value;
  double d_alpha;
};

// F^n(x; alpha) and its derivative with respect to alpha.
inline ValueAndSlope iterated_curve_d_alpha(double x, double alpha,
                                            int n) noexcept {
  double f = x;
  double df = 0.0;
  for (int j = 0; j < n; ++j) {
    const double g = f * (1.0 - f);
    df = df * (1.0 + alpha - 2.0 * alpha * f) + g;
    f = f + alpha * g;
  }
  return {f, df};
}

inline double ramp_clamp(double y) noexcept {
  if (y < 0.0) return 0.0;
  if (y > 1.0) return 1.0;
  return y;
}

// Location of x on the piece grid: the active piece index and the clamped
// coordinate inside it.
struct PiecePosition {
  int piece;
  double local;
};

inline PiecePosition locate_piece(double x, int pieces) noexcept {
  const double scaled = x * pieces;
  int j = static_cast<int>(std::floor(scaled));
  j = std::clamp(j, 0, pieces - 1);
  return {j, ramp_clamp(scaled - j)};
}

class PngCurve {
 public:
  PngCurve(std::vector<double> knots, std::vector<double> alphas,
           int iterations = kDefaultIterations)
      : knots_{std::move(knots)},
        alphas_{std::move(alphas)},
        iterations_{iterations} {
    if (alphas_.empty()) throw InvalidCurve("curve needs at least one piece");
    if (knots_.size() != alphas_.size() + 1) {
      throw InvalidCurve("knot count must be piece count + 1 (got " +
                         std::to_string(knots_.size()) + " knots, " +
                         std::to_string(alphas_.size()) + " alphas)");
    }
    if (iterations_ < 1) throw InvalidCurve("iteration count must be >= 1");
    for (std::size_t m = 0; m < alphas_.size(); ++m) {
      if (!(alphas_[m] >= -1.0 && alphas_[m] <= 1.0)) {
        throw InvalidCurve("alpha[" + std::to_string(m) + "] = " +
                           std::to_string(alphas_[m]) + " outside [-1,1]");
      }
    }
    for (double k : knots_) {
      if (!std::isfinite(k)) throw InvalidCurve("knot values must be finite");
    }
  }

  // Uniform knots m/M with zero curvature: the identity map.
  static PngCurve identity(int pieces = kDefaultPieces,
                           int iterations = kDefaultIterations) {
    if (pieces < 1) throw InvalidCurve("curve needs at least one piece");
    std::vector<double> knots(pieces + 1);
    for (int m = 0; m <= pieces; ++m)
      knots[m] = static_cast<double>(m) / pieces;
    return {std::move(knots), std::vector<double>(pieces, 0.0), iterations};
  }

  static PngCurve constant(double level, int pieces = kDefaultPieces,
                           int iterations = kDefaultIterations) {
    return {std::vector<double>(pieces + 1, level),
            std::vector<double>(pieces, 0.0), iterations};
  }

  int pieces() const noexcept { return static_cast<int>(alphas_.size()); }
  int iterations() const noexcept { return iterations_; }
  std::span<const double> knots() const noexcept { return knots_; }
  std::span<const double> alphas() const noexcept { return alphas_; }

  double operator()(double x) const noexcept {
    const auto [j, u] = locate_piece(x, pieces());
    double f = u;
    for (int i = 0; i < iterations_; ++i) f = f + alphas_[j] * f * (1.0 - f);
    return knots_[j] + (knots_[j + 1] - knots_[j]) * f;
  }

  friend bool operator==(const PngCurve&, const PngCurve&) = default;

 private:
  std::vector<double> knots_;
  std::vector<double> alphas_;
  int iterations_;
};

inline double eval_curve(const PngCurve& curve, double x) noexcept {
  return curve(x);
}

inline void eval_curve_plane(const PngCurve& curve,
                             std::span<const double> in,
                             std::span<double> out) {
  if (in.size() != out.size()) {
    throw std::invalid_argument("eval_curve_plane: size mismatch");
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = curve(in[i]);
}

inline std::vector<double> eval_curve_plane(const PngCurve& curve,
                                            std::span<const double> in) {
  std::vector<double> out(in.size());
  eval_curve_plane(curve, in, out);
  return out;
}

struct CurveGradients {
  std::vector<double> d_knots;   // M+1
  std::vector<double> d_alphas;  // M
};

inline CurveGradients curve_gradients(const PngCurve& curve, double x) {
  const int pieces = curve.pieces();
  CurveGradients g{std::vector<double>(pieces + 1, 0.0),
                   std::vector<double>(pieces, 0.0)};
  const auto [j, u] = locate_piece(x, pieces);
  const auto [response, slope] =
      iterated_curve_d_alpha(u, curve.alphas()[j], curve.iterations());
  const auto knots = curve.knots();
  g.d_knots[j] = 1.0 - response;
  g.d_knots[j + 1] = response;
  g.d_alphas[j] = (knots[j + 1] - knots[j]) * slope;
  return g;
}

// Sampled curve, applied by linear interpolation.
class CurveLut {
 public:
  CurveLut(const PngCurve& curve, int resolution) {
    if (resolution < 2) throw std::invalid_argument("LUT resolution must be >= 2");
    table_.resize(resolution);
    for (int i = 0; i < resolution; ++i)
      table_[i] = curve(static_cast<double>(i) / (resolution - 1));
    scale_ = resolution - 1;
  }

  std::span<const double> table() const noexcept { return table_; }

  double operator()(double x) const noexcept {
    const double t = std::clamp(x, 0.0, 1.0) * scale_;
    const int last = static_cast<int>(table_.size()) - 2;
    const int i = std::min(static_cast<int>(t), last);
    const double frac = t - i;
    return table_[i] + (table_[i + 1] - table_[i]) * frac;
  }

  void apply(std::span<const double> in, std::span<double> out) const noexcept {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (*this)(in[i]);
  }

 private:
  std::vector<double> table_;
  double scale_{1.0};
};

inline std::vector<double> curve_to_lut(const PngCurve& curve, int resolution) {
  const CurveLut lut(curve, resolution);
  return {lut.table().begin(), lut.table().end()};
}

// One curve per RGB channel; all three share piece and iteration counts.
struct CurveTriple {
  PngCurve r;
  PngCurve g;
  PngCurve b;

  CurveTriple(PngCurve red, PngCurve green, PngCurve blue)
      : r{std::move(red)}, g{std::move(green)}, b{std::move(blue)} {
    if (r.pieces() != g.pieces() || r.pieces() != b.pieces() ||
        r.iterations() != g.iterations() || r.iterations() != b.iterations()) {
      throw InvalidCurve("curve triple members must share pieces and iterations");
    }
  }

  static CurveTriple identity(int pieces = kDefaultPieces,
                              int iterations = kDefaultIterations) {
    return {PngCurve::identity(pieces, iterations),
            PngCurve::identity(pieces, iterations),
            PngCurve::identity(pieces, iterations)};
  }

  const PngCurve& operator[](int c) const noexcept {
    return c == 0 ? r : (c == 1 ? g : b);
  }
  PngCurve& operator[](int c) noexcept { return c == 0 ? r : (c == 1 ? g : b); }

  int pieces() const noexcept { return r.pieces(); }
  int iterations() const noexcept { return r.iterations(); }

  friend bool operator==(const CurveTriple&, const CurveTriple&) = default;
};

}  // namespace tonefit
