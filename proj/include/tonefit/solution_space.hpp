#pragma once

// Deviation geometry of fused solutions in RGB space. Three globally adjusted
// values X, Y, Z at a pixel act as a basis; a target value D is reachable by
// unconstrained weights when the basis is independent, and by constrained
// fusion only inside the box-weighted set {w1 X + w2 Y + w3 Z : w in [0,1]^3}.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>

namespace tonefit {

struct RgbPoint {
  double r{0.0};
  double g{0.0};
  double b{0.0};

  friend RgbPoint operator+(RgbPoint a, RgbPoint b) noexcept {
    return {a.r + b.r, a.g + b.g, a.b + b.b};
  }
  friend RgbPoint operator-(RgbPoint a, RgbPoint b) noexcept {
    return {a.r - b.r, a.g - b.g, a.b - b.b};
  }
  friend RgbPoint operator*(double s, RgbPoint p) noexcept {
    return {s * p.r, s * p.g, s * p.b};
  }
  friend bool operator==(const RgbPoint&, const RgbPoint&) = default;
};

inline double dot(RgbPoint a, RgbPoint b) noexcept {
  return a.r * b.r + a.g * b.g + a.b * b.b;
}

inline double norm(RgbPoint p) noexcept { return std::sqrt(dot(p, p)); }

inline double distance(RgbPoint a, RgbPoint b) noexcept { return norm(a - b); }

inline double deviation_sum(RgbPoint anchor, std::span<const RgbPoint> targets) {
  if (targets.empty()) throw std::invalid_argument("deviation_sum needs at least one target");
  double sum = 0.0;
  for (const RgbPoint& t : targets) sum += distance(anchor, t);
  return sum;
}

class SingularBasis : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using BasisWeights = std::array<double, 3>;

inline RgbPoint combine(RgbPoint x, RgbPoint y, RgbPoint z,
                        const BasisWeights& w) noexcept {
  return w[0] * x + w[1] * y + w[2] * z;
}

namespace detail {

inline double det3(RgbPoint x, RgbPoint y, RgbPoint z) noexcept {
  // Columns x, y, z.
  return x.r * (y.g * z.b - z.g * y.b) - y.r * (x.g * z.b - z.g * x.b) +
         z.r * (x.g * y.b - y.g * x.b);
}

// Solves the k x k system a w = rhs in place (k <= 3). Returns false when a
// pivot is negligible relative to the matrix scale.
inline bool solve_small(std::array<std::array<double, 3>, 3> a,
                        std::array<double, 3> rhs, int k,
                        std::array<double, 3>& out) {
  double scale = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) scale = std::max(scale, std::abs(a[i][j]));
  if (scale == 0.0) return false;
  for (int col = 0; col < k; ++col) {
    int pivot = col;
    for (int row = col + 1; row < k; ++row)
      if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
    if (std::abs(a[pivot][col]) <= 1e-12 * scale) return false;
    std::swap(a[pivot], a[col]);
    std::swap(rhs[pivot], rhs[col]);
    for (int row = col + 1; row < k; ++row) {
      const double f = a[row][col] / a[col][col];
      for (int j = col; j < k; ++j) a[row][j] -= f * a[col][j];
      rhs[row] -= f * rhs[col];
    }
  }
  for (int row = k - 1; row >= 0; --row) {
    double s = rhs[row];
    for (int j = row + 1; j < k; ++j) s -= a[row][j] * out[j];
    out[row] = s / a[row][row];
  }
  return true;
}

}  // namespace detail

// Unique w with w1 x + w2 y + w3 z = d. Throws SingularBasis when the basis
// is (numerically) linearly dependent.
inline BasisWeights solve_basis_weights(RgbPoint x, RgbPoint y, RgbPoint z,
                                        RgbPoint d) {
  const double det = detail::det3(x, y, z);
  const double scale = norm(x) * norm(y) * norm(z);
  if (!(std::abs(det) > 1e-12 * scale)) {
    throw SingularBasis("basis vectors are linearly dependent");
  }
  std::array<std::array<double, 3>, 3> a{{{x.r, y.r, z.r},
                                           {x.g, y.g, z.g},
                                           {x.b, y.b, z.b}}};
  BasisWeights w{};
  if (!detail::solve_small(a, {d.r, d.g, d.b}, 3, w)) {
    throw SingularBasis("basis vectors are linearly dependent");
  }
  // One step of iterative refinement.
  const RgbPoint residual = d - combine(x, y, z, w);
  BasisWeights dw{};
  if (detail::solve_small(a, {residual.r, residual.g, residual.b}, 3, dw)) {
    for (int i = 0; i < 3; ++i) w[i] += dw[i];
  }
  return w;
}

struct Projection {
  RgbPoint point;
  BasisWeights weights;
  double distance;
};

// Nearest point to d in {w1 x + w2 y + w3 z : w in [0,1]^3}.
//
// The objective |Bw - d|^2 is a convex quadratic over a box, so its minimum
// lies on some face where each weight is either at 0, at 1, or free, and the
// free weights solve the reduced normal equations. All 27 faces are tried;
// faces whose reduced system is singular are skipped, since a minimizer on
// such a face also lies on one of its lower-dimensional sub-faces.
inline Projection project_constrained(RgbPoint x, RgbPoint y, RgbPoint z,
                                      RgbPoint d) {
  const std::array<RgbPoint, 3> basis{x, y, z};
  Projection best{{}, {}, std::numeric_limits<double>::infinity()};

  for (int code = 0; code < 27; ++code) {
    std::array<int, 3> state{code % 3, (code / 3) % 3, code / 9};  // 0,1 fixed; 2 free
    BasisWeights w{};
    std::array<int, 3> free_idx{};
    int k = 0;
    for (int i = 0; i < 3; ++i) {
      if (state[i] == 2) {
        free_idx[k++] = i;
      } else {
        w[i] = state[i];
      }
    }
    if (k > 0) {
      const RgbPoint target = d - combine(x, y, z, w);
      std::array<std::array<double, 3>, 3> gram{};
      std::array<double, 3> rhs{};
      for (int a = 0; a < k; ++a) {
        rhs[a] = dot(basis[free_idx[a]], target);
        for (int b = 0; b < k; ++b)
          gram[a][b] = dot(basis[free_idx[a]], basis[free_idx[b]]);
      }
      std::array<double, 3> sol{};
      if (!detail::solve_small(gram, rhs, k, sol)) continue;
      bool feasible = true;
      for (int a = 0; a < k; ++a) {
        if (sol[a] < -1e-12 || sol[a] > 1.0 + 1e-12) feasible = false;
        w[free_idx[a]] = std::clamp(sol[a], 0.0, 1.0);
      }
      if (!feasible) continue;
    }
    const RgbPoint p = combine(x, y, z, w);
    const double dist = distance(p, d);
    if (dist < best.distance) best = {p, w, dist};
  }
  return best;
}

}  // namespace tonefit
