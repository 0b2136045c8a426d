#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace tonefit {

struct AdamParameters {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t size, AdamParameters params)
      : params_{params}, m_(size, 0.0), v_(size, 0.0) {}

  std::size_t steps() const noexcept { return t_; }

  // Entries where mask is false are left untouched (frozen parameters).
  void step(std::span<double> x, std::span<const double> grad,
            std::span<const std::uint8_t> mask = {}) {
    if (x.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("Adam: parameter size mismatch");
    }
    ++t_;
    const double corr1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask.empty() && mask[i] == 0) continue;
      m_[i] = params_.beta1 * m_[i] + (1.0 - params_.beta1) * grad[i];
      v_[i] = params_.beta2 * v_[i] + (1.0 - params_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / corr1;
      const double v_hat = v_[i] / corr2;
      x[i] -= params_.learning_rate * m_hat / (std::sqrt(v_hat) + params_.epsilon);
    }
  }

 private:
  AdamParameters params_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_{0};
};

}  // namespace tonefit
