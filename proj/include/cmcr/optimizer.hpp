#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cmcr/params.hpp"

namespace cmcr::train {

// Adam with bias correction; state rows follow the ParamSet order it was
// created from.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(const ParamSet& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, value] : params.items()) {
      m_.emplace_back(value.data().rows, value.data().cols);
      v_.emplace_back(value.data().rows, value.data().cols);
    }
  }

  void step(ParamSet& params, double lr) {
    detail::require(params.size() == m_.size(), "Adam: parameter set size changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < m_.size(); ++p) {
      auto& [name, value] = params.items()[p];
      const Matrix& g = value.grad();
      Matrix& data = value.node()->data;
      for (std::size_t i = 0; i < g.v.size(); ++i) {
        const double gi = g.v[i];
        detail::require(std::isfinite(gi), "Adam: non-finite gradient in parameter " + name);
        m_[p].v[i] = beta1 * m_[p].v[i] + (1.0 - beta1) * gi;
        v_[p].v[i] = beta2 * v_[p].v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = m_[p].v[i] / bc1;
        const double vhat = v_[p].v[i] / bc2;
        data.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

// One-cycle schedule: linear warmup from lr_max/25 over the first 30% of
// steps, cosine decay to lr_max/1e4 afterwards; continuous at the junction.
inline double one_cycle_lr(std::size_t step, std::size_t total_steps, double lr_max) {
  detail::require(total_steps > 0, "one_cycle_lr: total_steps must be positive");
  if (step > total_steps) {
    detail::warn("one_cycle_lr: step " + std::to_string(step) + " beyond total " +
                 std::to_string(total_steps) + "; clamping");
    step = total_steps;
  }
  const double start_lr = lr_max / 25.0;
  const double end_lr = lr_max / 1e4;
  const auto warm = static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(total_steps)));
  if (step <= warm) {
    if (warm == 0) return lr_max;
    const double f = static_cast<double>(step) / static_cast<double>(warm);
    return start_lr + (lr_max - start_lr) * f;
  }
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return end_lr + (lr_max - end_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace cmcr::train
