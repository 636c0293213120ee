#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/rng.hpp"

// Central finite differences as an independent oracle for tape gradients.
// Only the forward evaluation path is exercised for the reference values, so
// the check stays independent of the backward rules it validates.
namespace cmcr::gradcheck {

// Builds a scalar (1x1) DiffValue from leaf inputs. Called repeatedly with
// perturbed data, so it must not keep state between calls.
using ScalarFn = std::function<ad::DiffValue(const std::vector<ad::DiffValue>&)>;

constexpr double kDefaultStep = 1e-5;

inline double relative_error(double tape, double fd) {
  return std::abs(tape - fd) / std::max({1.0, std::abs(tape), std::abs(fd)});
}

inline double eval_scalar(const ScalarFn& fn, const std::vector<Matrix>& inputs) {
  std::vector<ad::DiffValue> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(ad::DiffValue::leaf(m, false));
  return fn(leaves).item();
}

// Max relative error between tape gradients and central differences over the
// selected entries of each input ({} = all entries).
inline double max_relative_error(
    const ScalarFn& fn, const std::vector<Matrix>& inputs, double step = kDefaultStep,
    const std::vector<std::vector<std::size_t>>& entries = {}) {
  std::vector<ad::DiffValue> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(ad::DiffValue::leaf(m, true));
  ad::backward(fn(leaves));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> idx;
    if (i < entries.size() && !entries[i].empty()) {
      idx = entries[i];
    } else {
      idx.resize(inputs[i].size());
      for (std::size_t e = 0; e < idx.size(); ++e) idx[e] = e;
    }
    for (std::size_t e : idx) {
      std::vector<Matrix> probe = inputs;
      probe[i].v[e] = inputs[i].v[e] + step;
      const double fp = eval_scalar(fn, probe);
      probe[i].v[e] = inputs[i].v[e] - step;
      const double fm = eval_scalar(fn, probe);
      const double fd = (fp - fm) / (2.0 * step);
      worst = std::max(worst, relative_error(leaves[i].grad().v[e], fd));
    }
  }
  return worst;
}

// Random subset of entries per input, for large parameter sets.
inline std::vector<std::vector<std::size_t>> sample_entries(const std::vector<Matrix>& inputs,
                                                            std::size_t per_input, SplitRng rng) {
  std::vector<std::vector<std::size_t>> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].size();
    out[i] = rng.fork(i).sample_without_replacement(n, std::min(per_input, n));
  }
  return out;
}

// Random matrix with entries bounded away from zero, so kinked ops (relu) are
// probed at differentiable points.
inline Matrix random_matrix_away_from_zero(SplitRng& rng, std::size_t rows, std::size_t cols,
                                           double lo = 0.1, double hi = 1.5) {
  Matrix m(rows, cols);
  for (double& x : m.v) {
    const double mag = rng.next_uniform(lo, hi);
    x = rng.next_uniform() < 0.5 ? -mag : mag;
  }
  return m;
}

inline Matrix random_positive_matrix(SplitRng& rng, std::size_t rows, std::size_t cols,
                                     double lo = 0.1, double hi = 1.5) {
  Matrix m(rows, cols);
  for (double& x : m.v) x = rng.next_uniform(lo, hi);
  return m;
}

}  // namespace cmcr::gradcheck
