#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/rng.hpp"

namespace cmcr {

// Ordered collection of named trainable leaves. Order is fixed at creation
// and shared by the optimizer state and checkpoints.
class ParamSet {
 public:
  void add(const std::string& name, Matrix init) {
    for (const auto& [n, v] : items_)
      detail::require(n != name, "ParamSet: duplicate parameter " + name);
    items_.emplace_back(name, ad::DiffValue::leaf(std::move(init), true));
  }

  ad::DiffValue& get(const std::string& name) {
    for (auto& [n, v] : items_)
      if (n == name) return v;
    detail::fail("ParamSet: unknown parameter " + name);
  }

  const ad::DiffValue& get(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    detail::fail("ParamSet: unknown parameter " + name);
  }

  std::vector<std::pair<std::string, ad::DiffValue>>& items() { return items_; }
  const std::vector<std::pair<std::string, ad::DiffValue>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  void zero_grads() {
    for (auto& [n, v] : items_) v.zero_grad();
  }

  // Fresh leaves with copied data (used for read-only per-worker snapshots).
  ParamSet clone() const {
    ParamSet copy;
    for (const auto& [n, v] : items_)
      copy.items_.emplace_back(n, ad::DiffValue::leaf(v.data(), true));
    return copy;
  }

 private:
  std::vector<std::pair<std::string, ad::DiffValue>> items_;
};

// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix fan_init(std::size_t fan_in, std::size_t fan_out, SplitRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& x : m.v) x = rng.next_uniform(-a, a);
  return m;
}

}  // namespace cmcr
