#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cmcr/common.hpp"
#include "cmcr/rng.hpp"

// Exact information-theoretic quantities over small discrete joints, plus the
// verification reports for the suboptimality and Bayes-error-bound analyses.
// All quantities are in nats; alphabets are capped so full enumeration stays
// exact.
namespace cmcr::info {

constexpr std::size_t kMaxAlphabet = 8;

using VarSet = std::vector<std::size_t>;

// Flat probability table over n discrete variables (n <= 4 is all this
// codebase ever builds). Index layout is row-major in variable order.
struct JointTable {
  std::vector<std::size_t> sizes;
  std::vector<double> probs;

  std::size_t cell_count() const {
    std::size_t n = 1;
    for (std::size_t s : sizes) n *= s;
    return n;
  }

  void validate() const {
    detail::require(!sizes.empty(), "JointTable: no variables");
    for (std::size_t s : sizes)
      detail::require(s >= 1 && s <= kMaxAlphabet,
                      "JointTable: alphabet size " + std::to_string(s) + " outside [1, " +
                          std::to_string(kMaxAlphabet) + "]");
    detail::require(probs.size() == cell_count(), "JointTable: table size mismatch");
    double total = 0.0;
    for (double p : probs) {
      detail::require(p >= 0.0, "JointTable: negative probability entry");
      total += p;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12,
                    "JointTable: total mass " + std::to_string(total) + " != 1");
  }

  // Decomposes a flat cell index into the per-variable configuration.
  void unpack(std::size_t cell, std::vector<std::size_t>& cfg) const {
    cfg.resize(sizes.size());
    for (std::size_t v = sizes.size(); v-- > 0;) {
      cfg[v] = cell % sizes[v];
      cell /= sizes[v];
    }
  }
};

namespace detail_info {

inline void check_subset(const JointTable& t, const VarSet& vars, const char* name) {
  cmcr::detail::require(!vars.empty(), std::string(name) + ": empty variable subset");
  for (std::size_t v : vars)
    cmcr::detail::require(v < t.sizes.size(),
                          std::string(name) + ": variable id out of range");
  for (std::size_t i = 0; i < vars.size(); ++i)
    for (std::size_t j = i + 1; j < vars.size(); ++j)
      cmcr::detail::require(vars[i] != vars[j], std::string(name) + ": repeated variable");
}

inline void check_disjoint(const VarSet& a, const VarSet& b, const char* name) {
  for (std::size_t x : a)
    for (std::size_t y : b)
      cmcr::detail::require(x != y, std::string(name) + ": overlapping variable subsets");
}

inline VarSet unite(const VarSet& a, const VarSet& b) {
  VarSet u = a;
  u.insert(u.end(), b.begin(), b.end());
  return u;
}

// Marginal distribution over the given variables, by exact summation.
inline std::vector<double> marginal(const JointTable& t, const VarSet& vars) {
  std::size_t out_cells = 1;
  for (std::size_t v : vars) out_cells *= t.sizes[v];
  std::vector<double> m(out_cells, 0.0);
  std::vector<std::size_t> cfg;
  for (std::size_t cell = 0; cell < t.probs.size(); ++cell) {
    const double p = t.probs[cell];
    if (p == 0.0) continue;
    t.unpack(cell, cfg);
    std::size_t key = 0;
    for (std::size_t v : vars) key = key * t.sizes[v] + cfg[v];
    m[key] += p;
  }
  return m;
}

inline double entropy_of(const std::vector<double>& dist) {
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline double clamp_mi(double v, const char* name) {
  cmcr::detail::require(v > -1e-9, std::string(name) + ": negative beyond tolerance");
  return v < 0.0 ? 0.0 : v;
}

}  // namespace detail_info

// Shannon entropy (nats) of the marginal over `vars`; 0 log 0 = 0.
inline double entropy(const JointTable& t, const VarSet& vars) {
  detail_info::check_subset(t, vars, "entropy");
  return detail_info::entropy_of(detail_info::marginal(t, vars));
}

inline double mutual_info(const JointTable& t, const VarSet& a, const VarSet& b) {
  detail_info::check_subset(t, a, "mutual_info");
  detail_info::check_subset(t, b, "mutual_info");
  detail_info::check_disjoint(a, b, "mutual_info");
  const double v = entropy(t, a) + entropy(t, b) - entropy(t, detail_info::unite(a, b));
  return detail_info::clamp_mi(v, "mutual_info");
}

inline double conditional_mi(const JointTable& t, const VarSet& a, const VarSet& b,
                             const VarSet& z) {
  detail_info::check_subset(t, a, "conditional_mi");
  detail_info::check_subset(t, b, "conditional_mi");
  detail_info::check_subset(t, z, "conditional_mi");
  detail_info::check_disjoint(a, b, "conditional_mi");
  detail_info::check_disjoint(a, z, "conditional_mi");
  detail_info::check_disjoint(b, z, "conditional_mi");
  using detail_info::unite;
  const double v = entropy(t, unite(a, z)) + entropy(t, unite(b, z)) -
                   entropy(t, unite(unite(a, b), z)) - entropy(t, z);
  return detail_info::clamp_mi(v, "conditional_mi");
}

// Bayes error of predicting `label` from `predictors`:
// P_e = 1 - sum_s max_y p(s, y).
inline double bayes_error(const JointTable& t, const VarSet& predictors, std::size_t label) {
  detail_info::check_subset(t, predictors, "bayes_error");
  for (std::size_t v : predictors)
    cmcr::detail::require(v != label, "bayes_error: predictors must exclude the label");
  VarSet joint_vars = predictors;
  joint_vars.push_back(label);
  const std::vector<double> m = detail_info::marginal(t, joint_vars);
  const std::size_t y_size = t.sizes[label];
  double correct = 0.0;
  for (std::size_t s = 0; s < m.size(); s += y_size) {
    double best = 0.0;
    for (std::size_t y = 0; y < y_size; ++y) best = std::max(best, m[s + y]);
    correct += best;
  }
  return 1.0 - correct;
}

// ---------------------------------------------------------------------------
// The three-variable joint over (point view, image view, label).

constexpr std::size_t kVarPoint = 0;
constexpr std::size_t kVarImage = 1;
constexpr std::size_t kVarLabel = 2;

struct DiscreteJoint {
  JointTable table;  // exactly 3 variables

  static DiscreteJoint create(std::array<std::size_t, 3> sizes, std::vector<double> probs) {
    DiscreteJoint j;
    j.table.sizes = {sizes[0], sizes[1], sizes[2]};
    j.table.probs = std::move(probs);
    j.table.validate();
    return j;
  }

  double& at(std::size_t xp, std::size_t xi, std::size_t y) {
    return table.probs[(xp * table.sizes[1] + xi) * table.sizes[2] + y];
  }
};

// A representation f = g(x_p) computed deterministically from the point view.
struct DeterministicMap {
  std::vector<std::size_t> table;  // size |X^P|, values in [0, out_size)
  std::size_t out_size = 0;

  void validate(std::size_t in_size) const {
    cmcr::detail::require(table.size() == in_size, "DeterministicMap: domain size mismatch");
    cmcr::detail::require(out_size >= 1 && out_size <= kMaxAlphabet,
                          "DeterministicMap: bad output alphabet");
    for (std::size_t f : table)
      cmcr::detail::require(f < out_size, "DeterministicMap: value out of range");
  }
};

// Joint over (point, image, label, representation) induced by a deterministic
// representation of the point view.
inline JointTable extend_with_map(const DiscreteJoint& j, const DeterministicMap& map) {
  map.validate(j.table.sizes[0]);
  JointTable t;
  t.sizes = {j.table.sizes[0], j.table.sizes[1], j.table.sizes[2], map.out_size};
  t.probs.assign(t.cell_count(), 0.0);
  const std::size_t si = j.table.sizes[1];
  const std::size_t sy = j.table.sizes[2];
  for (std::size_t xp = 0; xp < j.table.sizes[0]; ++xp)
    for (std::size_t xi = 0; xi < si; ++xi)
      for (std::size_t y = 0; y < sy; ++y) {
        const double p = j.table.probs[(xp * si + xi) * sy + y];
        const std::size_t f = map.table[xp];
        t.probs[((xp * si + xi) * sy + y) * map.out_size + f] = p;
      }
  return t;
}

// ---------------------------------------------------------------------------
// Verification reports.

struct Theorem1Report {
  // Residual of I(XP,XI;Y) = I(XP;Y) + I(XI;Y|XP).
  double chain_rule_residual = 0.0;
  // Residual of I(XP;Y) - I(XP;Y|XI) = I(XP;XI) - I(XP;XI|Y).
  double co_information_residual = 0.0;
  // Q = I(XP,XI;Y) - I(XP;Y|XI) - I(XI;Y|XP): the information retained by an
  // optimal contrastively distilled point representation.
  double contrastive_info = 0.0;
  double point_label_info = 0.0;   // I(XP;Y)
  double specific_info_point = 0.0;  // I(XP;Y|XI), the non-redundancy constant
  double specific_info_image = 0.0;  // I(XI;Y|XP)
  bool strict_inequality = false;    // Q < I(XP;Y) - 1e-12
};

inline Theorem1Report verify_theorem1(const DiscreteJoint& j) {
  const JointTable& t = j.table;
  const VarSet P{kVarPoint}, I{kVarImage}, Y{kVarLabel}, PI{kVarPoint, kVarImage};
  Theorem1Report r;
  const double i_pi_y = mutual_info(t, PI, Y);
  const double i_p_y = mutual_info(t, P, Y);
  const double i_i_y_given_p = conditional_mi(t, I, Y, P);
  const double i_p_y_given_i = conditional_mi(t, P, Y, I);
  const double i_p_i = mutual_info(t, P, I);
  const double i_p_i_given_y = conditional_mi(t, P, I, Y);

  r.chain_rule_residual = std::abs(i_pi_y - (i_p_y + i_i_y_given_p));
  r.co_information_residual =
      std::abs((i_p_y - i_p_y_given_i) - (i_p_i - i_p_i_given_y));
  r.contrastive_info = i_pi_y - i_p_y_given_i - i_i_y_given_p;
  r.point_label_info = i_p_y;
  r.specific_info_point = i_p_y_given_i;
  r.specific_info_image = i_i_y_given_p;
  r.strict_inequality = r.contrastive_info < i_p_y - 1e-12;
  return r;
}

struct Theorem2Report {
  double bayes_err = 0.0;          // P_e of predicting the label from F
  double cond_entropy = 0.0;       // H(Y|F)
  bool log_bound_holds = false;    // -ln(1 - P_e) <= H(Y|F) + 1e-12
  // Residual of I(F;Y) = I(F;XI) + I(F;XP|XI) - I(F;XP|Y); vanishes because
  // I(F;Y|XP) = I(F;XI|XP) = 0 for a deterministic representation.
  double decomposition_residual = 0.0;
  double stated_bound = 0.0;       // 1 - exp(-H(Y) + I(F;XI) + I(F;XP|XI) - I(F;XP|Y))
  bool bound_holds = false;        // P_e <= stated_bound + 1e-12
  bool vacuous = false;            // P_e == 1 exactly; log bound undefined
};

inline Theorem2Report verify_theorem2(const DiscreteJoint& j, const DeterministicMap& map) {
  const JointTable t = extend_with_map(j, map);
  const VarSet P{kVarPoint}, I{kVarImage}, Y{kVarLabel}, F{3};
  Theorem2Report r;
  r.bayes_err = bayes_error(t, F, kVarLabel);
  r.cond_entropy = entropy(t, {kVarLabel, 3}) - entropy(t, F);

  const double i_f_i = mutual_info(t, F, I);
  const double i_f_p_given_i = conditional_mi(t, F, P, I);
  const double i_f_p_given_y = conditional_mi(t, F, P, Y);
  const double i_f_y = mutual_info(t, F, Y);
  r.decomposition_residual = std::abs(i_f_y - (i_f_i + i_f_p_given_i - i_f_p_given_y));

  const double exponent = -entropy(t, Y) + i_f_i + i_f_p_given_i - i_f_p_given_y;
  r.stated_bound = 1.0 - std::exp(exponent);
  if (r.bayes_err >= 1.0) {
    r.vacuous = true;  // cannot evaluate -ln(1 - P_e)
    r.log_bound_holds = true;
    r.bound_holds = r.bayes_err <= r.stated_bound + 1e-12;
    return r;
  }
  r.log_bound_holds = -std::log(1.0 - r.bayes_err) <= r.cond_entropy + 1e-12;
  r.bound_holds = r.bayes_err <= r.stated_bound + 1e-12;
  return r;
}

// ---------------------------------------------------------------------------
// Seeded random instances for the verification harness.

// Probabilities from the flat simplex (normalized unit-rate exponentials).
inline DiscreteJoint random_joint(std::array<std::size_t, 3> sizes, std::uint64_t seed) {
  SplitRng rng(seed);
  std::size_t cells = sizes[0] * sizes[1] * sizes[2];
  std::vector<double> p(cells);
  double total = 0.0;
  for (double& x : p) {
    x = -std::log(1.0 - rng.next_uniform());  // Exp(1)
    total += x;
  }
  for (double& x : p) x /= total;
  return DiscreteJoint::create(sizes, std::move(p));
}

inline DeterministicMap random_map(std::size_t in_size, std::size_t out_size,
                                   std::uint64_t seed) {
  SplitRng rng(seed);
  DeterministicMap m;
  m.out_size = out_size;
  m.table.resize(in_size);
  for (auto& f : m.table) f = rng.next_index(out_size);
  return m;
}

}  // namespace cmcr::info
