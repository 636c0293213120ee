#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/rng.hpp"
#include "cmcr/scene.hpp"

// Contrastive, orthogonality, and aggregate objectives, plus the pluggable
// auxiliary semantic-consistency slot.
namespace cmcr::obj {

// Point-pixel InfoNCE with 3D anchors: negatives for pair i are the 2D
// features of every sampled pair in the same scene. Stabilized with a row-max
// shift inside the log-sum-exp.
inline ad::DiffValue info_nce(const ad::DiffValue& f3d_pairs, const ad::DiffValue& f2d_pairs,
                              double tau) {
  detail::require(tau > 0.0, "info_nce: temperature must be positive");
  detail::require(f3d_pairs.rows() == f2d_pairs.rows(), "info_nce: pair counts differ");
  const std::size_t m = f3d_pairs.rows();
  detail::require(m >= 2, "info_nce: need at least 2 pairs (got " + std::to_string(m) + ")");

  auto logits = ad::scale(ad::matmul(f3d_pairs, ad::transpose(f2d_pairs)), 1.0 / tau);
  // Row maxima are constants; the gradient of the shifted log-sum-exp is the
  // softmax either way.
  Matrix row_max_full(m, m);
  Matrix row_max_col(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.data().row_ptr(i);
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    row_max_col(i, 0) = mx;
    for (std::size_t j = 0; j < m; ++j) row_max_full(i, j) = mx;
  }
  auto shifted = ad::sub(logits, ad::DiffValue::constant(row_max_full));
  auto lse = ad::add(ad::DiffValue::constant(row_max_col), ad::log(ad::row_sums(ad::exp(shifted))));
  auto positives = ad::scale(ad::rows_dot(f3d_pairs, f2d_pairs), 1.0 / tau);
  return ad::mean_all(ad::sub(lse, positives));
}

struct PairSample {
  std::vector<std::size_t> point_rows;  // rows into the 3D feature matrix
  std::vector<std::size_t> pixel_rows;  // rows into the pixel-resolution 2D matrix

  std::size_t size() const { return point_rows.size(); }
  bool usable() const { return size() >= 2; }
};

// Up to m_max surviving correspondences, sampled uniformly without
// replacement; with fewer than 2 survivors the result is empty and the caller
// skips the contrastive term for the scene.
inline PairSample sample_pairs(const std::vector<synth::Correspondence>& surviving,
                               std::size_t image_w, std::size_t m_max, std::uint64_t seed) {
  PairSample out;
  if (surviving.size() < 2) return out;
  SplitRng rng(seed);
  const auto picks =
      rng.sample_without_replacement(surviving.size(), std::min(m_max, surviving.size()));
  out.point_rows.reserve(picks.size());
  out.pixel_rows.reserve(picks.size());
  for (std::size_t k : picks) {
    const auto& c = surviving[k];
    out.point_rows.push_back(c.point_index);
    out.pixel_rows.push_back(c.pixel_row * image_w + c.pixel_col);
  }
  return out;
}

// Cross-correlation penalty between shared and specific features, per
// modality. Rows are scaled by 1/sqrt(m) before the product so the magnitude
// does not grow with the number of rows; the zero set is unchanged.
inline ad::DiffValue orthogonal_loss(const ad::DiffValue& f_shared,
                                     const ad::DiffValue& g_specific) {
  detail::require(f_shared.rows() == g_specific.rows(), "orthogonal_loss: row counts differ");
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(f_shared.rows()));
  auto fn = ad::scale(f_shared, inv_sqrt_m);
  auto gn = ad::scale(g_specific, inv_sqrt_m);
  return ad::sum_all(ad::square(ad::matmul(ad::transpose(fn), gn)));
}

inline ad::DiffValue orthogonal_loss(const ad::DiffValue& f2d, const ad::DiffValue& g2d,
                                     const ad::DiffValue& f3d, const ad::DiffValue& g3d) {
  return ad::add(orthogonal_loss(f2d, g2d), orthogonal_loss(f3d, g3d));
}

// Pluggable auxiliary loss applied to the 3D specific features. The built-in
// default contributes exactly zero; an external implementation can be
// registered at runtime.
using KlSlotFn = std::function<ad::DiffValue(const ad::DiffValue& g3d_specific,
                                             const synth::SceneSample& scene)>;

inline KlSlotFn& kl_slot_registry() {
  static KlSlotFn slot;
  return slot;
}

inline void register_kl_slot(KlSlotFn fn) { kl_slot_registry() = std::move(fn); }
inline void unregister_kl_slot() { kl_slot_registry() = nullptr; }

inline ad::DiffValue kl_slot(const ad::DiffValue& g3d_specific,
                             const synth::SceneSample& scene) {
  const KlSlotFn& fn = kl_slot_registry();
  if (!fn) return ad::DiffValue::scalar(0.0);
  ad::DiffValue v = fn(g3d_specific, scene);
  detail::require(v.data().is_scalar(), "kl_slot: registered implementation must return 1x1");
  detail::require(std::isfinite(v.item()), "kl_slot: registered implementation returned NaN");
  return v;
}

constexpr std::array<const char*, 6> kLossTermNames = {"nce", "commit", "rec",
                                                       "occ", "orth", "kl"};

struct LossWeights {
  double nce = 1.0, commit = 1.0, rec = 1.0, occ = 1.0, orth = 1.0, kl = 1.0;

  double by_name(const std::string& name) const {
    if (name == "nce") return nce;
    if (name == "commit") return commit;
    if (name == "rec") return rec;
    if (name == "occ") return occ;
    if (name == "orth") return orth;
    if (name == "kl") return kl;
    detail::fail("LossWeights: unknown term " + name);
  }
};

struct LossBundle {
  ad::DiffValue nce, commit, rec, occ, orth, kl;
  ad::DiffValue total;
  LossWeights weights;

  std::array<double, 6> detached_terms() const {
    return {nce.item(), commit.item(), rec.item(), occ.item(), orth.item(), kl.item()};
  }
};

// Weighted sum of the six terms (unit weights by default). Every term must be
// a finite scalar; disabled terms are passed in as constant zeros.
inline LossBundle total_loss(ad::DiffValue nce, ad::DiffValue commit, ad::DiffValue rec,
                             ad::DiffValue occ, ad::DiffValue orth, ad::DiffValue kl,
                             const LossWeights& weights = {}) {
  LossBundle b;
  b.weights = weights;
  b.nce = std::move(nce);
  b.commit = std::move(commit);
  b.rec = std::move(rec);
  b.occ = std::move(occ);
  b.orth = std::move(orth);
  b.kl = std::move(kl);
  const std::array<const ad::DiffValue*, 6> terms = {&b.nce, &b.commit, &b.rec,
                                                     &b.occ, &b.orth, &b.kl};
  const std::array<double, 6> w = {weights.nce, weights.commit, weights.rec,
                                   weights.occ, weights.orth, weights.kl};
  ad::DiffValue total = ad::DiffValue::scalar(0.0);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    detail::require(terms[t]->data().is_scalar(),
                    std::string("total_loss: term ") + kLossTermNames[t] + " is not scalar");
    detail::require(std::isfinite(terms[t]->item()),
                    std::string("total_loss: term ") + kLossTermNames[t] + " is not finite");
    total = ad::add(total, ad::scale(*terms[t], w[t]));
  }
  b.total = std::move(total);
  return b;
}

}  // namespace cmcr::obj
