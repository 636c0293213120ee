#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/rng.hpp"

// Multi-modal unified codebook: nearest-codeword quantization with
// straight-through gradients, EMA codeword updates fed by both modalities,
// the 3D-anchored cross-modal commitment loss, usage statistics, and dead
// code revival.
namespace cmcr::vq {

enum class Modality { k2D, k3D };

struct Codebook {
  Matrix entries;  // V x C
  double gamma = 0.99;
  std::vector<double> usage_2d;  // cumulative assignment counts
  std::vector<double> usage_3d;
  std::vector<std::int64_t> steps_since_use;

  static Codebook create(Matrix entries, double gamma) {
    detail::require(gamma > 0.0 && gamma < 1.0, "Codebook: gamma must lie in (0, 1)");
    detail::require(entries.rows > 0, "Codebook: empty entry table");
    detail::require(entries.all_finite(), "Codebook: non-finite entries");
    Codebook b;
    b.gamma = gamma;
    b.usage_2d.assign(entries.rows, 0.0);
    b.usage_3d.assign(entries.rows, 0.0);
    b.steps_since_use.assign(entries.rows, 0);
    b.entries = std::move(entries);
    return b;
  }

  std::size_t size() const { return entries.rows; }
  std::size_t dim() const { return entries.cols; }
};

// Nearest codeword per feature row, ties broken by the smallest index.
inline std::vector<std::size_t> nearest_codeword_indices(const Matrix& features,
                                                         const Matrix& entries) {
  detail::require(features.cols == entries.cols,
                  "nearest_codeword_indices: feature dim " + std::to_string(features.cols) +
                      " != codeword dim " + std::to_string(entries.cols));
  std::vector<std::size_t> indices(features.rows, 0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const double* f = features.row_ptr(i);
    double best = 1e300;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < entries.rows; ++k) {
      const double* e = entries.row_ptr(k);
      double d = 0.0;
      for (std::size_t j = 0; j < features.cols; ++j) {
        const double diff = f[j] - e[j];
        d += diff * diff;
      }
      if (d < best) {  // strict comparison keeps the lowest index on ties
        best = d;
        best_k = k;
      }
    }
    indices[i] = best_k;
  }
  return indices;
}

// Straight-through quantization against a fixed entry table: the forward
// value is exactly the selected codeword, the backward pass hands the
// incoming gradient to the features unchanged.
inline ad::DiffValue straight_through_quantize(const ad::DiffValue& features,
                                               const Matrix& entries,
                                               const std::vector<std::size_t>& indices) {
  Matrix quantized(features.rows(), features.cols());
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(entries.row_ptr(indices[i]), entries.cols, quantized.row_ptr(i));
  return ad::straight_through(features, std::move(quantized));
}

struct QuantizeResult {
  ad::DiffValue quantized;
  std::vector<std::size_t> indices;
};

inline QuantizeResult quantize(const ad::DiffValue& features, Codebook& book,
                               Modality update_usage_for) {
  detail::require(features.data().all_finite(), "quantize: non-finite features");
  QuantizeResult r;
  r.indices = nearest_codeword_indices(features.data(), book.entries);
  r.quantized = straight_through_quantize(features, book.entries, r.indices);
  auto& usage = update_usage_for == Modality::k2D ? book.usage_2d : book.usage_3d;
  for (std::size_t v : r.indices) usage[v] += 1.0;
  return r;
}

// One EMA step from the batch assignments of both modalities:
//   e_v <- gamma * e_v + (1 - gamma) / (n2d_v + n3d_v) * (sum F2D + sum F3D)
// for every codeword assigned at least one feature; unassigned codewords are
// untouched and age by one step. Runs on plain matrices, outside any tape.
inline void ema_update(Codebook& book, const Matrix& features_2d,
                       const std::vector<std::size_t>& indices_2d, const Matrix& features_3d,
                       const std::vector<std::size_t>& indices_3d) {
  detail::require(features_2d.rows == indices_2d.size() &&
                      features_3d.rows == indices_3d.size(),
                  "ema_update: feature/index count mismatch");
  const std::size_t v_count = book.size();
  const std::size_t c = book.dim();
  Matrix sums(v_count, c);
  std::vector<double> counts(v_count, 0.0);
  auto accumulate = [&](const Matrix& f, const std::vector<std::size_t>& idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      detail::require(idx[i] < v_count, "ema_update: codeword index out of range");
      double* srow = sums.row_ptr(idx[i]);
      const double* frow = f.row_ptr(i);
      for (std::size_t j = 0; j < c; ++j) srow[j] += frow[j];
      counts[idx[i]] += 1.0;
    }
  };
  accumulate(features_2d, indices_2d);
  accumulate(features_3d, indices_3d);
  for (std::size_t v = 0; v < v_count; ++v) {
    if (counts[v] == 0.0) {
      ++book.steps_since_use[v];
      continue;
    }
    book.steps_since_use[v] = 0;
    double* e = book.entries.row_ptr(v);
    const double* s = sums.row_ptr(v);
    const double blend = (1.0 - book.gamma) / counts[v];
    for (std::size_t j = 0; j < c; ++j) e[j] = book.gamma * e[j] + blend * s[j];
  }
}

enum class CommitmentMode {
  kAnchored3D,   // codeword chosen by the 3D feature, both modalities align to it
  kPerModality,  // baseline: each modality commits to its own nearest codeword
};

// Commitment loss over row-aligned matched pairs, averaged per pair. The
// codeword targets sit behind a stop-gradient, so the entry table receives no
// gradient; features receive exact gradients.
inline ad::DiffValue commitment_loss(const ad::DiffValue& f2d_pairs,
                                     const ad::DiffValue& f3d_pairs,
                                     const ad::DiffValue& entries,
                                     CommitmentMode mode = CommitmentMode::kAnchored3D) {
  detail::require(f2d_pairs.rows() == f3d_pairs.rows(),
                  "commitment_loss: pair counts differ");
  const std::size_t m = f2d_pairs.rows();
  if (m == 0) {
    detail::warn("commitment_loss: no matched pairs; returning 0");
    return ad::DiffValue::scalar(0.0);
  }
  const auto anchor_3d = nearest_codeword_indices(f3d_pairs.data(), entries.data());
  const auto indices_2d = mode == CommitmentMode::kAnchored3D
                              ? anchor_3d
                              : nearest_codeword_indices(f2d_pairs.data(), entries.data());
  auto frozen = ad::detach(entries);
  auto term_2d = ad::sum_all(ad::square(ad::sub(f2d_pairs, ad::gather_rows(frozen, indices_2d))));
  auto term_3d = ad::sum_all(ad::square(ad::sub(f3d_pairs, ad::gather_rows(frozen, anchor_3d))));
  return ad::scale(ad::add(term_2d, term_3d), 1.0 / static_cast<double>(m));
}

inline ad::DiffValue commitment_loss(const ad::DiffValue& f2d_pairs,
                                     const ad::DiffValue& f3d_pairs, const Codebook& book,
                                     CommitmentMode mode = CommitmentMode::kAnchored3D) {
  return commitment_loss(f2d_pairs, f3d_pairs, ad::DiffValue::constant(book.entries), mode);
}

struct UsageStats {
  std::vector<double> usage_2d;
  std::vector<double> usage_3d;
  double joint_fraction = 0.0;  // used by both modalities / used at all
  double perplexity = 0.0;      // exp entropy of the total usage distribution
};

inline UsageStats usage_stats(const Codebook& book) {
  UsageStats s;
  s.usage_2d = book.usage_2d;
  s.usage_3d = book.usage_3d;
  std::size_t used = 0, joint = 0;
  double total = 0.0;
  for (std::size_t v = 0; v < book.size(); ++v) {
    const double u = book.usage_2d[v] + book.usage_3d[v];
    total += u;
    if (u > 0.0) {
      ++used;
      if (book.usage_2d[v] > 0.0 && book.usage_3d[v] > 0.0) ++joint;
    }
  }
  if (used == 0) {
    s.joint_fraction = 0.0;
    s.perplexity = 1.0;
    return s;
  }
  s.joint_fraction = static_cast<double>(joint) / static_cast<double>(used);
  double entropy = 0.0;
  for (std::size_t v = 0; v < book.size(); ++v) {
    const double p = (book.usage_2d[v] + book.usage_3d[v]) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  s.perplexity = std::exp(entropy);
  return s;
}

// Codewords unused for at least threshold_steps EMA updates are reset to a
// random donor feature row plus small noise.
inline std::size_t revive_dead_codes(Codebook& book, const Matrix& donor_features,
                                     std::int64_t threshold_steps, std::uint64_t seed) {
  detail::require(donor_features.rows > 0, "revive_dead_codes: empty donor features");
  detail::require(donor_features.cols == book.dim(), "revive_dead_codes: donor dim mismatch");
  SplitRng rng(seed);
  std::size_t revived = 0;
  for (std::size_t v = 0; v < book.size(); ++v) {
    if (book.steps_since_use[v] < threshold_steps) continue;
    const std::size_t donor = rng.next_index(donor_features.rows);
    double* e = book.entries.row_ptr(v);
    const double* d = donor_features.row_ptr(donor);
    for (std::size_t j = 0; j < book.dim(); ++j) e[j] = d[j] + 1e-3 * rng.next_normal();
    book.steps_since_use[v] = 0;
    ++revived;
  }
  return revived;
}

// Initial entries drawn from shared-feature rows plus small noise (avoids
// cold-start collapse onto a few codewords).
inline Codebook init_codebook_from_features(const Matrix& features, std::size_t v_count,
                                            double gamma, std::uint64_t seed) {
  detail::require(features.rows > 0, "init_codebook_from_features: empty features");
  SplitRng rng(seed);
  Matrix entries(v_count, features.cols);
  for (std::size_t v = 0; v < v_count; ++v) {
    const std::size_t row = rng.next_index(features.rows);
    const double* f = features.row_ptr(row);
    double* e = entries.row_ptr(v);
    for (std::size_t j = 0; j < features.cols; ++j) e[j] = f[j] + 1e-2 * rng.next_normal();
  }
  return Codebook::create(std::move(entries), gamma);
}

}  // namespace cmcr::vq
