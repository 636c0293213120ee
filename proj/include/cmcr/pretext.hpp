#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/encoders.hpp"
#include "cmcr/rng.hpp"
#include "cmcr/scene.hpp"

// The two modality-specific pretext tasks: masked image modeling with
// 3D-feature substitution in masked regions, and occupancy estimation around
// query points.
namespace cmcr::pretext {

struct MaskPlan {
  std::vector<std::size_t> masked_patch_ids;  // sorted, unique
  double mask_ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t grid_h = 0, grid_w = 0;

  bool is_masked(std::size_t patch_id) const {
    return std::binary_search(masked_patch_ids.begin(), masked_patch_ids.end(), patch_id);
  }
};

// Uniform sample without replacement of round(ratio * total) patches.
inline MaskPlan make_mask(std::size_t grid_h, std::size_t grid_w, double ratio,
                          std::uint64_t seed) {
  detail::require(ratio > 0.0 && ratio < 1.0, "make_mask: ratio must lie in (0, 1)");
  MaskPlan plan;
  plan.mask_ratio = ratio;
  plan.seed = seed;
  plan.grid_h = grid_h;
  plan.grid_w = grid_w;
  const std::size_t total = grid_h * grid_w;
  const auto count = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(total)));
  SplitRng rng(seed);
  plan.masked_patch_ids = rng.sample_without_replacement(total, count);
  std::sort(plan.masked_patch_ids.begin(), plan.masked_patch_ids.end());
  return plan;
}

// Keeps only pairs whose pixel does not fall inside a masked patch.
inline std::vector<synth::Correspondence> filter_pairs(
    const std::vector<synth::Correspondence>& correspondences, const MaskPlan& plan,
    std::size_t patch) {
  std::vector<synth::Correspondence> surviving;
  surviving.reserve(correspondences.size());
  for (const auto& c : correspondences) {
    const std::size_t patch_id = (c.pixel_row / patch) * plan.grid_w + (c.pixel_col / patch);
    if (!plan.is_masked(patch_id)) surviving.push_back(c);
  }
  if (surviving.empty() && !correspondences.empty()) {
    detail::warn("filter_pairs: every pair fell in a masked region");
  }
  return surviving;
}

// Masked-region feature substitution: unmasked pixels keep their own shared
// features; masked pixels take the mean of their corresponding points'
// quantized 3D features, or the mask token when nothing corresponds.
// Differentiable through all three sources.
inline ad::DiffValue substitute_masked_features(
    const ad::DiffValue& f2d_quantized, const MaskPlan& plan,
    const std::vector<synth::Correspondence>& correspondences,
    const ad::DiffValue& f3d_quantized, const ad::DiffValue& mask_token,
    const enc::GridOps& grid) {
  const std::size_t pixels = grid.image_h * grid.image_w;
  detail::require(f2d_quantized.rows() == pixels,
                  "substitute_masked_features: pixel row count mismatch");

  std::vector<std::vector<std::pair<std::size_t, double>>> keep(pixels);
  std::vector<std::vector<std::pair<std::size_t, double>>> from_points(pixels);
  std::vector<std::vector<std::pair<std::size_t, double>>> from_token(pixels);
  std::vector<std::vector<std::size_t>> points_at(pixels);
  for (const auto& c : correspondences) {
    points_at[c.pixel_row * grid.image_w + c.pixel_col].push_back(c.point_index);
  }
  for (std::size_t r = 0; r < grid.image_h; ++r) {
    for (std::size_t c = 0; c < grid.image_w; ++c) {
      const std::size_t px = r * grid.image_w + c;
      if (!plan.is_masked(grid.patch_of_pixel(r, c))) {
        keep[px].emplace_back(px, 1.0);
      } else if (!points_at[px].empty()) {
        const double w = 1.0 / static_cast<double>(points_at[px].size());
        for (std::size_t pt : points_at[px]) from_points[px].emplace_back(pt, w);
      } else {
        from_token[px].emplace_back(0, 1.0);
      }
    }
  }
  auto kept = ad::row_mix(ad::RowMix::build(pixels, pixels, keep), f2d_quantized);
  auto pooled =
      ad::row_mix(ad::RowMix::build(pixels, f3d_quantized.rows(), from_points), f3d_quantized);
  auto token = ad::row_mix(ad::RowMix::build(pixels, 1, from_token), mask_token);
  return ad::add(ad::add(kept, pooled), token);
}

struct ImageDecoderParams {
  ad::DiffValue w;  // 2C -> patch*patch*3
  ad::DiffValue b;
};

inline ImageDecoderParams image_decoder(const ParamSet& params) {
  return {params.get("mim.w"), params.get("mim.b")};
}

// Reconstruction loss for masked patches only: pixel features (shared then
// specific) are mean-pooled per masked patch, linearly decoded to the flat
// patch pixels, and compared to ground truth by MSE.
inline ad::DiffValue mim_loss(const ad::DiffValue& substituted_shared,
                              const ad::DiffValue& g2d_specific,
                              const ImageDecoderParams& decoder, const Matrix& image,
                              const MaskPlan& plan, const enc::GridOps& grid) {
  const std::size_t masked = plan.masked_patch_ids.size();
  if (masked == 0) {
    detail::warn("mim_loss: empty mask; returning 0");
    return ad::DiffValue::scalar(0.0);
  }
  const std::size_t pixels = grid.image_h * grid.image_w;
  const double pool_w = 1.0 / static_cast<double>(grid.patch * grid.patch);
  std::vector<std::vector<std::pair<std::size_t, double>>> pool(masked);
  for (std::size_t m = 0; m < masked; ++m) {
    const std::size_t pid = plan.masked_patch_ids[m];
    const std::size_t pr = (pid / grid.grid_w) * grid.patch;
    const std::size_t pc = (pid % grid.grid_w) * grid.patch;
    for (std::size_t dr = 0; dr < grid.patch; ++dr)
      for (std::size_t dc = 0; dc < grid.patch; ++dc)
        pool[m].emplace_back((pr + dr) * grid.image_w + (pc + dc), pool_w);
  }
  const auto pool_mix = ad::RowMix::build(masked, pixels, pool);
  auto pooled = ad::hcat(ad::row_mix(pool_mix, substituted_shared),
                         ad::row_mix(pool_mix, g2d_specific));
  auto decoded = ad::add_rowvec(ad::matmul(pooled, decoder.w), decoder.b);

  const Matrix all_patches = enc::patch_matrix(image, grid.image_h, grid.image_w, grid.patch);
  Matrix target(masked, all_patches.cols);
  for (std::size_t m = 0; m < masked; ++m)
    std::copy_n(all_patches.row_ptr(plan.masked_patch_ids[m]), all_patches.cols,
                target.row_ptr(m));
  return ad::mean_all(ad::square(ad::sub(decoded, ad::DiffValue::constant(target))));
}

struct OccupancyDecoderParams {
  ad::DiffValue w1;  // (C+3) -> hidden
  ad::DiffValue b1;
  ad::DiffValue w2;  // hidden -> 1
  ad::DiffValue b2;
};

inline OccupancyDecoderParams occupancy_decoder(const ParamSet& params) {
  return {params.get("occ.w1"), params.get("occ.b1"), params.get("occ.w2"),
          params.get("occ.b2")};
}

struct QueryFeatures {
  ad::DiffValue pooled;  // Q x C, inverse-distance weighted neighbor features
  Matrix offsets;        // Q x 3, query minus weighted neighbor centroid
};

// Inverse-distance weighted pooling over the k nearest points per query
// (weights 1/(d + 1e-6), normalized); the relative offset to the weighted
// centroid is returned as a constant side input for the decoder.
inline QueryFeatures occupancy_features(const std::vector<synth::OccupancyQuery>& queries,
                                        const Matrix& points, const ad::DiffValue& combined,
                                        std::size_t k) {
  detail::require(points.rows >= 1, "occupancy_features: need at least one point");
  detail::require(k >= 1, "occupancy_features: k must be positive");
  detail::require(combined.rows() == points.rows,
                  "occupancy_features: feature rows != point count");
  const std::size_t k_eff = std::min(k, static_cast<std::size_t>(points.rows));
  const std::size_t q_count = queries.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> mix(q_count);
  Matrix offsets(q_count, 3);
  std::vector<std::pair<double, std::size_t>> dist(points.rows);
  for (std::size_t q = 0; q < q_count; ++q) {
    const synth::Vec3 pos = queries[q].position;
    for (std::size_t i = 0; i < points.rows; ++i) {
      const double dx = pos.x - points(i, 0);
      const double dy = pos.y - points(i, 1);
      const double dz = pos.z - points(i, 2);
      dist[i] = {std::sqrt(dx * dx + dy * dy + dz * dz), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_eff),
                      dist.end());
    double wsum = 0.0;
    for (std::size_t e = 0; e < k_eff; ++e) wsum += 1.0 / (dist[e].first + 1e-6);
    synth::Vec3 centroid{0, 0, 0};
    mix[q].reserve(k_eff);
    for (std::size_t e = 0; e < k_eff; ++e) {
      const std::size_t i = dist[e].second;
      const double w = (1.0 / (dist[e].first + 1e-6)) / wsum;
      mix[q].emplace_back(i, w);
      centroid = centroid + synth::Vec3{points(i, 0), points(i, 1), points(i, 2)} * w;
    }
    offsets(q, 0) = pos.x - centroid.x;
    offsets(q, 1) = pos.y - centroid.y;
    offsets(q, 2) = pos.z - centroid.z;
  }
  QueryFeatures out;
  out.pooled = ad::row_mix(ad::RowMix::build(q_count, points.rows, mix), combined);
  out.offsets = std::move(offsets);
  return out;
}

// MLP over (pooled feature, relative offset); sigmoid output in (0, 1).
inline ad::DiffValue predict_occupancy(const QueryFeatures& features,
                                       const OccupancyDecoderParams& decoder) {
  auto x = ad::hcat(features.pooled, ad::DiffValue::constant(features.offsets));
  auto h = ad::relu(ad::add_rowvec(ad::matmul(x, decoder.w1), decoder.b1));
  return ad::sigmoid(ad::add_rowvec(ad::matmul(h, decoder.w2), decoder.b2));
}

// Binary cross-entropy over the query set (fully negated average; log inputs
// are clamped at the global floor).
inline ad::DiffValue occupancy_loss(const std::vector<synth::OccupancyQuery>& queries,
                                    const ad::DiffValue& predictions) {
  detail::require(!queries.empty(), "occupancy_loss: empty query set");
  detail::require(predictions.rows() == queries.size() && predictions.cols() == 1,
                  "occupancy_loss: predictions must be |Q| x 1");
  Matrix labels(queries.size(), 1);
  for (std::size_t q = 0; q < queries.size(); ++q)
    labels(q, 0) = static_cast<double>(queries[q].occupied);
  auto o = ad::DiffValue::constant(labels);
  auto ones = ad::DiffValue::scalar(1.0);
  auto pos = ad::mul(o, ad::log(predictions));
  auto neg = ad::mul(ad::sub(ones, o), ad::log(ad::sub(ones, predictions)));
  return ad::scale(ad::mean_all(ad::add(pos, neg)), -1.0);
}

}  // namespace cmcr::pretext
