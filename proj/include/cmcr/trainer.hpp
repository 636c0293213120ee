#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "cmcr/codebook.hpp"
#include "cmcr/encoders.hpp"
#include "cmcr/objectives.hpp"
#include "cmcr/optimizer.hpp"
#include "cmcr/pretext.hpp"
#include "cmcr/scene.hpp"

// The pretraining loop: per scene, encode both modalities, mask, filter
// pairs, quantize shared features, evaluate the enabled loss terms, and run
// one Adam step per batch with an EMA codebook update. Scene forwards within
// a batch may run in parallel against read-only snapshots; gradients, usage
// counts, and EMA inputs are reduced in scene order so the thread count never
// changes the result.
namespace cmcr::train {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr_max = 0.001;
  std::size_t batch_size = 4;
  double mask_ratio = 0.5;
  std::size_t n_queries = 200;  // per scene per step, desk-scale stand-in for 2000
  double tau = 0.07;
  std::size_t codebook_size = 64;
  double gamma = 0.99;
  std::size_t m_max = 256;  // sampled pair cap per scene
  double query_band = 0.2;
  std::size_t occupancy_knn = 4;
  std::uint64_t seed = 1;

  // Exactly the six loss terms.
  bool enable_nce = true;
  bool enable_commit = true;
  bool enable_rec = true;
  bool enable_occ = true;
  bool enable_orth = true;
  bool enable_kl = true;

  // Pipeline switches (not loss terms): the unified codebook stage and the
  // 3D-feature substitution inside masked image regions.
  bool enable_codebook = true;
  bool geo_substitution = true;
  vq::CommitmentMode commitment_mode = vq::CommitmentMode::kAnchored3D;

  std::size_t revive_threshold_steps = 32;
  std::size_t revive_period_epochs = 1;
  obj::LossWeights weights;
  enc::EncoderConfig encoder;
  std::size_t n_threads = 0;  // 0: use hardware concurrency (result-invariant)

  void validate() const {
    detail::require(epochs > 0 && batch_size > 0 && n_queries > 0 && m_max >= 2,
                    "TrainConfig: counts must be positive (m_max >= 2)");
    detail::require(lr_max > 0 && tau > 0 && query_band > 0,
                    "TrainConfig: rates must be positive");
    detail::require(mask_ratio > 0.0 && mask_ratio < 1.0,
                    "TrainConfig: mask_ratio must lie in (0, 1)");
    detail::require(codebook_size > 0 && gamma > 0 && gamma < 1,
                    "TrainConfig: codebook_size > 0, gamma in (0, 1)");
    encoder.validate();
  }
};

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::array<double, 6> terms = {};  // nce, commit, rec, occ, orth, kl
  double joint_usage = 0.0;
  double perplexity = 0.0;
};

struct TrainResult {
  TrainConfig config;
  ParamSet params;
  vq::Codebook book;  // zero-sized table when the codebook stage is disabled
  std::vector<MetricsRow> metrics;
};

namespace detail_train {

// RNG stream tags fanned out from the root seed.
constexpr std::uint64_t kStreamParams = 1;
constexpr std::uint64_t kStreamCodebook = 2;
constexpr std::uint64_t kStreamShuffle = 3;
constexpr std::uint64_t kStreamMask = 4;
constexpr std::uint64_t kStreamQueries = 5;
constexpr std::uint64_t kStreamPairs = 6;
constexpr std::uint64_t kStreamRevive = 7;

struct SceneCache {
  Matrix norm_coords;
  ad::RowMix knn;
  Matrix patches;
  std::vector<std::size_t> corr_point_rows;
  std::vector<std::size_t> corr_pixel_rows;
};

inline SceneCache build_scene_cache(const synth::SceneSample& s, const enc::EncoderConfig& cfg) {
  SceneCache c;
  c.norm_coords = enc::normalized_coords(s.points);
  c.knn = enc::knn_mean_mix(s.points, cfg.knn);
  c.patches = enc::patch_matrix(s.image, s.image_h, s.image_w, cfg.patch);
  c.corr_point_rows.reserve(s.correspondences.size());
  c.corr_pixel_rows.reserve(s.correspondences.size());
  for (const auto& corr : s.correspondences) {
    c.corr_point_rows.push_back(corr.point_index);
    c.corr_pixel_rows.push_back(corr.pixel_row * s.image_w + corr.pixel_col);
  }
  return c;
}

struct SceneOutcome {
  std::vector<Matrix> grads;  // aligned with the ParamSet order
  double total = 0.0;
  std::array<double, 6> terms = {};
  // Inputs for the post-batch codebook bookkeeping.
  std::vector<std::size_t> usage_2d, usage_3d;
  Matrix ema_2d_features;
  std::vector<std::size_t> ema_2d_indices;
  Matrix ema_3d_features;
  std::vector<std::size_t> ema_3d_indices;
};

// Full forward and backward for one scene against read-only parameter and
// codebook snapshots. The 1/batch scaling is applied at the root so reduced
// gradients sum to the batch-mean gradient.
inline SceneOutcome scene_forward(const synth::SceneSample& scene, const SceneCache& cache,
                                  const enc::GridOps& grid, const ParamSet& snapshot,
                                  const Matrix* book_entries, const TrainConfig& cfg,
                                  std::uint64_t epoch, std::size_t scene_id, double inv_batch) {
  SplitRng root(cfg.seed);
  const std::uint64_t mask_seed =
      root.fork(kStreamMask).fork(epoch).fork(scene_id).next_u64();
  const std::uint64_t query_seed =
      root.fork(kStreamQueries).fork(epoch).fork(scene_id).next_u64();
  const std::uint64_t pair_seed =
      root.fork(kStreamPairs).fork(epoch).fork(scene_id).next_u64();

  auto point_latent = enc::encode_points(cache.norm_coords, cache.knn, snapshot);
  auto patch_latent = enc::encode_image(cache.patches, grid, snapshot);
  auto bundle = enc::project_heads(point_latent, patch_latent, grid, snapshot);

  const auto plan = pretext::make_mask(grid.grid_h, grid.grid_w, cfg.mask_ratio, mask_seed);
  const auto survivors = pretext::filter_pairs(scene.correspondences, plan, grid.patch);

  SceneOutcome out;
  if (cfg.enable_codebook) {
    detail::require(book_entries != nullptr, "scene_forward: codebook enabled but absent");
    out.usage_2d = vq::nearest_codeword_indices(bundle.f2d_shared.data(), *book_entries);
    out.usage_3d = vq::nearest_codeword_indices(bundle.f3d_shared.data(), *book_entries);
    bundle.f2d_quantized =
        vq::straight_through_quantize(bundle.f2d_shared, *book_entries, out.usage_2d);
    bundle.f3d_quantized =
        vq::straight_through_quantize(bundle.f3d_shared, *book_entries, out.usage_3d);
  } else {
    bundle.f2d_quantized = bundle.f2d_shared;
    bundle.f3d_quantized = bundle.f3d_shared;
  }

  auto zero = [] { return ad::DiffValue::scalar(0.0); };
  ad::DiffValue nce = zero();
  if (cfg.enable_nce) {
    const auto pairs = obj::sample_pairs(survivors, scene.image_w, cfg.m_max, pair_seed);
    if (pairs.usable()) {
      nce = obj::info_nce(ad::gather_rows(bundle.f3d_shared, pairs.point_rows),
                          ad::gather_rows(bundle.f2d_shared, pairs.pixel_rows), cfg.tau);
    }
  }

  ad::DiffValue commit = zero();
  if (cfg.enable_codebook && cfg.enable_commit && !cache.corr_point_rows.empty()) {
    commit = vq::commitment_loss(ad::gather_rows(bundle.f2d_shared, cache.corr_pixel_rows),
                                 ad::gather_rows(bundle.f3d_shared, cache.corr_point_rows),
                                 ad::DiffValue::constant(*book_entries), cfg.commitment_mode);
  }

  ad::DiffValue rec = zero();
  if (cfg.enable_rec) {
    const auto& fill_pairs =
        cfg.geo_substitution ? scene.correspondences : std::vector<synth::Correspondence>{};
    auto substituted =
        pretext::substitute_masked_features(bundle.f2d_quantized, plan, fill_pairs,
                                            bundle.f3d_quantized, snapshot.get("mask_token"),
                                            grid);
    rec = pretext::mim_loss(substituted, bundle.g2d_specific, pretext::image_decoder(snapshot),
                            scene.image, plan, grid);
  }

  ad::DiffValue occ = zero();
  if (cfg.enable_occ) {
    const auto queries =
        synth::sample_occupancy_queries(scene, cfg.n_queries, cfg.query_band, query_seed);
    auto combined = ad::add(bundle.f3d_quantized, bundle.g3d_specific);
    auto qf = pretext::occupancy_features(queries, scene.points, combined, cfg.occupancy_knn);
    occ = pretext::occupancy_loss(queries,
                                  pretext::predict_occupancy(qf, pretext::occupancy_decoder(snapshot)));
  }

  ad::DiffValue orth = zero();
  if (cfg.enable_orth) {
    orth = obj::orthogonal_loss(bundle.f2d_shared, bundle.g2d_specific, bundle.f3d_shared,
                                bundle.g3d_specific);
  }

  ad::DiffValue kl = cfg.enable_kl ? obj::kl_slot(bundle.g3d_specific, scene) : zero();

  auto loss = obj::total_loss(std::move(nce), std::move(commit), std::move(rec), std::move(occ),
                              std::move(orth), std::move(kl), cfg.weights);
  out.total = loss.total.item();
  out.terms = loss.detached_terms();
  ad::backward(ad::scale(loss.total, inv_batch));

  out.grads.reserve(snapshot.size());
  for (const auto& [name, value] : snapshot.items()) out.grads.push_back(value.grad());

  if (cfg.enable_codebook && !cache.corr_point_rows.empty()) {
    const std::size_t m = cache.corr_point_rows.size();
    const std::size_t c = bundle.f2d_shared.cols();
    out.ema_2d_features = Matrix(m, c);
    out.ema_3d_features = Matrix(m, c);
    out.ema_2d_indices.reserve(m);
    out.ema_3d_indices.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t px = cache.corr_pixel_rows[i];
      const std::size_t pt = cache.corr_point_rows[i];
      std::copy_n(bundle.f2d_shared.data().row_ptr(px), c, out.ema_2d_features.row_ptr(i));
      std::copy_n(bundle.f3d_shared.data().row_ptr(pt), c, out.ema_3d_features.row_ptr(i));
      out.ema_2d_indices.push_back(out.usage_2d[px]);
      out.ema_3d_indices.push_back(out.usage_3d[pt]);
    }
  }
  return out;
}

inline vq::Codebook init_codebook(const TrainConfig& cfg,
                                  const std::vector<synth::SceneSample>& scenes,
                                  const std::vector<SceneCache>& caches,
                                  const enc::GridOps& grid, const ParamSet& params) {
  // Seed codewords from the first batch's corresponded shared features.
  std::vector<Matrix> rows;
  std::size_t total_rows = 0;
  const std::size_t n = std::min(cfg.batch_size, scenes.size());
  for (std::size_t s = 0; s < n; ++s) {
    auto bundle = enc::project_heads(enc::encode_points(caches[s].norm_coords, caches[s].knn, params),
                                     enc::encode_image(caches[s].patches, grid, params), grid,
                                     params);
    const std::size_t m = caches[s].corr_point_rows.size();
    Matrix features(2 * m, cfg.encoder.shared_dim);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(bundle.f3d_shared.data().row_ptr(caches[s].corr_point_rows[i]),
                  cfg.encoder.shared_dim, features.row_ptr(i));
      std::copy_n(bundle.f2d_shared.data().row_ptr(caches[s].corr_pixel_rows[i]),
                  cfg.encoder.shared_dim, features.row_ptr(m + i));
    }
    total_rows += features.rows;
    rows.push_back(std::move(features));
  }
  detail::require(total_rows > 0, "init_codebook: no corresponded features in the first batch");
  Matrix donor(total_rows, cfg.encoder.shared_dim);
  std::size_t at = 0;
  for (const auto& r : rows) {
    std::copy(r.v.begin(), r.v.end(), donor.v.begin() + static_cast<std::ptrdiff_t>(at));
    at += r.v.size();
  }
  return vq::init_codebook_from_features(donor, cfg.codebook_size, cfg.gamma,
                                         SplitRng(cfg.seed).fork(kStreamCodebook).next_u64());
}

}  // namespace detail_train

inline TrainResult pretrain(const TrainConfig& cfg,
                            const std::vector<synth::SceneSample>& scenes) {
  cfg.validate();
  detail::require(!scenes.empty(), "pretrain: empty dataset");
  for (const auto& s : scenes)
    detail::require(s.image_h == scenes[0].image_h && s.image_w == scenes[0].image_w,
                    "pretrain: scenes must share one image size");

  using namespace detail_train;
  const enc::GridOps grid =
      enc::make_grid_ops(scenes[0].image_h, scenes[0].image_w, cfg.encoder.patch);
  std::vector<SceneCache> caches;
  caches.reserve(scenes.size());
  for (const auto& s : scenes) caches.push_back(build_scene_cache(s, cfg.encoder));

  TrainResult result;
  result.config = cfg;
  result.params = enc::init_model_params(cfg.encoder, SplitRng(cfg.seed).fork(kStreamParams));
  result.book = cfg.enable_codebook
                    ? init_codebook(cfg, scenes, caches, grid, result.params)
                    : vq::Codebook::create(Matrix(1, cfg.encoder.shared_dim), 0.5);

  Adam adam(result.params);
  const std::size_t steps_per_epoch = (scenes.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t n_threads = cfg.n_threads == 0
                              ? std::max<unsigned>(1, std::thread::hardware_concurrency())
                              : cfg.n_threads;
  n_threads = std::min(n_threads, cfg.batch_size);

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    SplitRng shuffle_rng = SplitRng(cfg.seed).fork(kStreamShuffle).fork(epoch);
    const auto order = shuffle_rng.sample_without_replacement(scenes.size(), scenes.size());

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      const double inv_batch = 1.0 / static_cast<double>(count);
      const double lr = one_cycle_lr(global_step, total_steps, cfg.lr_max);

      std::vector<SceneOutcome> outcomes(count);
      std::vector<std::exception_ptr> errors(count);
      const Matrix* entries = cfg.enable_codebook ? &result.book.entries : nullptr;
      auto run_scene = [&](std::size_t b) {
        try {
          const std::size_t scene_id = order[start + b];
          // Fresh leaves per worker: snapshots are read-only by construction.
          ParamSet snapshot = result.params.clone();
          outcomes[b] = scene_forward(scenes[scene_id], caches[scene_id], grid, snapshot,
                                      entries, cfg, epoch, scene_id, inv_batch);
        } catch (...) {
          errors[b] = std::current_exception();
        }
      };
      if (n_threads <= 1 || count == 1) {
        for (std::size_t b = 0; b < count; ++b) run_scene(b);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, count); ++t) {
          pool.emplace_back([&, t] {
            for (std::size_t b = t; b < count; b += n_threads) run_scene(b);
          });
        }
        for (auto& th : pool) th.join();
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      // Deterministic reduction in scene order.
      MetricsRow row;
      row.step = global_step;
      row.epoch = epoch;
      row.lr = lr;
      result.params.zero_grads();
      Matrix ema_2d_features(0, cfg.encoder.shared_dim), ema_3d_features(0, cfg.encoder.shared_dim);
      std::vector<std::size_t> ema_2d_indices, ema_3d_indices;
      std::vector<Matrix> ema2d_blocks, ema3d_blocks;
      for (std::size_t b = 0; b < count; ++b) {
        SceneOutcome& oc = outcomes[b];
        for (std::size_t p = 0; p < result.params.size(); ++p)
          add_in_place(result.params.items()[p].second.mutable_grad(), oc.grads[p]);
        row.total += oc.total * inv_batch;
        for (std::size_t t = 0; t < 6; ++t) row.terms[t] += oc.terms[t] * inv_batch;
        if (cfg.enable_codebook) {
          for (std::size_t v : oc.usage_2d) result.book.usage_2d[v] += 1.0;
          for (std::size_t v : oc.usage_3d) result.book.usage_3d[v] += 1.0;
          ema2d_blocks.push_back(std::move(oc.ema_2d_features));
          ema3d_blocks.push_back(std::move(oc.ema_3d_features));
          ema_2d_indices.insert(ema_2d_indices.end(), oc.ema_2d_indices.begin(),
                                oc.ema_2d_indices.end());
          ema_3d_indices.insert(ema_3d_indices.end(), oc.ema_3d_indices.begin(),
                                oc.ema_3d_indices.end());
        }
      }
      if (cfg.enable_codebook) {
        const auto stats = vq::usage_stats(result.book);
        row.joint_usage = stats.joint_fraction;
        row.perplexity = stats.perplexity;
      }
      if (!std::isfinite(row.total)) {
        // Preserve the last finite metrics row; do not append the broken one.
        throw std::runtime_error("pretrain: non-finite total loss at step " +
                                 std::to_string(global_step));
      }
      result.metrics.push_back(row);

      adam.step(result.params, lr);
      if (cfg.enable_codebook) {
        auto stack = [&](std::vector<Matrix>& blocks, std::size_t rows_total) {
          Matrix all(rows_total, cfg.encoder.shared_dim);
          std::size_t at = 0;
          for (const auto& blk : blocks) {
            std::copy(blk.v.begin(), blk.v.end(), all.v.begin() + static_cast<std::ptrdiff_t>(at));
            at += blk.v.size();
          }
          return all;
        };
        ema_2d_features = stack(ema2d_blocks, ema_2d_indices.size());
        ema_3d_features = stack(ema3d_blocks, ema_3d_indices.size());
        vq::ema_update(result.book, ema_2d_features, ema_2d_indices, ema_3d_features,
                       ema_3d_indices);
        const bool epoch_end = start + cfg.batch_size >= order.size();
        if (epoch_end && (epoch + 1) % cfg.revive_period_epochs == 0 &&
            ema_3d_features.rows > 0) {
          vq::revive_dead_codes(
              result.book, ema_3d_features,
              static_cast<std::int64_t>(cfg.revive_threshold_steps),
              SplitRng(cfg.seed).fork(detail_train::kStreamRevive).fork(epoch).next_u64());
        }
      }
      ++global_step;
    }
  }
  return result;
}

}  // namespace cmcr::train
