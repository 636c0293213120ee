#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cmcr/autodiff.hpp"
#include "cmcr/params.hpp"
#include "cmcr/scene.hpp"

// Point and image encoders plus the decoupled projection heads producing
// modality-shared (row-normalized) and modality-specific features in a common
// embedding space.
namespace cmcr::enc {

struct EncoderConfig {
  std::size_t latent_width = 32;  // backbone feature width, both modalities
  std::size_t shared_dim = 16;    // common embedding dimension of the heads
  std::size_t patch = 4;          // square patch edge, pixels
  std::size_t knn = 8;            // neighborhood size for point aggregation

  void validate() const {
    detail::require(latent_width > 0 && shared_dim > 0 && patch > 0 && knn > 0,
                    "EncoderConfig: all dimensions must be positive");
  }
};

// The four feature sets of one scene; quantized fields are filled by the
// codebook stage and stay undefined when quantization is disabled.
struct FeatureBundle {
  ad::DiffValue f2d_shared;    // (H*W) x C, unit rows
  ad::DiffValue f3d_shared;    // N x C, unit rows
  ad::DiffValue g2d_specific;  // (H*W) x C
  ad::DiffValue g3d_specific;  // N x C
  ad::DiffValue f2d_quantized;
  ad::DiffValue f3d_quantized;
};

inline ParamSet init_model_params(const EncoderConfig& cfg, SplitRng rng) {
  cfg.validate();
  const std::size_t w = cfg.latent_width;
  const std::size_t c = cfg.shared_dim;
  const std::size_t patch_in = cfg.patch * cfg.patch * 3;
  ParamSet p;
  std::size_t stream = 0;
  auto weights = [&](std::size_t fi, std::size_t fo) {
    SplitRng r = rng.fork(stream++);
    return fan_init(fi, fo, r);
  };
  p.add("point.w1", weights(3, w));
  p.add("point.b1", Matrix(1, w));
  p.add("point.w2", weights(w, w));
  p.add("point.b2", Matrix(1, w));
  p.add("point.w3", weights(2 * w, w));  // re-projection after neighbor concat
  p.add("point.b3", Matrix(1, w));
  p.add("patch.embed_w", weights(patch_in, w));
  p.add("patch.embed_b", Matrix(1, w));
  p.add("patch.mlp_w", weights(w, w));
  p.add("patch.mlp_b", Matrix(1, w));
  // Shared heads are bias-free linear maps so row normalization makes them
  // scale-invariant to the backbone latent.
  p.add("head.shared2d_w", weights(w, c));
  p.add("head.shared3d_w", weights(w, c));
  p.add("head.specific2d_w", weights(w, c));
  p.add("head.specific2d_b", Matrix(1, c));
  p.add("head.specific3d_w", weights(w, c));
  p.add("head.specific3d_b", Matrix(1, c));
  p.add("mask_token", Matrix(1, c));  // zero-initialized
  p.add("mim.w", weights(2 * c, patch_in));
  p.add("mim.b", Matrix(1, patch_in));
  p.add("occ.w1", weights(c + 3, 32));
  p.add("occ.b1", Matrix(1, 32));
  p.add("occ.w2", weights(32, 1));
  p.add("occ.b2", Matrix(1, 1));
  return p;
}

inline ad::DiffValue affine(const ad::DiffValue& x, const ad::DiffValue& w,
                            const ad::DiffValue& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Constant per-scene / per-grid structure.

// Coordinates shifted to zero mean and scaled to unit max radius.
inline Matrix normalized_coords(const Matrix& points) {
  detail::require(points.cols == 3 && points.rows >= 1, "normalized_coords: need Nx3, N >= 1");
  double cx = 0, cy = 0, cz = 0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    cx += points(i, 0);
    cy += points(i, 1);
    cz += points(i, 2);
  }
  const double n = static_cast<double>(points.rows);
  cx /= n;
  cy /= n;
  cz /= n;
  Matrix out(points.rows, 3);
  double radius = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    out(i, 0) = points(i, 0) - cx;
    out(i, 1) = points(i, 1) - cy;
    out(i, 2) = points(i, 2) - cz;
    radius = std::max(radius, std::sqrt(out(i, 0) * out(i, 0) + out(i, 1) * out(i, 1) +
                                        out(i, 2) * out(i, 2)));
  }
  radius = std::max(radius, 1e-9);
  for (double& x : out.v) x /= radius;
  return out;
}

// Mean over the k nearest neighbors (self included; ties break on index).
// N < k degrades to all available points.
inline ad::RowMix knn_mean_mix(const Matrix& points, std::size_t k) {
  const std::size_t n = points.rows;
  const std::size_t k_eff = std::min(k, n);
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = points(i, 0) - points(j, 0);
      const double dy = points(i, 1) - points(j, 1);
      const double dz = points(i, 2) - points(j, 2);
      dist[j] = {dx * dx + dy * dy + dz * dz, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_eff),
                      dist.end());
    rows[i].reserve(k_eff);
    for (std::size_t e = 0; e < k_eff; ++e)
      rows[i].emplace_back(dist[e].second, 1.0 / static_cast<double>(k_eff));
  }
  return ad::RowMix::build(n, n, rows);
}

// Fixed maps for one (H, W, patch) image grid.
struct GridOps {
  std::size_t image_h = 0, image_w = 0, patch = 0;
  std::size_t grid_h = 0, grid_w = 0;
  Matrix patch_pixels;      // (gh*gw) x (p*p*3) ground-truth extractor is built per image
  ad::RowMix neighbor_mix;  // patch grid, mean over self + 4-neighborhood
  ad::RowMix upsample;      // bilinear patch grid -> pixel grid

  std::size_t patch_of_pixel(std::size_t row, std::size_t col) const {
    return (row / patch) * grid_w + (col / patch);
  }
};

inline GridOps make_grid_ops(std::size_t image_h, std::size_t image_w, std::size_t patch) {
  detail::require(patch > 0 && image_h % patch == 0 && image_w % patch == 0,
                  "make_grid_ops: image " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " not divisible by patch " +
                      std::to_string(patch));
  GridOps g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.patch = patch;
  g.grid_h = image_h / patch;
  g.grid_w = image_w / patch;
  const std::size_t cells = g.grid_h * g.grid_w;

  std::vector<std::vector<std::pair<std::size_t, double>>> neigh(cells);
  for (std::size_t r = 0; r < g.grid_h; ++r) {
    for (std::size_t c = 0; c < g.grid_w; ++c) {
      auto& row = neigh[r * g.grid_w + c];
      row.emplace_back(r * g.grid_w + c, 0.0);
      if (r > 0) row.emplace_back((r - 1) * g.grid_w + c, 0.0);
      if (r + 1 < g.grid_h) row.emplace_back((r + 1) * g.grid_w + c, 0.0);
      if (c > 0) row.emplace_back(r * g.grid_w + c - 1, 0.0);
      if (c + 1 < g.grid_w) row.emplace_back(r * g.grid_w + c + 1, 0.0);
      for (auto& [idx, w] : row) w = 1.0 / static_cast<double>(row.size());
    }
  }
  g.neighbor_mix = ad::RowMix::build(cells, cells, neigh);

  // Bilinear interpolation with the align-corners-false convention.
  const double p = static_cast<double>(patch);
  std::vector<std::vector<std::pair<std::size_t, double>>> up(image_h * image_w);
  for (std::size_t r = 0; r < image_h; ++r) {
    for (std::size_t c = 0; c < image_w; ++c) {
      const double gr = std::clamp((static_cast<double>(r) + 0.5) / p - 0.5, 0.0,
                                   static_cast<double>(g.grid_h - 1));
      const double gc = std::clamp((static_cast<double>(c) + 0.5) / p - 0.5, 0.0,
                                   static_cast<double>(g.grid_w - 1));
      const std::size_t r0 = static_cast<std::size_t>(gr);
      const std::size_t c0 = static_cast<std::size_t>(gc);
      const std::size_t r1 = std::min(r0 + 1, g.grid_h - 1);
      const std::size_t c1 = std::min(c0 + 1, g.grid_w - 1);
      const double fr = gr - static_cast<double>(r0);
      const double fc = gc - static_cast<double>(c0);
      auto& row = up[r * image_w + c];
      auto push = [&row](std::size_t idx, double w) {
        if (w == 0.0) return;
        for (auto& [i, acc] : row) {
          if (i == idx) {
            acc += w;
            return;
          }
        }
        row.emplace_back(idx, w);
      };
      push(r0 * g.grid_w + c0, (1 - fr) * (1 - fc));
      push(r0 * g.grid_w + c1, (1 - fr) * fc);
      push(r1 * g.grid_w + c0, fr * (1 - fc));
      push(r1 * g.grid_w + c1, fr * fc);
    }
  }
  g.upsample = ad::RowMix::build(image_h * image_w, cells, up);
  return g;
}

// Flattens each p x p x 3 patch (row-major within the patch, channel fastest)
// into one row.
inline Matrix patch_matrix(const Matrix& image, std::size_t image_h, std::size_t image_w,
                           std::size_t patch) {
  detail::require(image.rows == image_h * image_w && image.cols == 3,
                  "patch_matrix: image must be (H*W)x3");
  const std::size_t gh = image_h / patch;
  const std::size_t gw = image_w / patch;
  Matrix out(gh * gw, patch * patch * 3);
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc) {
      double* row = out.row_ptr(pr * gw + pc);
      std::size_t k = 0;
      for (std::size_t dr = 0; dr < patch; ++dr)
        for (std::size_t dc = 0; dc < patch; ++dc) {
          const std::size_t px = (pr * patch + dr) * image_w + (pc * patch + dc);
          for (std::size_t ch = 0; ch < 3; ++ch) row[k++] = image(px, ch);
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes.

// Per-point MLP on normalized coordinates, one k-NN mean aggregation round
// concatenated back, re-projected to the latent width.
inline ad::DiffValue encode_points(const Matrix& norm_coords, const ad::RowMix& knn,
                                   const ParamSet& params) {
  auto coords = ad::DiffValue::constant(norm_coords);
  auto h1 = ad::relu(affine(coords, params.get("point.w1"), params.get("point.b1")));
  auto h2 = ad::relu(affine(h1, params.get("point.w2"), params.get("point.b2")));
  auto agg = ad::row_mix(knn, h2);
  return affine(ad::hcat(h2, agg), params.get("point.w3"), params.get("point.b3"));
}

inline ad::DiffValue encode_points(const synth::SceneSample& sample, const ParamSet& params,
                                   const EncoderConfig& cfg) {
  return encode_points(normalized_coords(sample.points), knn_mean_mix(sample.points, cfg.knn),
                       params);
}

// Linear patch embedding, one hidden nonlinearity, a 32->32 projection, then
// one 4-neighborhood mean mixing step over the patch grid.
inline ad::DiffValue encode_image(const Matrix& patches, const GridOps& grid,
                                  const ParamSet& params) {
  auto x = ad::DiffValue::constant(patches);
  auto e = ad::relu(affine(x, params.get("patch.embed_w"), params.get("patch.embed_b")));
  auto h = affine(e, params.get("patch.mlp_w"), params.get("patch.mlp_b"));
  return ad::row_mix(grid.neighbor_mix, h);
}

inline ad::DiffValue encode_image(const synth::SceneSample& sample, const ParamSet& params,
                                  const EncoderConfig& cfg) {
  const GridOps grid = make_grid_ops(sample.image_h, sample.image_w, cfg.patch);
  return encode_image(patch_matrix(sample.image, sample.image_h, sample.image_w, cfg.patch),
                      grid, params);
}

// Patch features to pixel resolution. The factor must equal the patch edge
// the grid was built with.
inline ad::DiffValue upsample_bilinear(const ad::DiffValue& patch_features, const GridOps& grid,
                                       std::size_t factor) {
  detail::require(factor == grid.patch, "upsample_bilinear: factor " + std::to_string(factor) +
                                            " != patch size " + std::to_string(grid.patch));
  return ad::row_mix(grid.upsample, patch_features);
}

inline FeatureBundle project_heads(const ad::DiffValue& point_latent,
                                   const ad::DiffValue& patch_latent, const GridOps& grid,
                                   const ParamSet& params) {
  FeatureBundle b;
  auto pixel_latent = upsample_bilinear(patch_latent, grid, grid.patch);
  b.f2d_shared = ad::l2_normalize_rows(ad::matmul(pixel_latent, params.get("head.shared2d_w")));
  b.g2d_specific =
      affine(pixel_latent, params.get("head.specific2d_w"), params.get("head.specific2d_b"));
  b.f3d_shared = ad::l2_normalize_rows(ad::matmul(point_latent, params.get("head.shared3d_w")));
  b.g3d_specific =
      affine(point_latent, params.get("head.specific3d_w"), params.get("head.specific3d_b"));
  return b;
}

}  // namespace cmcr::enc
