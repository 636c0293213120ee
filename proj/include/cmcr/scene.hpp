#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmcr/geometry.hpp"
#include "cmcr/rng.hpp"

// Synthetic paired 2D/3D scenes: colored primitives observed by one pinhole
// camera and a co-located LiDAR. Every sample carries dense point-pixel
// correspondences, the casting rays, per-point class labels, and enough
// geometry to derive visibility-based occupancy ground truth.
namespace cmcr::synth {

struct GenConfig {
  std::size_t n_scenes = 16;
  std::size_t min_primitives = 3;
  std::size_t max_primitives = 8;
  std::size_t n_classes = 4;  // palette below supports up to 4
  std::size_t lidar_rays = 512;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  double query_band = 0.2;  // surface band width (delta) for occupancy labels
};

struct Correspondence {
  std::size_t point_index = 0;
  std::size_t pixel_row = 0;
  std::size_t pixel_col = 0;
};

struct LidarRay {
  Vec3 origin;
  Vec3 direction;  // unit
  double hit_distance = 0.0;
};

struct SceneSample {
  Matrix points;  // N x 3, world frame, meters
  Matrix image;   // (H*W) x 3, values in [0, 1], row-major pixels
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  Calibration calib;
  std::vector<Correspondence> correspondences;
  std::vector<LidarRay> rays;          // rays[i] produced points row i
  std::vector<std::size_t> labels;     // per-point class id
  std::uint64_t scene_seed = 0;
  std::vector<Primitive> primitives;   // scene layout, kept for consistency checks

  std::size_t n_points() const { return points.rows; }
  std::size_t pixel_index(std::size_t row, std::size_t col) const { return row * image_w + col; }
};

struct OccupancyQuery {
  Vec3 position;
  int occupied = 0;  // 0 free, 1 surface band
  std::optional<std::size_t> source_ray;
};

namespace detail_scene {

// Class palette: shape and size determine the class; color is a redundant cue
// so the image view carries the same semantics.
struct ClassStyle {
  Primitive::Kind kind;
  double size_lo, size_hi;
  std::array<double, 3> base_color;
};

inline const std::array<ClassStyle, 4>& palette() {
  static const std::array<ClassStyle, 4> styles = {{
      {Primitive::Kind::kSphere, 0.45, 0.75, {0.85, 0.15, 0.15}},  // small sphere, red
      {Primitive::Kind::kSphere, 1.05, 1.55, {0.15, 0.75, 0.20}},  // large sphere, green
      {Primitive::Kind::kBox, 0.45, 0.75, {0.20, 0.30, 0.90}},     // small box, blue
      {Primitive::Kind::kBox, 1.05, 1.55, {0.90, 0.80, 0.15}},     // large box, yellow
  }};
  return styles;
}

inline std::vector<Primitive> place_primitives(const GenConfig& cfg, SplitRng& rng) {
  const std::size_t span = cfg.max_primitives - cfg.min_primitives + 1;
  const std::size_t count = cfg.min_primitives + rng.next_index(span);
  std::vector<Primitive> prims;
  prims.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = rng.next_index(cfg.n_classes);
    const ClassStyle& style = palette()[cls];
    Primitive p;
    p.kind = style.kind;
    p.class_id = cls;
    p.center = {rng.next_uniform(-3.2, 3.2), rng.next_uniform(-2.2, 2.2),
                rng.next_uniform(5.0, 11.0)};
    const double s = rng.next_uniform(style.size_lo, style.size_hi);
    if (p.kind == Primitive::Kind::kSphere) {
      p.radius = s;
    } else {
      p.half_extent = {s * rng.next_uniform(0.75, 1.25), s * rng.next_uniform(0.75, 1.25),
                       s * rng.next_uniform(0.75, 1.25)};
    }
    for (int c = 0; c < 3; ++c) {
      p.color[c] = std::clamp(style.base_color[c] + rng.next_uniform(-0.08, 0.08), 0.02, 1.0);
    }
    prims.push_back(p);
  }
  return prims;
}

inline Matrix small_rotation(double ax, double ay, double az) {
  auto rot = [](int axis, double a) {
    Matrix r = Matrix::identity(3);
    const int i = (axis + 1) % 3, j = (axis + 2) % 3;
    r(i, i) = std::cos(a);
    r(j, j) = std::cos(a);
    r(i, j) = -std::sin(a);
    r(j, i) = std::sin(a);
    return r;
  };
  return matmul_nn(rot(2, az), matmul_nn(rot(1, ay), rot(0, ax)));
}

inline Calibration make_calibration(const GenConfig& cfg, SplitRng& rng) {
  Calibration calib;
  calib.image_h = cfg.image_h;
  calib.image_w = cfg.image_w;
  calib.focal = 0.75 * static_cast<double>(std::min(cfg.image_h, cfg.image_w));
  calib.principal_u = (static_cast<double>(cfg.image_w) - 1.0) / 2.0;
  calib.principal_v = (static_cast<double>(cfg.image_h) - 1.0) / 2.0;
  calib.rotation = small_rotation(rng.next_uniform(-0.04, 0.04), rng.next_uniform(-0.04, 0.04),
                                  rng.next_uniform(-0.04, 0.04));
  calib.translation = {rng.next_uniform(-0.2, 0.2), rng.next_uniform(-0.2, 0.2), 0.0};
  calib.validate();
  return calib;
}

// Headlight shading: base color scaled by ambient plus diffuse toward the ray.
inline std::array<double, 3> shade(const Primitive& p, const Vec3& at, const Vec3& ray_dir) {
  const Vec3 n = surface_normal(p, at);
  const double diffuse = std::max(0.0, -n.dot(ray_dir));
  const double k = 0.35 + 0.65 * diffuse;
  return {p.color[0] * k, p.color[1] * k, p.color[2] * k};
}

inline void render_image(SceneSample& s) {
  const double bg = 0.08;
  s.image = Matrix(s.image_h * s.image_w, 3, bg);
  const Vec3 origin = s.calib.camera_center();
  for (std::size_t r = 0; r < s.image_h; ++r) {
    for (std::size_t c = 0; c < s.image_w; ++c) {
      const Vec3 dir =
          s.calib.pixel_ray_world(static_cast<double>(r), static_cast<double>(c));
      const auto hit = raycast(origin, dir, s.primitives);
      if (!hit) continue;
      const Vec3 at = origin + dir * hit->distance;
      const auto rgb = shade(s.primitives[hit->primitive], at, dir);
      const std::size_t px = s.pixel_index(r, c);
      for (int ch = 0; ch < 3; ++ch) s.image(px, ch) = rgb[ch];
    }
  }
}

// A point on (or near) the surface of a primitive, used to aim LiDAR rays.
inline Vec3 random_surface_target(const Primitive& p, SplitRng& rng) {
  if (p.kind == Primitive::Kind::kSphere) {
    Vec3 d;
    do {
      d = {rng.next_uniform(-1, 1), rng.next_uniform(-1, 1), rng.next_uniform(-1, 1)};
    } while (d.norm() < 1e-6);
    return p.center + d.normalized() * p.radius;
  }
  // Random point on a random box face.
  const std::size_t face = rng.next_index(6);
  Vec3 rel = {rng.next_uniform(-1, 1) * p.half_extent.x,
              rng.next_uniform(-1, 1) * p.half_extent.y,
              rng.next_uniform(-1, 1) * p.half_extent.z};
  const double sign = (face % 2 == 0) ? 1.0 : -1.0;
  if (face / 2 == 0) rel.x = sign * p.half_extent.x;
  if (face / 2 == 1) rel.y = sign * p.half_extent.y;
  if (face / 2 == 2) rel.z = sign * p.half_extent.z;
  return p.center + rel;
}

}  // namespace detail_scene

// Deterministic for a fixed (config, seed). Retries with a perturbed layout
// when no primitive is visible; throws after the retry budget.
inline SceneSample generate_scene(const GenConfig& cfg, std::uint64_t seed) {
  detail::require(cfg.n_classes >= 1 && cfg.n_classes <= detail_scene::palette().size(),
                  "generate_scene: n_classes outside palette range");
  detail::require(cfg.min_primitives <= cfg.max_primitives,
                  "generate_scene: invalid primitive count range");
  constexpr std::size_t kMaxLayoutRetries = 8;
  SplitRng scene_rng(seed);
  for (std::size_t attempt = 0; attempt < kMaxLayoutRetries; ++attempt) {
    SplitRng rng = scene_rng.fork(attempt);
    SceneSample s;
    s.scene_seed = seed;
    s.image_h = cfg.image_h;
    s.image_w = cfg.image_w;
    s.primitives = detail_scene::place_primitives(cfg, rng);
    s.calib = detail_scene::make_calibration(cfg, rng);
    if (s.primitives.empty()) continue;

    // LiDAR shares the camera center; each stored point is the first surface
    // hit along its ray, so camera visibility is consistent by construction.
    const Vec3 origin = s.calib.camera_center();
    SplitRng ray_rng = rng.fork(101);
    std::vector<Vec3> pts;
    const std::size_t max_attempts = cfg.lidar_rays * 24;
    for (std::size_t tries = 0; tries < max_attempts && pts.size() < cfg.lidar_rays; ++tries) {
      const Primitive& target_prim = s.primitives[ray_rng.next_index(s.primitives.size())];
      Vec3 target = detail_scene::random_surface_target(target_prim, ray_rng);
      target = target + Vec3{ray_rng.next_uniform(-0.05, 0.05), ray_rng.next_uniform(-0.05, 0.05),
                             ray_rng.next_uniform(-0.05, 0.05)};
      const Vec3 diff = target - origin;
      if (diff.norm() < 1e-6) continue;
      const Vec3 dir = diff.normalized();
      const auto hit = raycast(origin, dir, s.primitives);
      if (!hit) continue;
      pts.push_back(origin + dir * hit->distance);
      s.rays.push_back({origin, dir, hit->distance});
      s.labels.push_back(s.primitives[hit->primitive].class_id);
    }
    if (pts.size() < cfg.lidar_rays) continue;  // layout too sparse; retry

    s.points = Matrix(pts.size(), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      s.points(i, 0) = pts[i].x;
      s.points(i, 1) = pts[i].y;
      s.points(i, 2) = pts[i].z;
    }
    detail_scene::render_image(s);

    const ProjectionResult proj = project_points(s.points, s.calib);
    for (const ProjectedPoint& p : proj.visible) {
      s.correspondences.push_back({p.index, static_cast<std::size_t>(std::lround(p.row)),
                                   static_cast<std::size_t>(std::lround(p.col))});
    }
    if (s.correspondences.size() < 2) continue;  // unusable for pair sampling
    return s;
  }
  throw std::runtime_error("generate_scene: no usable layout after " +
                           std::to_string(kMaxLayoutRetries) + " retries (seed " +
                           std::to_string(seed) + ")");
}

inline std::vector<SceneSample> generate_dataset(const GenConfig& cfg, std::uint64_t seed) {
  SplitRng root(seed);
  std::vector<SceneSample> scenes;
  scenes.reserve(cfg.n_scenes);
  for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
    scenes.push_back(generate_scene(cfg, root.fork(i).next_u64()));
  }
  return scenes;
}

// Visibility-labeled occupancy queries. A query at distance d along a ray with
// hit distance h is free space when d < h - delta/2, surface when
// |d - h| <= delta/2, and unobserved (rejected) beyond h + delta/2. Labels are
// balanced to at most 60/40 by rejection; if the attempt budget runs out the
// remaining slots are filled unbalanced with a warning.
inline std::vector<OccupancyQuery> sample_occupancy_queries(const SceneSample& sample,
                                                            std::size_t n_queries, double delta,
                                                            std::uint64_t seed) {
  detail::require(n_queries > 0, "sample_occupancy_queries: n_queries must be positive");
  detail::require(delta > 0.0, "sample_occupancy_queries: delta must be positive");
  detail::require(!sample.rays.empty(), "sample_occupancy_queries: sample has no rays");
  SplitRng rng(seed);
  std::vector<OccupancyQuery> queries;
  queries.reserve(n_queries);
  const std::size_t cap_per_label =
      static_cast<std::size_t>(std::ceil(0.6 * static_cast<double>(n_queries)));
  std::size_t counts[2] = {0, 0};
  const std::size_t budget = 100 * n_queries;
  bool balanced = true;
  for (std::size_t attempt = 0; attempt < budget && queries.size() < n_queries; ++attempt) {
    const std::size_t ray_id = rng.next_index(sample.rays.size());
    const LidarRay& ray = sample.rays[ray_id];
    const double d = rng.next_uniform(1e-3, ray.hit_distance + 2.0 * delta);
    int label;
    if (d < ray.hit_distance - delta / 2.0) {
      label = 0;
    } else if (std::abs(d - ray.hit_distance) <= delta / 2.0) {
      label = 1;
    } else {
      continue;  // beyond the hit: unobserved
    }
    if (counts[label] >= cap_per_label) continue;  // keep balance by rejection
    queries.push_back({ray.origin + ray.direction * d, label, ray_id});
    ++counts[label];
  }
  if (queries.size() < n_queries) {
    balanced = false;
    for (std::size_t attempt = 0; attempt < budget && queries.size() < n_queries; ++attempt) {
      const std::size_t ray_id = rng.next_index(sample.rays.size());
      const LidarRay& ray = sample.rays[ray_id];
      const double d = rng.next_uniform(1e-3, ray.hit_distance + 2.0 * delta);
      if (d > ray.hit_distance + delta / 2.0) continue;
      const int label = d < ray.hit_distance - delta / 2.0 ? 0 : 1;
      queries.push_back({ray.origin + ray.direction * d, label, ray_id});
      ++counts[label];
    }
  }
  if (!balanced) {
    detail::warn("sample_occupancy_queries: balance budget exhausted; returning " +
                 std::to_string(counts[0]) + " free / " + std::to_string(counts[1]) +
                 " surface labels");
  }
  return queries;
}

}  // namespace cmcr::synth
