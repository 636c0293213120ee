#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "cmcr/matrix.hpp"

namespace cmcr::synth {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    detail::require(n > 1e-12, "Vec3: cannot normalize near-zero vector");
    return {x / n, y / n, z / n};
  }
};

// Pinhole camera: x_c = R x_w + t, u = u0 + f * x_c / z_c, v = v0 + f * y_c / z_c
// (u indexes columns, v indexes rows).
struct Calibration {
  double focal = 1.0;
  double principal_u = 0.0;  // column offset
  double principal_v = 0.0;  // row offset
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  Matrix rotation;   // 3x3, world -> camera
  Vec3 translation;  // world -> camera

  void validate() const {
    detail::require(focal > 0.0, "Calibration: focal must be positive");
    detail::require(image_h > 0 && image_w > 0, "Calibration: empty image");
    detail::require(rotation.rows == 3 && rotation.cols == 3, "Calibration: rotation not 3x3");
    const Matrix rrt = matmul_nt(rotation, rotation);
    detail::require(max_abs_diff(rrt, Matrix::identity(3)) <= 1e-9,
                    "Calibration: rotation is not orthonormal");
    const double det =
        rotation(0, 0) * (rotation(1, 1) * rotation(2, 2) - rotation(1, 2) * rotation(2, 1)) -
        rotation(0, 1) * (rotation(1, 0) * rotation(2, 2) - rotation(1, 2) * rotation(2, 0)) +
        rotation(0, 2) * (rotation(1, 0) * rotation(2, 1) - rotation(1, 1) * rotation(2, 0));
    detail::require(std::abs(det - 1.0) <= 1e-9, "Calibration: rotation determinant != 1");
  }

  Vec3 to_camera(const Vec3& w) const {
    return {rotation(0, 0) * w.x + rotation(0, 1) * w.y + rotation(0, 2) * w.z + translation.x,
            rotation(1, 0) * w.x + rotation(1, 1) * w.y + rotation(1, 2) * w.z + translation.y,
            rotation(2, 0) * w.x + rotation(2, 1) * w.y + rotation(2, 2) * w.z + translation.z};
  }

  Vec3 camera_center() const {  // -R^T t
    return {-(rotation(0, 0) * translation.x + rotation(1, 0) * translation.y +
              rotation(2, 0) * translation.z),
            -(rotation(0, 1) * translation.x + rotation(1, 1) * translation.y +
              rotation(2, 1) * translation.z),
            -(rotation(0, 2) * translation.x + rotation(1, 2) * translation.y +
              rotation(2, 2) * translation.z)};
  }

  // World-frame direction of the viewing ray through continuous pixel (row, col).
  Vec3 pixel_ray_world(double row, double col) const {
    const Vec3 dc = Vec3{(col - principal_u) / focal, (row - principal_v) / focal, 1.0};
    const Vec3 dw = {rotation(0, 0) * dc.x + rotation(1, 0) * dc.y + rotation(2, 0) * dc.z,
                     rotation(0, 1) * dc.x + rotation(1, 1) * dc.y + rotation(2, 1) * dc.z,
                     rotation(0, 2) * dc.x + rotation(1, 2) * dc.y + rotation(2, 2) * dc.z};
    return dw.normalized();
  }
};

struct Primitive {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Vec3 center;
  double radius = 1.0;   // sphere only
  Vec3 half_extent;      // box only
  std::array<double, 3> color = {0.5, 0.5, 0.5};
  std::size_t class_id = 0;
};

struct ProjectedPoint {
  std::size_t index = 0;
  double row = 0.0;
  double col = 0.0;
  double depth = 0.0;
};

struct ProjectionResult {
  std::vector<ProjectedPoint> visible;
  std::size_t excluded = 0;  // behind the camera or outside the image
};

// Standard pinhole projection; a point is kept when its depth is positive and
// its nearest integer pixel lies inside the image.
inline ProjectionResult project_points(const Matrix& points, const Calibration& calib) {
  detail::require(points.cols == 3, "project_points: points must be Nx3");
  calib.validate();
  ProjectionResult out;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const Vec3 pc = calib.to_camera({points(i, 0), points(i, 1), points(i, 2)});
    if (pc.z <= 0.0) {
      ++out.excluded;
      continue;
    }
    const double col = calib.principal_u + calib.focal * pc.x / pc.z;
    const double row = calib.principal_v + calib.focal * pc.y / pc.z;
    const long r = std::lround(row);
    const long c = std::lround(col);
    if (r < 0 || c < 0 || r >= static_cast<long>(calib.image_h) ||
        c >= static_cast<long>(calib.image_w)) {
      ++out.excluded;
      continue;
    }
    out.visible.push_back({i, row, col, pc.z});
  }
  return out;
}

namespace detail_geom {

constexpr double kRayEps = 1e-9;

inline std::optional<double> intersect_sphere(const Vec3& origin, const Vec3& dir,
                                              const Primitive& s) {
  const Vec3 oc = origin - s.center;
  const double b = oc.dot(dir);
  const double c = oc.dot(oc) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  const double t0 = -b - root;
  if (t0 > kRayEps) return t0;
  const double t1 = -b + root;
  if (t1 > kRayEps) return t1;
  return std::nullopt;
}

// Slab method; from inside the box the exit distance is returned.
inline std::optional<double> intersect_box(const Vec3& origin, const Vec3& dir,
                                           const Primitive& b) {
  const double lo[3] = {b.center.x - b.half_extent.x, b.center.y - b.half_extent.y,
                        b.center.z - b.half_extent.z};
  const double hi[3] = {b.center.x + b.half_extent.x, b.center.y + b.half_extent.y,
                        b.center.z + b.half_extent.z};
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  double tmin = -1e300, tmax = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (lo[a] - o[a]) / d[a];
    double t2 = (hi[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmin > kRayEps) return tmin;
  if (tmax > kRayEps) return tmax;
  return std::nullopt;
}

}  // namespace detail_geom

struct RayHit {
  double distance = 0.0;
  std::size_t primitive = 0;
};

// Nearest positive intersection across all primitives, or none.
inline std::optional<RayHit> raycast(const Vec3& origin, const Vec3& direction,
                                     const std::vector<Primitive>& primitives) {
  detail::require(std::abs(direction.norm() - 1.0) <= 1e-6,
                  "raycast: direction must be unit-norm");
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const auto& p = primitives[i];
    const auto t = p.kind == Primitive::Kind::kSphere
                       ? detail_geom::intersect_sphere(origin, direction, p)
                       : detail_geom::intersect_box(origin, direction, p);
    if (t && (!best || *t < best->distance)) best = RayHit{*t, i};
  }
  return best;
}

// Outward surface normal at a point assumed to lie on the primitive.
inline Vec3 surface_normal(const Primitive& p, const Vec3& at) {
  if (p.kind == Primitive::Kind::kSphere) return (at - p.center).normalized();
  const Vec3 rel = at - p.center;
  const double rx = std::abs(rel.x) / p.half_extent.x;
  const double ry = std::abs(rel.y) / p.half_extent.y;
  const double rz = std::abs(rel.z) / p.half_extent.z;
  if (rx >= ry && rx >= rz) return {rel.x > 0 ? 1.0 : -1.0, 0.0, 0.0};
  if (ry >= rz) return {0.0, rel.y > 0 ? 1.0 : -1.0, 0.0};
  return {0.0, 0.0, rel.z > 0 ? 1.0 : -1.0};
}

}  // namespace cmcr::synth
