#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcr/jsonio.hpp"
#include "cmcr/scene.hpp"

namespace cmcr::synth {

constexpr const char* kDatasetSchemaVersion = "1";

namespace detail_io {

inline void write_vec3(JsonWriter& w, const Vec3& v) {
  w.begin_array();
  w.value(v.x);
  w.value(v.y);
  w.value(v.z);
  w.end_array();
}

inline Vec3 read_vec3(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline Matrix read_matrix(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                          const char* what) {
  detail::require(j.is_array() && j.size() == rows * cols,
                  std::string(what) + ": expected " + std::to_string(rows * cols) + " values");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = j.at(i).get<double>();
  return m;
}

inline void write_config(JsonWriter& w, const GenConfig& cfg) {
  w.begin_object();
  w.key("n_scenes");
  w.value(cfg.n_scenes);
  w.key("min_primitives");
  w.value(cfg.min_primitives);
  w.key("max_primitives");
  w.value(cfg.max_primitives);
  w.key("n_classes");
  w.value(cfg.n_classes);
  w.key("lidar_rays");
  w.value(cfg.lidar_rays);
  w.key("image_h");
  w.value(cfg.image_h);
  w.key("image_w");
  w.value(cfg.image_w);
  w.key("query_band");
  w.value(cfg.query_band);
  w.end_object();
}

inline GenConfig read_config(const nlohmann::json& j) {
  GenConfig cfg;
  cfg.n_scenes = j.at("n_scenes").get<std::size_t>();
  cfg.min_primitives = j.at("min_primitives").get<std::size_t>();
  cfg.max_primitives = j.at("max_primitives").get<std::size_t>();
  cfg.n_classes = j.at("n_classes").get<std::size_t>();
  cfg.lidar_rays = j.at("lidar_rays").get<std::size_t>();
  cfg.image_h = j.at("image_h").get<std::size_t>();
  cfg.image_w = j.at("image_w").get<std::size_t>();
  cfg.query_band = j.at("query_band").get<double>();
  return cfg;
}

inline void write_scene(JsonWriter& w, const SceneSample& s) {
  w.begin_object();
  w.key("seed");
  w.value(s.scene_seed);
  w.key("image_h");
  w.value(s.image_h);
  w.key("image_w");
  w.value(s.image_w);
  w.key("calib");
  w.begin_object();
  w.key("focal");
  w.value(s.calib.focal);
  w.key("principal");
  w.begin_array();
  w.value(s.calib.principal_u);
  w.value(s.calib.principal_v);
  w.end_array();
  w.key("rotation");
  w.matrix_values(s.calib.rotation);
  w.key("translation");
  write_vec3(w, s.calib.translation);
  w.end_object();
  w.key("points");
  w.matrix_values(s.points);
  w.key("image");
  w.matrix_values(s.image);
  w.key("correspondences");
  w.begin_array();
  for (const auto& c : s.correspondences) {
    w.begin_array();
    w.value(c.point_index);
    w.value(c.pixel_row);
    w.value(c.pixel_col);
    w.end_array();
  }
  w.end_array();
  w.key("rays");
  w.begin_array();
  for (const auto& r : s.rays) {
    w.begin_array();
    w.value(r.origin.x);
    w.value(r.origin.y);
    w.value(r.origin.z);
    w.value(r.direction.x);
    w.value(r.direction.y);
    w.value(r.direction.z);
    w.value(r.hit_distance);
    w.end_array();
  }
  w.end_array();
  w.key("labels");
  w.begin_array();
  for (std::size_t l : s.labels) w.value(l);
  w.end_array();
  w.key("primitives");
  w.begin_array();
  for (const auto& p : s.primitives) {
    w.begin_object();
    w.key("kind");
    w.value(p.kind == Primitive::Kind::kSphere ? "sphere" : "box");
    w.key("center");
    write_vec3(w, p.center);
    w.key("radius");
    w.value(p.radius);
    w.key("half_extent");
    write_vec3(w, p.half_extent);
    w.key("color");
    w.begin_array();
    w.value(p.color[0]);
    w.value(p.color[1]);
    w.value(p.color[2]);
    w.end_array();
    w.key("class_id");
    w.value(p.class_id);
    w.end_object();
  }
  w.end_array();
  w.end_object();
}

inline SceneSample read_scene(const nlohmann::json& j) {
  SceneSample s;
  s.scene_seed = j.at("seed").get<std::uint64_t>();
  s.image_h = j.at("image_h").get<std::size_t>();
  s.image_w = j.at("image_w").get<std::size_t>();
  const auto& jc = j.at("calib");
  s.calib.focal = jc.at("focal").get<double>();
  s.calib.principal_u = jc.at("principal").at(0).get<double>();
  s.calib.principal_v = jc.at("principal").at(1).get<double>();
  s.calib.image_h = s.image_h;
  s.calib.image_w = s.image_w;
  s.calib.rotation = read_matrix(jc.at("rotation"), 3, 3, "calib.rotation");
  s.calib.translation = read_vec3(jc.at("translation"));
  const auto& jp = j.at("points");
  detail::require(jp.is_array() && jp.size() % 3 == 0, "points: size not divisible by 3");
  s.points = read_matrix(jp, jp.size() / 3, 3, "points");
  s.image = read_matrix(j.at("image"), s.image_h * s.image_w, 3, "image");
  for (const auto& c : j.at("correspondences")) {
    s.correspondences.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(),
                                 c.at(2).get<std::size_t>()});
  }
  for (const auto& r : j.at("rays")) {
    LidarRay ray;
    ray.origin = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    ray.direction = {r.at(3).get<double>(), r.at(4).get<double>(), r.at(5).get<double>()};
    ray.hit_distance = r.at(6).get<double>();
    s.rays.push_back(ray);
  }
  for (const auto& l : j.at("labels")) s.labels.push_back(l.get<std::size_t>());
  for (const auto& p : j.at("primitives")) {
    Primitive prim;
    prim.kind = p.at("kind").get<std::string>() == "sphere" ? Primitive::Kind::kSphere
                                                            : Primitive::Kind::kBox;
    prim.center = read_vec3(p.at("center"));
    prim.radius = p.at("radius").get<double>();
    prim.half_extent = read_vec3(p.at("half_extent"));
    prim.color = {p.at("color").at(0).get<double>(), p.at("color").at(1).get<double>(),
                  p.at("color").at(2).get<double>()};
    prim.class_id = p.at("class_id").get<std::size_t>();
    s.primitives.push_back(prim);
  }
  detail::require(s.labels.size() == s.points.rows, "scene: labels.size != point count");
  return s;
}

}  // namespace detail_io

inline std::string dataset_to_json(const GenConfig& cfg, const std::vector<SceneSample>& scenes) {
  JsonWriter w;
  w.begin_object();
  w.key("schema_version");
  w.value(kDatasetSchemaVersion);
  w.key("config");
  detail_io::write_config(w, cfg);
  w.key("scenes");
  w.begin_array();
  for (const auto& s : scenes) detail_io::write_scene(w, s);
  w.end_array();
  w.end_object();
  return w.str();
}

inline void save_dataset(const GenConfig& cfg, const std::vector<SceneSample>& scenes,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), "save_dataset: cannot open " + path);
  const std::string body = dataset_to_json(cfg, scenes);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.put('\n');
  detail::require(out.good(), "save_dataset: write failed for " + path);
}

struct Dataset {
  GenConfig config;
  std::vector<SceneSample> scenes;
};

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("load_dataset: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_dataset: parse error at byte " + std::to_string(e.byte) +
                             ": " + e.what());
  }
  const std::string version = j.value("schema_version", "");
  if (version != kDatasetSchemaVersion) {
    throw std::runtime_error("load_dataset: unsupported schema_version '" + version +
                             "' (expected '" + kDatasetSchemaVersion + "')");
  }
  Dataset d;
  d.config = detail_io::read_config(j.at("config"));
  const auto& scenes = j.at("scenes");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    try {
      d.scenes.push_back(detail_io::read_scene(scenes.at(i)));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: scene " + std::to_string(i) + ": " + e.what());
    }
  }
  return d;
}

}  // namespace cmcr::synth
