#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "cmcr/jsonio.hpp"
#include "cmcr/trainer.hpp"

namespace cmcr::train {

constexpr const char* kCheckpointSchemaVersion = "1";
constexpr const char* kConfigSchemaVersion = "1";

namespace detail_ckpt {

inline void write_weights(JsonWriter& w, const obj::LossWeights& weights) {
  w.begin_object();
  w.key("nce");
  w.value(weights.nce);
  w.key("commit");
  w.value(weights.commit);
  w.key("rec");
  w.value(weights.rec);
  w.key("occ");
  w.value(weights.occ);
  w.key("orth");
  w.value(weights.orth);
  w.key("kl");
  w.value(weights.kl);
  w.end_object();
}

inline void write_config_body(JsonWriter& w, const TrainConfig& cfg) {
  w.begin_object();
  w.key("schema_version");
  w.value(kConfigSchemaVersion);
  w.key("epochs");
  w.value(cfg.epochs);
  w.key("lr_max");
  w.value(cfg.lr_max);
  w.key("batch_size");
  w.value(cfg.batch_size);
  w.key("mask_ratio");
  w.value(cfg.mask_ratio);
  w.key("n_queries");
  w.value(cfg.n_queries);
  w.key("tau");
  w.value(cfg.tau);
  w.key("codebook_size");
  w.value(cfg.codebook_size);
  w.key("gamma");
  w.value(cfg.gamma);
  w.key("m_max");
  w.value(cfg.m_max);
  w.key("query_band");
  w.value(cfg.query_band);
  w.key("occupancy_knn");
  w.value(cfg.occupancy_knn);
  w.key("seed");
  w.value(cfg.seed);
  w.key("enable_nce");
  w.value(cfg.enable_nce);
  w.key("enable_commit");
  w.value(cfg.enable_commit);
  w.key("enable_rec");
  w.value(cfg.enable_rec);
  w.key("enable_occ");
  w.value(cfg.enable_occ);
  w.key("enable_orth");
  w.value(cfg.enable_orth);
  w.key("enable_kl");
  w.value(cfg.enable_kl);
  w.key("enable_codebook");
  w.value(cfg.enable_codebook);
  w.key("geo_substitution");
  w.value(cfg.geo_substitution);
  w.key("commitment_mode");
  w.value(cfg.commitment_mode == vq::CommitmentMode::kAnchored3D ? "anchored_3d"
                                                                 : "per_modality");
  w.key("revive_threshold_steps");
  w.value(cfg.revive_threshold_steps);
  w.key("revive_period_epochs");
  w.value(cfg.revive_period_epochs);
  w.key("weights");
  write_weights(w, cfg.weights);
  w.key("encoder");
  w.begin_object();
  w.key("latent_width");
  w.value(cfg.encoder.latent_width);
  w.key("shared_dim");
  w.value(cfg.encoder.shared_dim);
  w.key("patch");
  w.value(cfg.encoder.patch);
  w.key("knn");
  w.value(cfg.encoder.knn);
  w.end_object();
  w.key("n_threads");
  w.value(cfg.n_threads);
  w.end_object();
}

inline TrainConfig read_config_body(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("schema_version")) {
    const std::string v = j.at("schema_version").get<std::string>();
    detail::require(v == kConfigSchemaVersion,
                    "config: unsupported schema_version '" + v + "'");
  }
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr_max = j.value("lr_max", cfg.lr_max);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.mask_ratio = j.value("mask_ratio", cfg.mask_ratio);
  cfg.n_queries = j.value("n_queries", cfg.n_queries);
  cfg.tau = j.value("tau", cfg.tau);
  cfg.codebook_size = j.value("codebook_size", cfg.codebook_size);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.m_max = j.value("m_max", cfg.m_max);
  cfg.query_band = j.value("query_band", cfg.query_band);
  cfg.occupancy_knn = j.value("occupancy_knn", cfg.occupancy_knn);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.enable_nce = j.value("enable_nce", cfg.enable_nce);
  cfg.enable_commit = j.value("enable_commit", cfg.enable_commit);
  cfg.enable_rec = j.value("enable_rec", cfg.enable_rec);
  cfg.enable_occ = j.value("enable_occ", cfg.enable_occ);
  cfg.enable_orth = j.value("enable_orth", cfg.enable_orth);
  cfg.enable_kl = j.value("enable_kl", cfg.enable_kl);
  cfg.enable_codebook = j.value("enable_codebook", cfg.enable_codebook);
  cfg.geo_substitution = j.value("geo_substitution", cfg.geo_substitution);
  if (j.contains("commitment_mode")) {
    const std::string mode = j.at("commitment_mode").get<std::string>();
    if (mode == "anchored_3d") {
      cfg.commitment_mode = vq::CommitmentMode::kAnchored3D;
    } else if (mode == "per_modality") {
      cfg.commitment_mode = vq::CommitmentMode::kPerModality;
    } else {
      detail::fail("config: unknown commitment_mode '" + mode + "'");
    }
  }
  cfg.revive_threshold_steps = j.value("revive_threshold_steps", cfg.revive_threshold_steps);
  cfg.revive_period_epochs = j.value("revive_period_epochs", cfg.revive_period_epochs);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    cfg.weights.nce = w.value("nce", cfg.weights.nce);
    cfg.weights.commit = w.value("commit", cfg.weights.commit);
    cfg.weights.rec = w.value("rec", cfg.weights.rec);
    cfg.weights.occ = w.value("occ", cfg.weights.occ);
    cfg.weights.orth = w.value("orth", cfg.weights.orth);
    cfg.weights.kl = w.value("kl", cfg.weights.kl);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    cfg.encoder.latent_width = e.value("latent_width", cfg.encoder.latent_width);
    cfg.encoder.shared_dim = e.value("shared_dim", cfg.encoder.shared_dim);
    cfg.encoder.patch = e.value("patch", cfg.encoder.patch);
    cfg.encoder.knn = e.value("knn", cfg.encoder.knn);
  }
  cfg.n_threads = j.value("n_threads", cfg.n_threads);
  return cfg;
}

inline void write_named_matrix(JsonWriter& w, const std::string& name, const Matrix& m) {
  w.key(name);
  w.begin_object();
  w.key("rows");
  w.value(m.rows);
  w.key("cols");
  w.value(m.cols);
  w.key("data");
  w.matrix_values(m);
  w.end_object();
}

inline Matrix read_named_matrix(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto& data = j.at("data");
  detail::require(data.size() == rows * cols, "checkpoint: matrix size mismatch");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = data.at(i).get<double>();
  return m;
}

}  // namespace detail_ckpt

inline std::string config_to_json(const TrainConfig& cfg) {
  JsonWriter w;
  detail_ckpt::write_config_body(w, cfg);
  return w.str();
}

inline TrainConfig config_from_json_text(const std::string& text) {
  return detail_ckpt::read_config_body(nlohmann::json::parse(text));
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("load_config: cannot open " + path);
  try {
    return detail_ckpt::read_config_body(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_config: parse error at byte " + std::to_string(e.byte) +
                             ": " + e.what());
  }
}

struct Checkpoint {
  TrainConfig config;
  ParamSet params;
  vq::Codebook book;
  bool has_codebook = false;
};

inline std::string checkpoint_to_json(const TrainResult& result) {
  JsonWriter w;
  w.begin_object();
  w.key("schema_version");
  w.value(kCheckpointSchemaVersion);
  w.key("config");
  detail_ckpt::write_config_body(w, result.config);
  w.key("params");
  w.begin_object();
  for (const auto& [name, value] : result.params.items())
    detail_ckpt::write_named_matrix(w, name, value.data());
  w.end_object();
  w.key("has_codebook");
  w.value(result.config.enable_codebook);
  w.key("codebook");
  w.begin_object();
  w.key("gamma");
  w.value(result.book.gamma);
  detail_ckpt::write_named_matrix(w, "entries", result.book.entries);
  w.key("usage_2d");
  w.begin_array();
  for (double u : result.book.usage_2d) w.value(u);
  w.end_array();
  w.key("usage_3d");
  w.begin_array();
  for (double u : result.book.usage_3d) w.value(u);
  w.end_array();
  w.end_object();
  w.end_object();
  return w.str();
}

inline void save_checkpoint(const TrainResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), "save_checkpoint: cannot open " + path);
  const std::string body = checkpoint_to_json(result);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.put('\n');
  detail::require(out.good(), "save_checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: parse error at byte " + std::to_string(e.byte) +
                             ": " + e.what());
  }
  const std::string version = j.value("schema_version", "");
  if (version != kCheckpointSchemaVersion) {
    throw std::runtime_error("load_checkpoint: unsupported schema_version '" + version + "'");
  }
  Checkpoint c;
  c.config = detail_ckpt::read_config_body(j.at("config"));
  for (const auto& [name, jm] : j.at("params").items())
    c.params.add(name, detail_ckpt::read_named_matrix(jm));
  c.has_codebook = j.value("has_codebook", false);
  const auto& jb = j.at("codebook");
  c.book = vq::Codebook::create(detail_ckpt::read_named_matrix(jb.at("entries")),
                                jb.at("gamma").get<double>());
  const auto& u2 = jb.at("usage_2d");
  const auto& u3 = jb.at("usage_3d");
  detail::require(u2.size() == c.book.size() && u3.size() == c.book.size(),
                  "load_checkpoint: usage vector size mismatch");
  for (std::size_t v = 0; v < c.book.size(); ++v) {
    c.book.usage_2d[v] = u2.at(v).get<double>();
    c.book.usage_3d[v] = u3.at(v).get<double>();
  }
  return c;
}

}  // namespace cmcr::train
