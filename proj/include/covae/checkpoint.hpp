#pragma once

// Model checkpoints: `<stem>.json` metadata plus `<stem>.bin`, a flat array of
// little-endian float64 values. Tensors appear in CovaeModel::all_tensors()
// order (encoder W,b per layer; decoder W,b per layer; prior logits, means,
// log-variances; log sigma_x), each row-major.

#include "covae/dataset_io.hpp"
#include "covae/model.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace covae::checkpoint {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

struct Metadata {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  json extra = json::object();
};

inline json model_config_json(const model::ModelConfig& c) {
  return {{"obs_dim", c.obs_dim},         {"latent_dim", c.latent_dim},
          {"layers", c.layers},           {"components", c.components},
          {"slope", c.slope},             {"alpha", c.alpha},
          {"beta", c.beta},               {"learn_prior", c.learn_prior},
          {"learn_obs_noise", c.learn_obs_noise}, {"init_log_obs_std", c.init_log_obs_std},
          {"seed", c.seed}};
}

inline model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  c.obs_dim = j.at("obs_dim").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.components = j.at("components").get<std::size_t>();
  c.slope = j.at("slope").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.learn_prior = j.at("learn_prior").get<bool>();
  c.learn_obs_noise = j.at("learn_obs_noise").get<bool>();
  c.init_log_obs_std = j.at("init_log_obs_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

inline json metadata_json(const model::CovaeModel& m, const Metadata& meta) {
  json tensors = json::array();
  std::size_t offset = 0;
  const auto all = m.all_tensors();
  const auto names = m.tensor_names();
  for (std::size_t i = 0; i < all.size(); ++i) {
    tensors.push_back({{"name", names[i]},
                       {"shape", {all[i].rows(), all[i].cols()}},
                       {"offset", offset},
                       {"trainable", all[i].requires_grad()}});
    offset += all[i].size();
  }
  return {{"format", "covae-checkpoint"},
          {"version", kFormatVersion},
          {"dtype", "float64-le"},
          {"method", meta.method},
          {"dataset", meta.dataset},
          {"seed", meta.seed},
          {"step", meta.step},
          {"model", model_config_json(m.config())},
          {"encoder_dims", m.encoder().dims},
          {"decoder_dims", m.decoder().dims},
          {"parameter_count", offset},
          {"tensors", std::move(tensors)},
          {"extra", meta.extra}};
}

inline void save(const model::CovaeModel& m, const Metadata& meta, const fs::path& stem) {
  std::string blob;
  for (const auto& t : m.all_tensors())
    for (double v : t.data()) put_le(blob, v);
  io::write_text_file(fs::path(stem).replace_extension(".bin"), blob);
  io::write_text_file(fs::path(stem).replace_extension(".json"), metadata_json(m, meta).dump(2) + "\n");
}

struct Loaded {
  model::CovaeModel model;
  Metadata meta;
  json raw;
};

inline Loaded load(const fs::path& stem) {
  Loaded out;
  out.raw = json::parse(io::read_text_file(fs::path(stem).replace_extension(".json")));
  if (out.raw.value("format", "") != "covae-checkpoint") throw io::IoError("'" + stem.string() + "' is not a checkpoint");
  out.model = model::CovaeModel(model_config_from_json(out.raw.at("model")));
  out.meta.method = out.raw.at("method").get<std::string>();
  out.meta.dataset = out.raw.at("dataset").get<std::string>();
  out.meta.seed = out.raw.at("seed").get<std::uint64_t>();
  out.meta.step = out.raw.at("step").get<std::size_t>();
  out.meta.extra = out.raw.value("extra", json::object());
  const std::string blob = io::read_text_file(fs::path(stem).replace_extension(".bin"));
  auto tensors = out.model.all_tensors();
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.size();
  if (blob.size() != total * 8) {
    throw io::IoError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, expected " +
                      std::to_string(total * 8));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (auto& t : tensors) {
    std::vector<double> v(t.size());
    for (double& x : v) {
      x = get_le(p);
      p += 8;
    }
    t.assign(v);
  }
  return out;
}

}  // namespace covae::checkpoint
