// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: one JSON document with sections data, model, loss,
// optim, train and eval. Every field is optional; unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/data/synthetic.hpp"
#include "lava/loss/losses.hpp"
#include "lava/model/encoders.hpp"
#include "lava/optim/adam.hpp"

namespace lava {

struct ModelSection {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ff_multiplier = 2;
  std::size_t proj_dim = 32;
  std::size_t max_text_len = 128;
};

struct OptimSection {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;
};

struct TrainSection {
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  std::optional<std::uint64_t> seed;
  std::size_t checkpoint_every = 0;  // epochs between snapshots; 0 writes only the final checkpoint
  double augment_sigma = 0.1;
  bool log_wall_time = true;
};

struct EvalSection {
  double probe_lr = 1e-4;
  std::size_t probe_batch_size = 32;
  std::size_t probe_epochs = 50;
  std::uint64_t probe_seed = 0;
  std::size_t clips = 4;
  std::string splits = "all";  // "all" or "1"
  std::string mode = "video";  // "video" or "audio+video"
};

struct Config {
  data::SyntheticConfig data;
  ModelSection model;
  LossConfig loss;
  OptimSection optim;
  TrainSection train;
  EvalSection eval;

  void validate() const {
    data.validate();
    loss.validate();
    if (model.n_heads == 0 || model.d_model % model.n_heads != 0) {
      throw ConfigError("model.d_model must be divisible by model.n_heads");
    }
    if (model.ff_multiplier == 0 || model.proj_dim == 0 || model.max_text_len == 0) {
      throw ConfigError("model widths must be positive");
    }
    if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2 so every batch has negatives");
    if (!(train.augment_sigma >= 0.0)) throw ConfigError("train.augment_sigma must be >= 0");
    if (!(optim.lr_max >= optim.lr_min) || !(optim.lr_min >= 0.0)) {
      throw ConfigError("optim needs lr_max >= lr_min >= 0");
    }
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
      throw ConfigError("optim betas must lie in [0, 1)");
    }
    if (!(optim.eps > 0.0) || !(optim.clip_norm >= 0.0)) throw ConfigError("optim.eps must be > 0, clip_norm >= 0");
    if (!(eval.probe_lr > 0.0) || eval.probe_batch_size == 0 || eval.probe_epochs == 0) {
      throw ConfigError("eval probe settings must be positive");
    }
    if (eval.clips == 0) throw ConfigError("eval.clips must be positive");
    if (eval.splits != "all" && eval.splits != "1") throw ConfigError("eval.splits must be \"all\" or \"1\"");
    if (eval.mode != "video" && eval.mode != "audio+video") {
      throw ConfigError("eval.mode must be \"video\" or \"audio+video\"");
    }
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.encoder = nn::EncoderConfig{model.n_layers, model.d_model, model.n_heads, model.ff_multiplier, true};
    m.video_feature_dim = data.video_dim;
    m.audio_feature_dim = data.audio_dim;
    m.vocab = data.vocab;
    m.max_text_len = model.max_text_len;
    m.proj_dim = model.proj_dim;
    return m;
  }

  optim::AdamConfig adam_config() const { return {optim.beta1, optim.beta2, optim.eps, optim.clip_norm}; }

  std::uint64_t seed() const {
    if (!train.seed) throw ConfigError("no training seed: set train.seed or pass --seed");
    return *train.seed;
  }
};

/// Parses a comma-separated subset of {av, vt, avt}.
inline std::array<bool, 3> parse_loss_terms(const std::string& list) {
  std::array<bool, 3> on = {false, false, false};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "av") {
      on[0] = true;
    } else if (item == "vt") {
      on[1] = true;
    } else if (item == "avt") {
      on[2] = true;
    } else {
      throw ConfigError("unknown loss term '" + item + "' (expected av, vt, avt)");
    }
  }
  if (!on[0] && !on[1] && !on[2]) throw ConfigError("no loss terms selected");
  return on;
}

inline std::string loss_terms_string(const std::array<bool, 3>& on) {
  std::string out;
  const char* names[3] = {"av", "vt", "avt"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    if (!out.empty()) out += ',';
    out += names[i];
  }
  return out;
}

namespace detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, std::string section) : section_(std::move(section)) {
    if (!root.contains(section_)) return;
    node_ = &root.at(section_);
    if (!node_->is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!node_ || !node_->contains(key)) return;
    seen_.push_back(key);
    const nlohmann::json& v = node_->at(key);
    const std::string where = section_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      out = v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError(where + " must be a non-negative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      if (v.is_null()) {
        out.reset();
      } else {
        if (!v.is_number_unsigned()) throw ConfigError(where + " must be a non-negative integer or null");
        out = v.get<std::uint64_t>();
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const nlohmann::json* raw(const char* key) {
    if (!node_ || !node_->contains(key)) return nullptr;
    seen_.push_back(key);
    return &node_->at(key);
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("unknown config key '" + section_ + "." + key + "'");
      }
    }
  }

 private:
  std::string section_;
  const nlohmann::json* node_ = nullptr;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "data" && key != "model" && key != "loss" && key != "optim" && key != "train" && key != "eval") {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  Config c;
  {
    detail::SectionReader r(j, "data");
    auto& d = c.data;
    r.get("n_samples", d.n_samples);
    r.get("n_classes", d.n_classes);
    r.get("seed", d.seed);
    r.get("video_len", d.video_len);
    r.get("video_dim", d.video_dim);
    r.get("audio_len", d.audio_len);
    r.get("audio_dim", d.audio_dim);
    r.get("text_len", d.text_len);
    r.get("vocab", d.vocab);
    r.get("availability", d.availability);
    r.get("class_separation", d.class_separation);
    r.get("template_base", d.template_base);
    r.get("video_noise", d.video_noise);
    r.get("audio_noise", d.audio_noise);
    r.get("text_informativeness", d.text_informativeness);
    r.get("test_clips", d.test_clips);
    r.get("independent_availability", d.independent_availability);
    r.finish();
  }
  {
    detail::SectionReader r(j, "model");
    auto& m = c.model;
    r.get("n_layers", m.n_layers);
    r.get("d_model", m.d_model);
    r.get("n_heads", m.n_heads);
    r.get("ff_multiplier", m.ff_multiplier);
    r.get("proj_dim", m.proj_dim);
    r.get("max_text_len", m.max_text_len);
    r.finish();
  }
  {
    detail::SectionReader r(j, "loss");
    r.get("tau", c.loss.tau);
    if (const auto* terms = r.raw("terms")) {
      if (!terms->is_array()) throw ConfigError("loss.terms must be an array of strings");
      std::string joined;
      for (const auto& t : *terms) {
        if (!t.is_string()) throw ConfigError("loss.terms must be an array of strings");
        joined += (joined.empty() ? "" : ",") + t.get<std::string>();
      }
      c.loss.enabled = parse_loss_terms(joined);
    }
    if (const auto* w = r.raw("weights")) {
      if (!w->is_object()) throw ConfigError("loss.weights must be an object");
      for (const auto& [key, value] : w->items()) {
        const std::size_t idx = key == "av" ? 0 : key == "vt" ? 1 : key == "avt" ? 2 : 3;
        if (idx == 3) throw ConfigError("unknown config key 'loss.weights." + key + "'");
        if (!value.is_number()) throw ConfigError("loss.weights." + key + " must be a number");
        c.loss.weights[idx] = value.get<double>();
      }
    }
    r.finish();
  }
  {
    detail::SectionReader r(j, "optim");
    auto& o = c.optim;
    r.get("lr_max", o.lr_max);
    r.get("lr_min", o.lr_min);
    r.get("warmup_steps", o.warmup_steps);
    r.get("beta1", o.beta1);
    r.get("beta2", o.beta2);
    r.get("eps", o.eps);
    r.get("clip_norm", o.clip_norm);
    r.finish();
  }
  {
    detail::SectionReader r(j, "train");
    auto& t = c.train;
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("seed", t.seed);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("augment_sigma", t.augment_sigma);
    r.get("log_wall_time", t.log_wall_time);
    r.finish();
  }
  {
    detail::SectionReader r(j, "eval");
    auto& e = c.eval;
    r.get("probe_lr", e.probe_lr);
    r.get("probe_batch_size", e.probe_batch_size);
    r.get("probe_epochs", e.probe_epochs);
    r.get("probe_seed", e.probe_seed);
    r.get("clips", e.clips);
    r.get("splits", e.splits);
    r.get("mode", e.mode);
    r.finish();
  }
  c.validate();
  return c;
}

/// Fully resolved configuration, defaults included.
inline nlohmann::ordered_json to_json(const Config& c) {
  nlohmann::ordered_json j;
  const auto& d = c.data;
  j["data"] = {{"n_samples", d.n_samples},
               {"n_classes", d.n_classes},
               {"seed", d.seed},
               {"video_len", d.video_len},
               {"video_dim", d.video_dim},
               {"audio_len", d.audio_len},
               {"audio_dim", d.audio_dim},
               {"text_len", d.text_len},
               {"vocab", d.vocab},
               {"availability", d.availability},
               {"class_separation", d.class_separation},
               {"template_base", d.template_base},
               {"video_noise", d.video_noise},
               {"audio_noise", d.audio_noise},
               {"text_informativeness", d.text_informativeness},
               {"test_clips", d.test_clips},
               {"independent_availability", d.independent_availability}};
  const auto& m = c.model;
  j["model"] = {{"n_layers", m.n_layers},   {"d_model", m.d_model},   {"n_heads", m.n_heads},
                {"ff_multiplier", m.ff_multiplier}, {"proj_dim", m.proj_dim}, {"max_text_len", m.max_text_len}};
  nlohmann::ordered_json terms = nlohmann::ordered_json::array();
  const char* names[3] = {"av", "vt", "avt"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (c.loss.enabled[i]) terms.push_back(names[i]);
  }
  j["loss"] = {{"tau", c.loss.tau},
               {"terms", terms},
               {"weights", {{"av", c.loss.weights[0]}, {"vt", c.loss.weights[1]}, {"avt", c.loss.weights[2]}}}};
  const auto& o = c.optim;
  j["optim"] = {{"lr_max", o.lr_max}, {"lr_min", o.lr_min}, {"warmup_steps", o.warmup_steps}, {"beta1", o.beta1},
                {"beta2", o.beta2},   {"eps", o.eps},       {"clip_norm", o.clip_norm}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed ? nlohmann::ordered_json(*t.seed) : nlohmann::ordered_json(nullptr)},
                {"checkpoint_every", t.checkpoint_every},
                {"augment_sigma", t.augment_sigma},
                {"log_wall_time", t.log_wall_time}};
  const auto& e = c.eval;
  j["eval"] = {{"probe_lr", e.probe_lr}, {"probe_batch_size", e.probe_batch_size}, {"probe_epochs", e.probe_epochs},
               {"probe_seed", e.probe_seed}, {"clips", e.clips}, {"splits", e.splits}, {"mode", e.mode}};
  return j;
}

/// Parses config text; syntax errors report line and column.
inline Config parse_config(const std::string& text, const std::string& source = "config") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": invalid JSON: " +
                      e.what());
  }
  return config_from_json(j);
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace lava
