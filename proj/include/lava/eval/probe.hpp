// SPDX-License-Identifier: Apache-2.0
#pragma once

// Linear probes on frozen embeddings, multi-clip logit averaging and
// per-split top-1 reporting.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/data/dataset.hpp"
#include "lava/model/encoders.hpp"
#include "lava/optim/adam.hpp"

namespace lava::eval {

enum class ProbeMode { kVideo, kAudioVideo };

inline const char* to_string(ProbeMode m) { return m == ProbeMode::kVideo ? "video" : "audio+video"; }

inline ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "video") return ProbeMode::kVideo;
  if (s == "audio+video") return ProbeMode::kAudioVideo;
  throw ConfigError("unknown probe mode '" + s + "' (expected video or audio+video)");
}

/// [z_v ; z_a], video first.
inline Tensor fuse_embeddings(const Tensor& z_v, const std::optional<Tensor>& z_a) {
  if (!z_a) throw AvailabilityError("fusion needs an audio embedding");
  return concat(z_v, *z_a);
}

/// FNV-1a over parameter names, shapes and raw value bytes.
inline std::uint64_t parameter_fingerprint(const nn::ParameterList& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) mix(&d, sizeof d);
    mix(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

/// Frozen features for every usable sample of a split; one row per clip.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<std::size_t> sample_index;             // into Dataset::samples
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::vector<double>>> clips;  // [sample][clip][dim]
  std::size_t excluded = 0;                          // samples dropped for lacking audio

  std::size_t size() const { return labels.size(); }
};

inline std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Encodes the first `clips` clips of each sample in `split` under no-grad.
/// Audio+video mode skips samples without audio and counts them.
inline FeatureSet extract_features(const EncoderStack& model, const data::Dataset& ds, data::Split split,
                                   ProbeMode mode, std::size_t clips) {
  if (clips == 0) throw ConfigError("clips per video must be >= 1");
  NoGradGuard no_grad;
  FeatureSet fs;
  fs.dim = mode == ProbeMode::kVideo ? model.d_model() : 2 * model.d_model();
  for (std::size_t idx : ds.split_indices(split)) {
    const data::Sample& s = ds.samples[idx];
    if (mode == ProbeMode::kAudioVideo && !s.has_audio()) {
      ++fs.excluded;
      continue;
    }
    if (s.clip_count() < clips) {
      throw ConfigError("sample " + s.id + " has " + std::to_string(s.clip_count()) + " clips, " +
                        std::to_string(clips) + " requested");
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t c = 0; c < clips; ++c) {
      const ModalityFeatures f = s.features(c);
      Tensor z = model.encode_video(f.video);
      if (mode == ProbeMode::kAudioVideo) z = fuse_embeddings(z, model.encode_audio(f.audio));
      rows.push_back(to_vector(z));
    }
    fs.sample_index.push_back(idx);
    fs.labels.push_back(s.label);
    fs.clips.push_back(std::move(rows));
  }
  return fs;
}

/// Mean-pooled raw video features, the no-encoder baseline.
inline FeatureSet raw_video_features(const data::Dataset& ds, data::Split split, std::size_t clips) {
  FeatureSet fs;
  fs.dim = ds.video_dim;
  for (std::size_t idx : ds.split_indices(split)) {
    const data::Sample& s = ds.samples[idx];
    if (s.clip_count() < clips) throw ConfigError("sample " + s.id + " has too few clips");
    std::vector<std::vector<double>> rows;
    for (std::size_t c = 0; c < clips; ++c) rows.push_back(to_vector(mean_rows(s.video_clips[c])));
    fs.sample_index.push_back(idx);
    fs.labels.push_back(s.label);
    fs.clips.push_back(std::move(rows));
  }
  return fs;
}

struct ProbeConfig {
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  bool zero_init = true;
};

struct ProbeHead {
  ProbeMode mode = ProbeMode::kVideo;
  std::size_t n_classes = 0;
  nn::Linear layer;

  /// Logits for one feature row.
  std::vector<double> logits(const std::vector<double>& x) const {
    NoGradGuard no_grad;
    return to_vector(layer(Tensor(Shape{1, x.size()}, x)));
  }

  /// Mean of per-clip logits.
  std::vector<double> averaged_logits(const std::vector<std::vector<double>>& clips) const {
    std::vector<double> acc(n_classes, 0.0);
    for (const auto& c : clips) {
      const auto l = logits(c);
      for (std::size_t k = 0; k < n_classes; ++k) acc[k] += l[k];
    }
    for (double& v : acc) v /= static_cast<double>(clips.size());
    return acc;
  }
};

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Cross-entropy training of a linear head on the first clip of each sample,
/// Adam at a constant learning rate, reshuffled every epoch.
inline ProbeHead train_probe(const FeatureSet& train, std::size_t n_classes, ProbeMode mode,
                             const ProbeConfig& cfg) {
  if (train.size() == 0) {
    throw ConfigError(mode == ProbeMode::kAudioVideo ? "no training samples with audio for the audio+video probe"
                                                     : "no training samples for the probe");
  }
  if (n_classes < 2) throw ConfigError("probe needs at least 2 classes");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0)) throw ConfigError("invalid probe settings");
  Rng init(derive_seed(cfg.seed, {0x9b0e}));
  ProbeHead head{mode, n_classes, nn::Linear(train.dim, n_classes, init)};
  if (cfg.zero_init) {
    head.layer = nn::Linear(Tensor::zeros({train.dim, n_classes}, true), Tensor::zeros({n_classes}, true));
  }
  nn::ParameterList params;
  head.layer.collect("probe", params);
  optim::Adam opt(params);
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {0x9b0f, epoch}));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<double> x;
      std::vector<std::size_t> y;
      for (std::size_t i = start; i < end; ++i) {
        const auto& row = train.clips[order[i]][0];
        x.insert(x.end(), row.begin(), row.end());
        y.push_back(train.labels[order[i]]);
      }
      Tensor batch(Shape{end - start, train.dim}, std::move(x));
      cross_entropy(head.layer(batch), y).backward();
      opt.step(cfg.lr);
      opt.zero_grad();
    }
  }
  return head;
}

/// Trains a probe on frozen encoder features; throws if the encoder changed.
inline ProbeHead train_probe(const EncoderStack& model, const data::Dataset& ds, ProbeMode mode,
                             const ProbeConfig& cfg) {
  const auto params = model.parameters();
  const std::uint64_t before = parameter_fingerprint(params);
  FeatureSet train = extract_features(model, ds, data::Split::kTrain, mode, 1);
  ProbeHead head = train_probe(train, ds.n_classes, mode, cfg);
  if (parameter_fingerprint(params) != before) throw Error("encoder parameters changed during probe training");
  return head;
}

inline double train_accuracy(const ProbeHead& head, const FeatureSet& fs) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < fs.size(); ++i) hits += argmax(head.logits(fs.clips[i][0])) == fs.labels[i] ? 1 : 0;
  return fs.size() ? static_cast<double>(hits) / static_cast<double>(fs.size()) : 0.0;
}

struct SplitReport {
  std::string split;
  double top1 = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt for classes absent from the split
  std::size_t n_videos = 0;
  std::size_t n_excluded = 0;
};

inline SplitReport evaluate(const ProbeHead& head, const FeatureSet& test, const std::string& split_name) {
  if (test.size() == 0) throw ConfigError("split " + split_name + " has no evaluable videos");
  SplitReport r;
  r.split = split_name;
  r.n_videos = test.size();
  r.n_excluded = test.excluded;
  std::vector<std::size_t> hits(head.n_classes, 0), counts(head.n_classes, 0);
  std::size_t total_hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool hit = argmax(head.averaged_logits(test.clips[i])) == test.labels[i];
    total_hits += hit ? 1 : 0;
    if (test.labels[i] < head.n_classes) {
      ++counts[test.labels[i]];
      hits[test.labels[i]] += hit ? 1 : 0;
    }
  }
  r.top1 = static_cast<double>(total_hits) / static_cast<double>(test.size());
  for (std::size_t k = 0; k < head.n_classes; ++k) {
    if (counts[k] == 0) {
      r.per_class.emplace_back(std::nullopt);
    } else {
      r.per_class.emplace_back(static_cast<double>(hits[k]) / static_cast<double>(counts[k]));
    }
  }
  return r;
}

inline SplitReport evaluate(const EncoderStack& model, const ProbeHead& head, const data::Dataset& ds,
                            data::Split split, std::size_t clips) {
  if (ds.split_indices(split).empty()) throw ConfigError(std::string("split ") + data::to_string(split) + " is empty");
  return evaluate(head, extract_features(model, ds, split, head.mode, clips), data::to_string(split));
}

struct EvalReport {
  std::string mode;
  std::size_t clips_per_video = 1;
  std::vector<SplitReport> splits;
  double mean_top1 = 0.0;
};

inline EvalReport summarize(std::string mode, std::size_t clips, std::vector<SplitReport> splits) {
  EvalReport r{std::move(mode), clips, std::move(splits), 0.0};
  double s = 0.0;
  for (const auto& sp : r.splits) s += sp.top1;
  r.mean_top1 = s / static_cast<double>(r.splits.size());
  return r;
}

/// Test splits 1-3 (or split 1 only) with their arithmetic mean.
inline EvalReport evaluate_all_splits(const EncoderStack& model, const ProbeHead& head, const data::Dataset& ds,
                                      std::size_t clips, bool all_splits = true) {
  std::vector<SplitReport> out;
  for (data::Split s : data::kTestSplits) {
    if (ds.split_indices(s).empty()) throw ConfigError(std::string("dataset has no ") + data::to_string(s) + " split");
    out.push_back(evaluate(model, head, ds, s, clips));
    if (!all_splits) break;
  }
  return summarize(to_string(head.mode), clips, std::move(out));
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json splits = nlohmann::ordered_json::array();
  for (const auto& s : r.splits) {
    nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
    for (const auto& p : s.per_class) per_class.push_back(p ? nlohmann::ordered_json(*p) : nlohmann::ordered_json());
    splits.push_back({{"split", s.split},
                      {"top1", s.top1},
                      {"per_class", per_class},
                      {"n_videos", s.n_videos},
                      {"n_excluded", s.n_excluded}});
  }
  return {{"mode", r.mode}, {"clips_per_video", r.clips_per_video}, {"splits", splits}, {"mean_top1", r.mean_top1}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.mode = j.at("mode").get<std::string>();
    r.clips_per_video = j.at("clips_per_video").get<std::size_t>();
    for (const auto& s : j.at("splits")) {
      SplitReport sp;
      sp.split = s.at("split").get<std::string>();
      sp.top1 = s.at("top1").get<double>();
      for (const auto& p : s.at("per_class")) {
        sp.per_class.push_back(p.is_null() ? std::nullopt : std::optional<double>(p.get<double>()));
      }
      sp.n_videos = s.at("n_videos").get<std::size_t>();
      sp.n_excluded = s.at("n_excluded").get<std::size_t>();
      r.splits.push_back(std::move(sp));
    }
    r.mean_top1 = j.at("mean_top1").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

/// Probe head archive: weight and bias plus the mode, as a two-tensor LTF pair.
inline nlohmann::ordered_json head_to_json(const ProbeHead& h) {
  return {{"mode", to_string(h.mode)},
          {"n_classes", h.n_classes},
          {"in_features", h.layer.in_features()},
          {"W", to_vector(h.layer.weight())},
          {"b", to_vector(h.layer.bias())}};
}

inline ProbeHead head_from_json(const nlohmann::json& j) {
  try {
    ProbeHead h;
    h.mode = parse_probe_mode(j.at("mode").get<std::string>());
    h.n_classes = j.at("n_classes").get<std::size_t>();
    const auto in = j.at("in_features").get<std::size_t>();
    auto w = j.at("W").get<std::vector<double>>();
    auto b = j.at("b").get<std::vector<double>>();
    if (w.size() != in * h.n_classes || b.size() != h.n_classes) throw FormatError("probe head shape mismatch");
    h.layer = nn::Linear(Tensor(Shape{in, h.n_classes}, std::move(w)), Tensor(Shape{h.n_classes}, std::move(b)));
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed probe head: ") + e.what());
  }
}

}  // namespace lava::eval
