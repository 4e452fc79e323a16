// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded synthetic tri-modal dataset.
//
// Every class k owns a video template column M_v[:, k] = base_v + separation * delta_v[k],
// drawn once per dataset, and likewise an audio template. base_v ~ N(0, b^2) is
// shared by all classes; the offsets delta_v are orthogonal with squared norm
// equal to the width (plain N(0, 1) draws when there are more classes than
// dimensions). Each token of a clip is its class column plus N(0, sigma^2) noise.
// Text tokens come from the class's private sub-vocabulary with probability
// text_informativeness and uniformly from the full vocabulary otherwise.
// Audio and text share one availability coin flip unless
// independent_availability is set. Test samples carry test_clips independent
// clips; train samples carry one.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lava/core/ltf.hpp"
#include "lava/core/random.hpp"
#include "lava/data/dataset.hpp"

namespace lava::data {

struct SyntheticConfig {
  std::size_t n_samples = 480;
  std::size_t n_classes = 8;
  std::uint64_t seed = 42;
  std::size_t video_len = 8;
  std::size_t video_dim = 32;
  std::size_t audio_len = 8;
  std::size_t audio_dim = 16;
  std::size_t text_len = 8;
  std::size_t vocab = 64;
  double availability = 0.625;
  double class_separation = 1.2;
  double template_base = 14.0;
  double video_noise = 1.0;
  double audio_noise = 1.0;
  double text_informativeness = 0.5;
  std::size_t test_clips = 4;
  bool independent_availability = false;

  void validate() const {
    if (n_samples < 4) throw ConfigError("synthetic data needs at least 4 samples");
    if (n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (video_len == 0 || video_dim == 0 || audio_len == 0 || audio_dim == 0 || text_len == 0) {
      throw ConfigError("synthetic sequence lengths and widths must be positive");
    }
    if (vocab < n_classes) throw ConfigError("vocab must be at least the number of classes");
    if (!(availability >= 0.0 && availability <= 1.0)) throw ConfigError("availability must lie in [0, 1]");
    if (!(text_informativeness >= 0.0 && text_informativeness <= 1.0)) {
      throw ConfigError("text_informativeness must lie in [0, 1]");
    }
    if (!(video_noise >= 0.0) || !(audio_noise >= 0.0) || !(class_separation >= 0.0) || !(template_base >= 0.0)) {
      throw ConfigError("noise and separation scales must be >= 0");
    }
    if (test_clips == 0) throw ConfigError("test_clips must be positive");
  }

  /// Tokens reserved for each class; the rest of the vocabulary is shared.
  std::size_t class_vocab() const { return std::max<std::size_t>(1, vocab / (2 * n_classes)); }
};

/// Split sizes: round(0.7 n) for training, the rest dealt across the three
/// test splits with any remainder going to the earlier ones.
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const std::size_t rest = n - n_train;
  std::vector<Split> splits(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {3}));
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t pos = 0;
  for (; pos < n_train; ++pos) splits[order[pos]] = Split::kTrain;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t count = rest / 3 + (s < rest % 3 ? 1 : 0);
    for (std::size_t j = 0; j < count; ++j) splits[order[pos++]] = kTestSplits[s];
  }
  return splits;
}

namespace detail {

struct Templates {
  std::vector<double> base;     // [dim]
  std::vector<double> offsets;  // [classes x dim], already scaled by the separation
};

inline Templates class_templates(std::size_t classes, std::size_t dim, double base_scale, double separation,
                                 Rng& rng) {
  Templates t;
  t.base.resize(dim);
  for (double& b : t.base) b = base_scale * rng.normal();
  std::vector<double>& offsets = t.offsets;
  offsets.resize(classes * dim);
  for (double& o : offsets) o = rng.normal();
  // Gram-Schmidt when the classes fit, so every pair of classes is equally far apart
  if (classes <= dim) {
    for (std::size_t k = 0; k < classes; ++k) {
      double* ok = offsets.data() + k * dim;
      for (std::size_t p = 0; p < k; ++p) {
        const double* op = offsets.data() + p * dim;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += ok[j] * op[j];
        for (std::size_t j = 0; j < dim; ++j) ok[j] -= dot * op[j];
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += ok[j] * ok[j];
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < dim; ++j) ok[j] /= norm;
    }
    for (double& o : offsets) o *= std::sqrt(static_cast<double>(dim));
  }
  for (double& o : offsets) o *= separation;
  return t;
}

inline Tensor draw_clips(const Templates& templates, std::size_t label, std::size_t clips, std::size_t len,
                         std::size_t dim, double sigma, Rng& rng) {
  std::vector<double> v(clips * len * dim);
  for (std::size_t c = 0; c < clips; ++c) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < dim; ++j) {
        v[(c * len + t) * dim + j] = templates.base[j] + templates.offsets[label * dim + j] + sigma * rng.normal();
      }
    }
  }
  return clips == 1 ? Tensor(Shape{len, dim}, std::move(v)) : Tensor(Shape{clips, len, dim}, std::move(v));
}

}  // namespace detail

struct GenerationSummary {
  std::filesystem::path manifest;
  std::size_t samples = 0;
  std::size_t with_audio = 0;
  std::size_t with_text = 0;
  std::vector<std::size_t> per_class;
  std::array<std::size_t, 4> per_split = {0, 0, 0, 0};
};

/// Writes LTF feature files and manifest.jsonl under `out_dir`.
inline GenerationSummary generate_synthetic(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"video", "audio", "text"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  Rng template_rng(derive_seed(cfg.seed, {1}));
  const auto video_templates = detail::class_templates(cfg.n_classes, cfg.video_dim, cfg.template_base,
                                                           cfg.class_separation, template_rng);
  const auto audio_templates = detail::class_templates(cfg.n_classes, cfg.audio_dim, cfg.template_base,
                                                           cfg.class_separation, template_rng);
  const auto splits = assign_splits(cfg.n_samples, cfg.seed);
  const std::size_t sub_vocab = cfg.class_vocab();

  GenerationSummary summary;
  summary.per_class.assign(cfg.n_classes, 0);
  std::vector<ManifestRecord> records;
  const int width = static_cast<int>(std::to_string(cfg.n_samples - 1).size());
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    Rng rng(derive_seed(cfg.seed, {2, i}));
    ManifestRecord r;
    std::string num = std::to_string(i);
    r.id = "s" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0') + num;
    r.label = rng.below(cfg.n_classes);
    r.split = splits[i];
    const bool has_audio = rng.bernoulli(cfg.availability);
    const bool has_text = cfg.independent_availability ? rng.bernoulli(cfg.availability) : has_audio;
    const std::size_t clips = r.split == Split::kTrain ? 1 : cfg.test_clips;

    r.video_path = "video/" + r.id + ".ltf";
    ltf::save(out_dir / r.video_path, detail::draw_clips(video_templates, r.label, clips, cfg.video_len,
                                                         cfg.video_dim, cfg.video_noise, rng));
    if (has_audio) {
      r.audio_path = "audio/" + r.id + ".ltf";
      ltf::save(out_dir / *r.audio_path, detail::draw_clips(audio_templates, r.label, clips, cfg.audio_len,
                                                            cfg.audio_dim, cfg.audio_noise, rng));
    }
    if (has_text) {
      std::vector<double> ids(cfg.text_len);
      for (double& id : ids) {
        const bool informative = rng.bernoulli(cfg.text_informativeness);
        const std::size_t tok = informative ? r.label * sub_vocab + rng.below(sub_vocab) : rng.below(cfg.vocab);
        id = static_cast<double>(tok);
      }
      r.text_path = "text/" + r.id + ".ltf";
      ltf::save(out_dir / *r.text_path, Tensor(Shape{cfg.text_len}, std::move(ids)));
    }

    ++summary.samples;
    summary.with_audio += has_audio ? 1 : 0;
    summary.with_text += has_text ? 1 : 0;
    ++summary.per_class[r.label];
    ++summary.per_split[static_cast<std::size_t>(r.split)];
    records.push_back(std::move(r));
  }
  summary.manifest = out_dir / "manifest.jsonl";
  write_manifest(summary.manifest, records);
  return summary;
}

}  // namespace lava::data
