// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset manifests, eager loading of LTF features, deterministic batching and
// audio augmentation.
//
// Manifest: one JSON object per line,
//   {"id": str, "label": int, "split": "train"|"test1"|"test2"|"test3",
//    "video_path": str, "audio_path": str|null, "text_path": str|null}
// Paths are relative to the directory holding the manifest. Video and audio
// files are f64 LTF tensors of shape [T x d] (one clip) or [C x T x d]
// (C clips); text files are rank-1 f64 LTF tensors of token ids.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/core/ltf.hpp"
#include "lava/core/random.hpp"
#include "lava/model/encoders.hpp"

namespace lava::data {

enum class Split { kTrain, kTest1, kTest2, kTest3 };

inline constexpr std::array<Split, 3> kTestSplits = {Split::kTest1, Split::kTest2, Split::kTest3};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest1: return "test1";
    case Split::kTest2: return "test2";
    case Split::kTest3: return "test3";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test1") return Split::kTest1;
  if (s == "test2") return Split::kTest2;
  if (s == "test3") return Split::kTest3;
  throw FormatError("unknown split '" + s + "'");
}

struct ManifestRecord {
  std::string id;
  std::size_t label = 0;
  Split split = Split::kTrain;
  std::string video_path;
  std::optional<std::string> audio_path;
  std::optional<std::string> text_path;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
};

inline nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["label"] = r.label;
  j["split"] = to_string(r.split);
  j["video_path"] = r.video_path;
  j["audio_path"] = r.audio_path ? nlohmann::ordered_json(*r.audio_path) : nlohmann::ordered_json(nullptr);
  j["text_path"] = r.text_path ? nlohmann::ordered_json(*r.text_path) : nlohmann::ordered_json(nullptr);
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  auto fail = [&](const std::string& why) { return FormatError(where + ": " + why); };
  if (!j.is_object()) throw fail("record is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const std::array<const char*, 6> kKeys = {"id", "label", "split", "video_path", "audio_path", "text_path"};
    if (std::find_if(kKeys.begin(), kKeys.end(), [&](const char* k) { return key == k; }) == kKeys.end()) {
      throw fail("unknown field '" + key + "'");
    }
  }
  ManifestRecord r;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field 'id'");
  if (!j.contains("label") || !j["label"].is_number_integer() || j["label"].get<long long>() < 0) {
    throw fail("missing non-negative integer field 'label'");
  }
  if (!j.contains("split") || !j["split"].is_string()) throw fail("missing string field 'split'");
  if (!j.contains("video_path") || !j["video_path"].is_string()) throw fail("every sample needs 'video_path'");
  r.id = j["id"].get<std::string>();
  r.label = j["label"].get<std::size_t>();
  r.split = parse_split(j["split"].get<std::string>());
  r.video_path = j["video_path"].get<std::string>();
  for (const char* key : {"audio_path", "text_path"}) {
    if (!j.contains(key) || j[key].is_null()) continue;
    if (!j[key].is_string()) throw fail(std::string("'") + key + "' must be a string or null");
    (std::string(key) == "audio_path" ? r.audio_path : r.text_path) = j[key].get<std::string>();
  }
  return r;
}

/// Parses a manifest and checks that every referenced file exists.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    m.records.push_back(record_from_json(j, where));
  }
  for (const auto& r : m.records) {
    for (const auto* p : {&r.video_path, r.audio_path ? &*r.audio_path : nullptr, r.text_path ? &*r.text_path : nullptr}) {
      if (p && !std::filesystem::is_regular_file(m.root / *p)) {
        throw IoError("sample " + r.id + " references missing file " + (m.root / *p).string());
      }
    }
  }
  if (m.records.empty()) throw FormatError(path.string() + ": manifest has no samples");
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

struct Sample {
  std::string id;
  std::size_t label = 0;
  Split split = Split::kTrain;
  std::vector<Tensor> video_clips;  // each [T_v x d_v]
  std::vector<Tensor> audio_clips;  // empty when audio is unavailable
  std::optional<std::vector<std::size_t>> text;

  bool has_audio() const { return !audio_clips.empty(); }
  bool has_text() const { return text.has_value(); }
  std::size_t clip_count() const { return video_clips.size(); }

  /// Inputs for one clip; audio clip c is paired with video clip c.
  ModalityFeatures features(std::size_t clip = 0) const {
    if (clip >= video_clips.size()) {
      throw ConfigError("sample " + id + " has only " + std::to_string(video_clips.size()) + " clips");
    }
    ModalityFeatures f{video_clips[clip], std::nullopt, text};
    if (has_audio()) f.audio = audio_clips[std::min(clip, audio_clips.size() - 1)];
    return f;
  }
};

struct Dataset {
  std::filesystem::path root;
  std::vector<Sample> samples;
  std::size_t n_classes = 0;
  std::size_t video_dim = 0;
  std::size_t audio_dim = 0;  // 0 when no sample has audio
  std::size_t max_token = 0;

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].split == s) idx.push_back(i);
    }
    return idx;
  }
};

namespace detail {

inline std::vector<Tensor> load_clips(const std::filesystem::path& path) {
  Tensor t = ltf::load(path);
  if (t.rank() == 2) {
    if (t.rows() == 0) throw FormatError(path.string() + ": empty feature sequence");
    return {t};
  }
  if (t.rank() != 3 || t.dim(0) == 0 || t.dim(1) == 0) {
    throw FormatError(path.string() + ": expected [T x d] or [clips x T x d], got " + shape_str(t.shape()));
  }
  const std::size_t clips = t.dim(0), len = t.dim(1), width = t.dim(2);
  std::vector<Tensor> out;
  for (std::size_t c = 0; c < clips; ++c) {
    auto first = t.data().begin() + static_cast<std::ptrdiff_t>(c * len * width);
    out.emplace_back(Shape{len, width}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(len * width)));
  }
  return out;
}

inline std::vector<std::size_t> load_tokens(const std::filesystem::path& path) {
  Tensor t = ltf::load(path);
  if (t.rank() != 1 || t.numel() == 0) {
    throw FormatError(path.string() + ": token file must be a nonempty rank-1 tensor");
  }
  std::vector<std::size_t> ids;
  for (double v : t.data()) {
    if (v < 0 || v != std::floor(v) || v > 9.0e15) {
      throw FormatError(path.string() + ": token ids must be non-negative integers");
    }
    ids.push_back(static_cast<std::size_t>(v));
  }
  return ids;
}

}  // namespace detail

/// Loads every sample into memory. Shapes must agree across the dataset.
inline Dataset load_dataset(const DatasetManifest& m) {
  Dataset ds;
  ds.root = m.root;
  for (const auto& r : m.records) {
    Sample s;
    s.id = r.id;
    s.label = r.label;
    s.split = r.split;
    s.video_clips = detail::load_clips(m.root / r.video_path);
    if (r.audio_path) s.audio_clips = detail::load_clips(m.root / *r.audio_path);
    if (r.text_path) s.text = detail::load_tokens(m.root / *r.text_path);
    const std::size_t vd = s.video_clips[0].cols();
    for (const auto& c : s.video_clips) {
      if (c.cols() != vd) throw FormatError("sample " + s.id + ": inconsistent video clip widths");
    }
    if (ds.video_dim == 0) ds.video_dim = vd;
    if (vd != ds.video_dim) {
      throw FormatError("sample " + s.id + ": video width " + std::to_string(vd) + " differs from " +
                        std::to_string(ds.video_dim));
    }
    if (s.has_audio()) {
      const std::size_t ad = s.audio_clips[0].cols();
      if (ds.audio_dim == 0) ds.audio_dim = ad;
      for (const auto& c : s.audio_clips) {
        if (c.cols() != ds.audio_dim) {
          throw FormatError("sample " + s.id + ": audio width differs from " + std::to_string(ds.audio_dim));
        }
      }
    }
    if (s.text) ds.max_token = std::max(ds.max_token, *std::max_element(s.text->begin(), s.text->end()));
    ds.n_classes = std::max(ds.n_classes, s.label + 1);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  return load_dataset(load_manifest(manifest_path));
}

/// Resolves a dataset directory or manifest file to the manifest path.
inline std::filesystem::path manifest_path(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) ? p / "manifest.jsonl" : p;
}

/// Adds N(0, sigma^2) noise drawn from `seed` to every element.
inline Tensor augment_audio(const Tensor& spectrogram, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("augmentation sigma must be >= 0");
  if (sigma == 0.0) return spectrogram;
  Rng rng(seed);
  std::vector<double> out(spectrogram.data().begin(), spectrogram.data().end());
  for (double& v : out) v += sigma * rng.normal();
  return Tensor(spectrogram.shape(), std::move(out));
}

struct Batch {
  std::vector<std::size_t> indices;  // into Dataset::samples
  std::vector<ModalityFeatures> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return indices.size(); }
};

/// Seeded shuffle of `split` keyed on (seed, epoch), chunked into batches of
/// `batch_size` (the last may be smaller). Uses clip 0 of every sample.
inline std::vector<Batch> make_batches(const Dataset& ds, Split split, std::size_t batch_size,
                                       std::uint64_t seed, std::uint64_t epoch, bool training = true) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (training && batch_size < 2) {
    throw ConfigError("pre-training needs batch size >= 2 so every batch has negatives");
  }
  auto order = ds.split_indices(split);
  if (order.empty()) throw ConfigError(std::string("split ") + to_string(split) + " is empty");
  Rng rng(derive_seed(seed, {0xba7c, epoch}));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      b.indices.push_back(order[i]);
      b.features.push_back(ds.samples[order[i]].features(0));
      b.labels.push_back(ds.samples[order[i]].label);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace lava::data
