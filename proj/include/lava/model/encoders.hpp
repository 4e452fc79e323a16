// SPDX-License-Identifier: Apache-2.0
#pragma once

// Modality front-ends, the three transformer encoders, and the projection
// heads into the audio-video, video-text and audio-video-text latent spaces.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lava/core/ops.hpp"
#include "lava/core/random.hpp"
#include "lava/nn/layers.hpp"

namespace lava {

enum class Modality { kAudio, kVideo, kText };
enum class Space { kAV, kVT, kAVT };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kVideo: return "video";
    case Modality::kText: return "text";
  }
  return "?";
}

inline const char* to_string(Space s) {
  switch (s) {
    case Space::kAV: return "AV";
    case Space::kVT: return "VT";
    case Space::kAVT: return "AVT";
  }
  return "?";
}

inline bool space_accepts(Space s, Modality m) {
  switch (s) {
    case Space::kAV: return m != Modality::kText;
    case Space::kVT: return m != Modality::kAudio;
    case Space::kAVT: return true;
  }
  return false;
}

struct ModelConfig {
  nn::EncoderConfig encoder;          // shared by f_a, f_v, f_t
  std::size_t video_feature_dim = 32;
  std::size_t audio_feature_dim = 16;
  std::size_t vocab = 64;
  std::size_t max_text_len = 128;
  std::size_t proj_dim = 32;

  /// Full-size configuration: 4 layers of width 1024, 80 mel bins, 48k vocab.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.encoder.n_layers = 4;
    c.encoder.d_model = 1024;
    c.encoder.n_heads = 16;
    c.video_feature_dim = 512;
    c.audio_feature_dim = 80;
    c.vocab = 48000;
    c.max_text_len = 128;
    c.proj_dim = 256;
    return c;
  }
};

/// One clip's worth of inputs for a single sample. Video is always present.
struct ModalityFeatures {
  Tensor video;                                   // [T_v x video_feature_dim]
  std::optional<Tensor> audio;                    // [T_a x audio_feature_dim]
  std::optional<std::vector<std::size_t>> text;   // token ids

  bool has_audio() const { return audio.has_value(); }
  bool has_text() const { return text.has_value(); }
};

/// Per-batch embeddings. Rows of unavailable modalities are zero constants and
/// must be excluded via the availability flags.
struct EmbeddingSet {
  Tensor z_a, z_v, z_t;                      // [N x d_model]
  Tensor proj_av_a, proj_av_v;               // [N x d_proj]
  Tensor proj_vt_v, proj_vt_t;
  Tensor proj_avt_a, proj_avt_v, proj_avt_t;
  std::vector<bool> avail_a, avail_t;

  std::size_t size() const { return avail_a.size(); }

  const Tensor& projection(Space s, Modality m) const {
    switch (s) {
      case Space::kAV: return m == Modality::kAudio ? proj_av_a : proj_av_v;
      case Space::kVT: return m == Modality::kVideo ? proj_vt_v : proj_vt_t;
      case Space::kAVT:
        return m == Modality::kAudio ? proj_avt_a : m == Modality::kVideo ? proj_avt_v : proj_avt_t;
    }
    return proj_avt_v;
  }

  std::vector<bool> available(Modality m) const {
    switch (m) {
      case Modality::kAudio: return avail_a;
      case Modality::kText: return avail_t;
      case Modality::kVideo: return std::vector<bool>(size(), true);
    }
    return {};
  }
};

/// Copies share parameter storage (tensors are handles).
class EncoderStack {
 public:
  EncoderStack(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(derive_seed(seed, {0x1a7a}));
    const std::size_t d = cfg.encoder.d_model;
    audio_mlp_ = nn::Mlp(cfg.audio_feature_dim, d, d, rng);
    video_in_ = nn::Linear(cfg.video_feature_dim, d, rng);
    text_embed_ = nn::EmbeddingTable(cfg.vocab, d, rng);
    f_a_ = nn::TransformerEncoder(cfg.encoder, rng);
    f_v_ = nn::TransformerEncoder(cfg.encoder, rng);
    f_t_ = nn::TransformerEncoder(cfg.encoder, rng);
    g_av_ = nn::Linear(d, cfg.proj_dim, rng);
    g_vt_ = nn::Linear(d, cfg.proj_dim, rng);
    g_avt_ = nn::Linear(d, cfg.proj_dim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t d_model() const { return cfg_.encoder.d_model; }

  /// video_in -> f_v -> mean pool.
  Tensor encode_video(const Tensor& frames) const {
    check_frames(frames, cfg_.video_feature_dim, "video");
    return nn::mean_pool(f_v_(video_in_(frames)));
  }

  /// Per-frame MLP -> f_a -> mean pool.
  Tensor encode_audio(const Tensor& spectrogram) const {
    check_frames(spectrogram, cfg_.audio_feature_dim, "audio");
    return nn::mean_pool(f_a_(audio_mlp_(spectrogram)));
  }

  Tensor encode_audio(const std::optional<Tensor>& spectrogram) const {
    if (!spectrogram) throw AvailabilityError("encode_audio called on a sample without audio");
    return encode_audio(*spectrogram);
  }

  /// Embedding lookup -> f_t -> mean pool.
  Tensor encode_text(const std::vector<std::size_t>& ids) const {
    if (ids.empty()) throw DimensionError("empty token sequence");
    if (ids.size() > cfg_.max_text_len) {
      throw DimensionError("token sequence of length " + std::to_string(ids.size()) +
                           " exceeds maximum " + std::to_string(cfg_.max_text_len));
    }
    return nn::mean_pool(f_t_(text_embed_(ids)));
  }

  /// Linear head of `space` followed by row L2 normalization.
  Tensor project(const Tensor& z, Space space, Modality modality) const {
    if (!space_accepts(space, modality)) {
      throw ConfigError(std::string("modality ") + to_string(modality) + " has no projection into " +
                        to_string(space));
    }
    return l2_normalize_rows(head(space)(z));
  }

  EmbeddingSet embed_batch(const std::vector<ModalityFeatures>& batch) const {
    if (batch.empty()) throw DimensionError("embed_batch on an empty batch");
    const std::size_t n = batch.size();
    EmbeddingSet e;
    e.avail_a.resize(n);
    e.avail_t.resize(n);
    std::vector<Tensor> video_rows, audio_rows, text_rows;
    std::vector<std::size_t> audio_idx, text_idx;
    for (std::size_t i = 0; i < n; ++i) {
      video_rows.push_back(encode_video(batch[i].video));
      if (batch[i].audio) {
        audio_rows.push_back(encode_audio(*batch[i].audio));
        audio_idx.push_back(i);
        e.avail_a[i] = true;
      }
      if (batch[i].text) {
        text_rows.push_back(encode_text(*batch[i].text));
        text_idx.push_back(i);
        e.avail_t[i] = true;
      }
    }
    e.z_v = stack_rows(video_rows);
    e.proj_av_v = project(e.z_v, Space::kAV, Modality::kVideo);
    e.proj_vt_v = project(e.z_v, Space::kVT, Modality::kVideo);
    e.proj_avt_v = project(e.z_v, Space::kAVT, Modality::kVideo);
    embed_partial(audio_rows, audio_idx, n, Modality::kAudio, Space::kAV, e.z_a, e.proj_av_a,
                  e.proj_avt_a);
    embed_partial(text_rows, text_idx, n, Modality::kText, Space::kVT, e.z_t, e.proj_vt_t,
                  e.proj_avt_t);
    return e;
  }

  /// Every trainable tensor with its hierarchical name, in a fixed order.
  nn::ParameterList parameters() const {
    nn::ParameterList out;
    audio_mlp_.collect("audio_mlp", out);
    video_in_.collect("video_in", out);
    text_embed_.collect("text_embed", out);
    f_a_.collect("f_a", out);
    f_v_.collect("f_v", out);
    f_t_.collect("f_t", out);
    g_av_.collect("g_av", out);
    g_vt_.collect("g_vt", out);
    g_avt_.collect("g_avt", out);
    return out;
  }

  const nn::TransformerEncoder& encoder(Modality m) const {
    return m == Modality::kAudio ? f_a_ : m == Modality::kVideo ? f_v_ : f_t_;
  }

  void set_positional_encoding(bool on) {
    f_a_.set_positional_encoding(on);
    f_v_.set_positional_encoding(on);
    f_t_.set_positional_encoding(on);
  }

 private:
  static void check_frames(const Tensor& x, std::size_t width, const char* what) {
    if (x.rank() != 2 || x.cols() != width) {
      throw DimensionError(std::string(what) + " features must be [T x " + std::to_string(width) +
                           "], got " + shape_str(x.shape()));
    }
    if (x.rows() == 0) throw DimensionError(std::string(what) + " sequence is empty");
  }

  const nn::Linear& head(Space s) const {
    return s == Space::kAV ? g_av_ : s == Space::kVT ? g_vt_ : g_avt_;
  }

  // Encodes the available subset, then scatters into N zero-filled rows.
  void embed_partial(const std::vector<Tensor>& rows, const std::vector<std::size_t>& idx,
                     std::size_t n, Modality m, Space pair_space, Tensor& z, Tensor& proj_pair,
                     Tensor& proj_avt) const {
    const std::size_t d = d_model(), p = cfg_.proj_dim;
    if (rows.empty()) {
      z = Tensor::zeros({n, d});
      proj_pair = Tensor::zeros({n, p});
      proj_avt = Tensor::zeros({n, p});
      return;
    }
    Tensor zs = stack_rows(rows);
    z = scatter_rows(zs, idx, n);
    proj_pair = scatter_rows(project(zs, pair_space, m), idx, n);
    proj_avt = scatter_rows(project(zs, Space::kAVT, m), idx, n);
  }

  ModelConfig cfg_;
  nn::Mlp audio_mlp_;
  nn::Linear video_in_;
  nn::EmbeddingTable text_embed_;
  nn::TransformerEncoder f_a_, f_v_, f_t_;
  nn::Linear g_av_, g_vt_, g_avt_;
};

}  // namespace lava
