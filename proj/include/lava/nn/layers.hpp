// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lava/core/ops.hpp"
#include "lava/core/random.hpp"
#include "lava/core/tensor.hpp"

namespace lava::nn {

/// Parameters in registration order, each with its hierarchical name.
using ParameterList = std::vector<std::pair<std::string, Tensor>>;

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return Tensor(Shape{fan_in, fan_out}, std::move(w), true);
}

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight_(xavier_uniform(in, out, rng)), bias_(Tensor::zeros({out}, true)) {}
  Linear(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rank() != 2 || bias_.shape() != Shape{weight_.cols()}) {
      throw DimensionError("Linear: weight " + shape_str(weight_.shape()) + " and bias " +
                           shape_str(bias_.shape()) + " are inconsistent");
    }
  }

  /// X W + b for X[n x in].
  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_features()) {
      throw DimensionError("Linear expects [n x " + std::to_string(in_features()) + "], got " +
                           shape_str(x.shape()));
    }
    return add_row_bias(matmul(x, weight_), bias_);
  }

  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".W", weight_);
    out.emplace_back(prefix + ".b", bias_);
  }

 private:
  Tensor weight_;
  Tensor bias_;
};

/// Two linear layers with a ReLU in between.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : first_(in, hidden, rng), second_(hidden, out, rng) {}

  Tensor operator()(const Tensor& x) const { return second_(relu(first_(x))); }

  void collect(const std::string& prefix, ParameterList& out) const {
    first_.collect(prefix + ".fc0", out);
    second_.collect(prefix + ".fc1", out);
  }

 private:
  Linear first_;
  Linear second_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t d)
      : gamma_(Tensor::full({d}, 1.0, true)), beta_(Tensor::zeros({d}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gamma_, beta_); }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".gamma", gamma_);
    out.emplace_back(prefix + ".beta", beta_);
  }

 private:
  Tensor gamma_;
  Tensor beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t n_heads, Rng& rng)
      : n_heads_(n_heads),
        query_(d_model, d_model, rng),
        key_(d_model, d_model, rng),
        value_(d_model, d_model, rng),
        output_(d_model, d_model, rng) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw DimensionError("d_model " + std::to_string(d_model) + " not divisible by " +
                           std::to_string(n_heads) + " heads");
    }
  }

  Tensor operator()(const Tensor& x) const {
    return output_(attention(query_(x), key_(x), value_(x), n_heads_));
  }

  /// Attention probabilities for input X, flat [n_heads][T x T].
  std::vector<double> weights(const Tensor& x) const {
    NoGradGuard no_grad;
    return attention_weights(query_(x), key_(x), n_heads_);
  }

  std::size_t n_heads() const { return n_heads_; }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".Wq", query_.weight());
    out.emplace_back(prefix + ".bq", query_.bias());
    out.emplace_back(prefix + ".Wk", key_.weight());
    out.emplace_back(prefix + ".bk", key_.bias());
    out.emplace_back(prefix + ".Wv", value_.weight());
    out.emplace_back(prefix + ".bv", value_.bias());
    out.emplace_back(prefix + ".Wo", output_.weight());
    out.emplace_back(prefix + ".bo", output_.bias());
  }

 private:
  std::size_t n_heads_ = 1;
  Linear query_, key_, value_, output_;
};

/// Post-norm transformer block:
///   h   = LN1(x + MHA(x))
///   out = LN2(h + FF2(relu(FF1(h))))
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::size_t d_model, std::size_t n_heads, std::size_t d_ff, Rng& rng)
      : attn_(d_model, n_heads, rng),
        norm1_(d_model),
        ff1_(d_model, d_ff, rng),
        ff2_(d_ff, d_model, rng),
        norm2_(d_model) {}

  Tensor operator()(const Tensor& x) const {
    Tensor h = norm1_(add(x, attn_(x)));
    return norm2_(add(h, ff2_(relu(ff1_(h)))));
  }

  const MultiHeadAttention& attention_layer() const { return attn_; }

  void collect(const std::string& prefix, ParameterList& out) const {
    attn_.collect(prefix + ".attn", out);
    norm1_.collect(prefix + ".ln1", out);
    ff1_.collect(prefix + ".ff1", out);
    ff2_.collect(prefix + ".ff2", out);
    norm2_.collect(prefix + ".ln2", out);
  }

 private:
  MultiHeadAttention attn_;
  LayerNorm norm1_;
  Linear ff1_, ff2_;
  LayerNorm norm2_;
};

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ff_multiplier = 2;
  bool positional_encoding = true;  // off only in equivariance tests
};

/// Fixed sinusoidal table: PE[p][2i] = sin(p / 10000^(2i/d)), PE[p][2i+1] = cos(same).
inline Tensor sinusoidal_positions(std::size_t length, std::size_t d_model) {
  std::vector<double> pe(length * d_model);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double exponent = static_cast<double>(j - j % 2) / static_cast<double>(d_model);
      const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      pe[p * d_model + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor(Shape{length, d_model}, std::move(pe));
}

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
      throw DimensionError("d_model must be divisible by n_heads");
    }
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      blocks_.emplace_back(cfg.d_model, cfg.n_heads, cfg.ff_multiplier * cfg.d_model, rng);
    }
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != cfg_.d_model) {
      throw DimensionError("encoder expects [T x " + std::to_string(cfg_.d_model) + "], got " +
                           shape_str(x.shape()));
    }
    if (x.rows() == 0) throw DimensionError("encoder input has zero tokens");
    Tensor h = cfg_.positional_encoding ? add(x, sinusoidal_positions(x.rows(), cfg_.d_model)) : x;
    for (const auto& block : blocks_) h = block(h);
    return h;
  }

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<EncoderBlock>& blocks() const { return blocks_; }
  void set_positional_encoding(bool on) { cfg_.positional_encoding = on; }

  void collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
  }

 private:
  EncoderConfig cfg_;
  std::vector<EncoderBlock> blocks_;
};

/// Token-id -> vector lookup. Entries start at unit variance (Uniform(+-sqrt 3))
/// so token content is on the same scale as the positional signal.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab, std::size_t d_model, Rng& rng) {
    if (vocab == 0) throw DimensionError("embedding vocabulary must be nonempty");
    const double bound = std::sqrt(3.0);
    std::vector<double> t(vocab * d_model);
    for (double& v : t) v = rng.uniform(-bound, bound);
    table_ = Tensor(Shape{vocab, d_model}, std::move(t), true);
  }

  Tensor operator()(const std::vector<std::size_t>& ids) const {
    for (std::size_t id : ids) {
      if (id >= vocab()) {
        throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab()));
      }
    }
    return gather_rows(table_, ids);
  }

  std::size_t vocab() const { return table_.rows(); }
  const Tensor& table() const { return table_; }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".table", table_);
  }

 private:
  Tensor table_;
};

/// Columnwise mean over the token axis: [T x d] -> [d].
inline Tensor mean_pool(const Tensor& x) { return mean_rows(x); }

}  // namespace lava::nn
