// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "lava/core/error.hpp"
#include "lava/nn/layers.hpp"

namespace lava::optim {

/// Cosine decay from lr_max to lr_min over total_steps, after an optional
/// linear warmup. Steps past the end clamp to lr_min.
struct CosineSchedule {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;

  void validate() const {
    if (!(lr_max >= lr_min) || !(lr_min >= 0.0)) throw ConfigError("schedule needs lr_max >= lr_min >= 0");
    if (total_steps < 1) throw ConfigError("schedule needs at least one step");
    if (warmup_steps >= total_steps && warmup_steps != 0) {
      throw ConfigError("warmup must be shorter than the schedule");
    }
  }

  double lr_at(std::size_t step) const {
    if (step >= total_steps) return lr_min;
    if (step < warmup_steps) {
      return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clipping; 0 disables
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(nn::ParameterList params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update with the gradients currently stored on the parameters.
  /// Throws NumericError, leaving every parameter untouched, if any gradient is
  /// non-finite.
  void step(double lr) {
    for (const auto& [name, p] : params_) {
      for (double g : p.grad_view()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + name);
      }
    }
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double ss = 0.0;
      for (const auto& [name, p] : params_) {
        for (double g : p.grad_view()) ss += g * g;
      }
      const double norm = std::sqrt(ss);
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].second;
      auto grad = p.grad_view();
      auto value = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i] * clip;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  const nn::ParameterList& parameters() const { return params_; }
  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }
  const std::vector<double>& first_moment(std::size_t k) const { return m_[k]; }
  const std::vector<double>& second_moment(std::size_t k) const { return v_[k]; }

  void restore(std::uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
      throw FormatError("optimizer state does not match parameter count");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (m[k].size() != params_[k].second.numel() || v[k].size() != params_[k].second.numel()) {
        throw FormatError("optimizer state shape mismatch for " + params_[k].first);
      }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  nn::ParameterList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace lava::optim
