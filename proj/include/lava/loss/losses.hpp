// SPDX-License-Identifier: Apache-2.0
#pragma once

// Contrastive objectives over an EmbeddingSet.
//
// nce(Z, Z', tau) is the batch-aggregate log-ratio
//
//   -log( sum_i e^{z_i.z'_i / tau} / (sum_i e^{z_i.z'_i / tau} + sum_i sum_{j!=i} e^{z_i.z'_j / tau}) )
//
// The denominator covers every ordered pair (i, j) of the N x N similarity
// matrix, so the loss reduces to LSE(S) - LSE(diag S) with S = Z Z'^T / tau.
//
//   L_AV  = nce(g_av(z_a),  g_av(z_v))
//   L_VT  = nce(g_vt(z_v),  g_vt(z_t))
//   L_AVT = sum over m in {a, v, t} of nce(g_avt(z_m), c)
//   L     = L_AV + L_VT + L_AVT            (weights default to 1)
//
// Samples lacking a modality are removed before a term is evaluated.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lava/core/ops.hpp"
#include "lava/model/encoders.hpp"

namespace lava {

enum class LossTerm { kAV = 0, kVT = 1, kAVT = 2 };

inline constexpr std::array<LossTerm, 3> kAllLossTerms = {LossTerm::kAV, LossTerm::kVT, LossTerm::kAVT};

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::kAV: return "AV";
    case LossTerm::kVT: return "VT";
    case LossTerm::kAVT: return "AVT";
  }
  return "?";
}

struct LossConfig {
  double tau = 0.07;
  std::array<bool, 3> enabled = {true, true, true};
  std::array<double, 3> weights = {1.0, 1.0, 1.0};

  bool is_enabled(LossTerm t) const { return enabled[static_cast<std::size_t>(t)]; }
  double weight(LossTerm t) const { return weights[static_cast<std::size_t>(t)]; }

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss temperature must be positive");
    if (!enabled[0] && !enabled[1] && !enabled[2]) {
      throw ConfigError("at least one loss term must be enabled");
    }
    for (double w : weights) {
      if (!std::isfinite(w)) throw ConfigError("loss weights must be finite");
    }
  }
};

inline constexpr double kUnitNormTolerance = 1e-6;

/// exp(x.y / tau).
inline double similarity(std::span<const double> x, std::span<const double> y, double tau) {
  if (!(tau > 0.0)) throw ConfigError("similarity: temperature must be positive");
  if (x.size() != y.size()) throw DimensionError("similarity: vector lengths differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return std::exp(dot / tau);
}

inline std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx.push_back(i);
  }
  return idx;
}

namespace detail {

inline void require_unit_rows(const Tensor& x, const char* name) {
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
    if (std::abs(std::sqrt(ss) - 1.0) > kUnitNormTolerance) {
      throw Error(std::string("nce: row ") + std::to_string(i) + " of " + name + " is not unit-norm");
    }
  }
}

}  // namespace detail

/// Batch NCE over the rows selected by `mask`; roles are fixed (z_i against z'_j).
inline Tensor nce(const Tensor& z, const Tensor& z_prime, double tau, const std::vector<bool>& mask) {
  if (!(tau > 0.0)) throw ConfigError("nce: temperature must be positive");
  if (z.rank() != 2 || z.shape() != z_prime.shape()) {
    throw DimensionError("nce: operands must be equal-shape matrices, got " + shape_str(z.shape()) +
                         " and " + shape_str(z_prime.shape()));
  }
  if (mask.size() != z.rows()) throw DimensionError("nce: mask length != batch size");
  const auto idx = mask_indices(mask);
  if (idx.empty()) throw Error("nce: mask selects no samples");
  Tensor a = gather_rows(z, idx);
  Tensor b = gather_rows(z_prime, idx);
  detail::require_unit_rows(a, "z");
  detail::require_unit_rows(b, "z'");
  Tensor s = matmul_nt(a, b, 1.0 / tau);
  return sub(logsumexp(s), logsumexp(diag(s)));
}

inline Tensor nce(const Tensor& z, const Tensor& z_prime, double tau) {
  return nce(z, z_prime, tau, std::vector<bool>(z.rank() == 2 ? z.rows() : 0, true));
}

struct TermResult {
  Tensor value = Tensor::scalar(0.0);
  bool skipped = false;
};

namespace detail {

inline std::vector<bool> both(const std::vector<bool>& a, const std::vector<bool>& b) {
  std::vector<bool> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

inline bool any(const std::vector<bool>& m) {
  for (bool b : m) {
    if (b) return true;
  }
  return false;
}

}  // namespace detail

inline TermResult loss_av(const EmbeddingSet& e, const LossConfig& cfg) {
  if (!detail::any(e.avail_a)) return {Tensor::scalar(0.0), true};
  return {nce(e.proj_av_a, e.proj_av_v, cfg.tau, e.avail_a), false};
}

inline TermResult loss_vt(const EmbeddingSet& e, const LossConfig& cfg) {
  if (!detail::any(e.avail_t)) return {Tensor::scalar(0.0), true};
  return {nce(e.proj_vt_v, e.proj_vt_t, cfg.tau, e.avail_t), false};
}

/// Per-sample centroids in the tri-modal space; valid iff >= 2 modalities.
struct CentroidSet {
  Tensor c;
  std::vector<bool> valid;
};

/// Mean of the available AVT projections of each sample, re-normalized to
/// unit length. Gradient flows into every contributing projection.
inline CentroidSet compute_centroids(const EmbeddingSet& e) {
  const std::size_t n = e.size();
  std::vector<double> wa(n), wv(n), wt(n);
  CentroidSet out;
  out.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double count = 1.0 + (e.avail_a[i] ? 1.0 : 0.0) + (e.avail_t[i] ? 1.0 : 0.0);
    wv[i] = 1.0 / count;
    wa[i] = e.avail_a[i] ? 1.0 / count : 0.0;
    wt[i] = e.avail_t[i] ? 1.0 / count : 0.0;
    out.valid[i] = count >= 2.0;
  }
  Tensor mean = add(add(row_scale(e.proj_avt_a, wa), row_scale(e.proj_avt_v, wv)),
                    row_scale(e.proj_avt_t, wt));
  out.c = l2_normalize_rows(mean);
  return out;
}

inline TermResult loss_avt(const EmbeddingSet& e, const CentroidSet& c, const LossConfig& cfg) {
  if (!detail::any(c.valid)) return {Tensor::scalar(0.0), true};
  TermResult result{Tensor::scalar(0.0), true};
  for (Modality m : {Modality::kAudio, Modality::kVideo, Modality::kText}) {
    const auto mask = detail::both(e.available(m), c.valid);
    if (!detail::any(mask)) continue;
    Tensor term = nce(e.projection(Space::kAVT, m), c.c, cfg.tau, mask);
    result.value = result.skipped ? term : add(result.value, term);
    result.skipped = false;
  }
  return result;
}

/// Total objective with its per-term breakdown. Disabled terms report 0 and
/// are not listed as skipped.
struct LossBreakdown {
  Tensor total = Tensor::scalar(0.0);
  std::array<double, 3> terms = {0.0, 0.0, 0.0};  // unweighted values
  std::vector<LossTerm> skipped;

  double term(LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
  double value() const { return total.item(); }
  bool all_skipped() const { return !total.requires_grad() && total.item() == 0.0; }
};

inline LossBreakdown loss_total(const EmbeddingSet& e, const CentroidSet* centroids,
                                const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  bool have_total = false;
  for (LossTerm t : kAllLossTerms) {
    if (!cfg.is_enabled(t)) continue;
    TermResult r;
    switch (t) {
      case LossTerm::kAV: r = loss_av(e, cfg); break;
      case LossTerm::kVT: r = loss_vt(e, cfg); break;
      case LossTerm::kAVT: {
        if (centroids) {
          r = loss_avt(e, *centroids, cfg);
        } else {
          r = loss_avt(e, compute_centroids(e), cfg);
        }
        break;
      }
    }
    if (r.skipped) {
      out.skipped.push_back(t);
      continue;
    }
    out.terms[static_cast<std::size_t>(t)] = r.value.item();
    Tensor weighted = cfg.weight(t) == 1.0 ? r.value : scale(r.value, cfg.weight(t));
    out.total = have_total ? add(out.total, weighted) : weighted;
    have_total = true;
  }
  return out;
}

inline LossBreakdown loss_total(const EmbeddingSet& e, const LossConfig& cfg) {
  return loss_total(e, nullptr, cfg);
}

}  // namespace lava
