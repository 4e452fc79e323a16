// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable tensor operations. Every op validates shapes, rejects
// non-finite results and, when recording, registers a backward closure that
// accumulates into its inputs' gradient buffers.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lava/core/kernels.hpp"
#include "lava/core/tensor.hpp"

namespace lava {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void axpy(std::span<double> dst, std::span<const double> src, double alpha = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_acc(m, k, n, a.data().data(), b.data().data(), out.data());
  return detail::make_result("matmul", {m, n}, std::move(out), {&a, &b},
                             [a, b, m, k, n](std::span<const double> g) {
                               if (auto ga = detail::grad_sink(a); !ga.empty()) {
                                 kernels::gemm_nt_acc(m, n, k, g.data(), b.data().data(), ga.data());
                               }
                               if (auto gb = detail::grad_sink(b); !gb.empty()) {
                                 kernels::gemm_tn_acc(k, m, n, a.data().data(), g.data(), gb.data());
                               }
                             });
}

/// alpha * A * B^T for A[m x k], B[n x k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b, double alpha = 1.0) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nt_acc(m, k, n, a.data().data(), b.data().data(), out.data());
  if (alpha != 1.0) {
    for (double& v : out) v *= alpha;
  }
  return detail::make_result(
      "matmul_nt", {m, n}, std::move(out), {&a, &b}, [a, b, m, k, n, alpha](std::span<const double> g) {
        std::vector<double> gs(g.begin(), g.end());
        if (alpha != 1.0) {
          for (double& v : gs) v *= alpha;
        }
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
          kernels::gemm_acc(m, n, k, gs.data(), b.data().data(), ga.data());
        }
        if (auto gb = detail::grad_sink(b); !gb.empty()) {
          kernels::gemm_tn_acc(n, m, k, gs.data(), a.data().data(), gb.data());
        }
      });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  auto out = kernels::transposed(r, c, x.data().data());
  return detail::make_result("transpose", {c, r}, std::move(out), {&x},
                             [x, r, c](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               const auto back = kernels::transposed(c, r, g.data());
                               detail::axpy(gx, back);
                             });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {&a, &b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = detail::grad_sink(a); !ga.empty()) detail::axpy(ga, g);
                               if (auto gb = detail::grad_sink(b); !gb.empty()) detail::axpy(gb, g);
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {&a, &b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = detail::grad_sink(a); !ga.empty()) detail::axpy(ga, g);
                               if (auto gb = detail::grad_sink(b); !gb.empty()) detail::axpy(gb, g, -1.0);
                             });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {&a, &b},
                             [a, b](std::span<const double> g) {
                               if (auto ga = detail::grad_sink(a); !ga.empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                               }
                               if (auto gb = detail::grad_sink(b); !gb.empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                               }
                             });
}

inline Tensor scale(const Tensor& x, double alpha) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= alpha;
  return detail::make_result("scale", x.shape(), std::move(out), {&x},
                             [x, alpha](std::span<const double> g) {
                               detail::axpy(detail::grad_sink(x), g, alpha);
                             });
}

/// X[n x m] + b[m], bias repeated over rows. The only broadcasting op.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  detail::require_matrix(x, "add_row_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias[j];
  }
  return detail::make_result("add_row_bias", x.shape(), std::move(out), {&x, &bias},
                             [x, bias, n, m](std::span<const double> g) {
                               if (auto gx = detail::grad_sink(x); !gx.empty()) detail::axpy(gx, g);
                               if (auto gb = detail::grad_sink(bias); !gb.empty()) {
                                 for (std::size_t i = 0; i < n; ++i) {
                                   for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                                 }
                               }
                             });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make_result("relu", x.shape(), std::move(out), {&x},
                             [x](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 if (x[i] > 0.0) gx[i] += g[i];
                               }
                             });
}

inline Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  auto values = out;
  return detail::make_result("exp", x.shape(), std::move(out), {&x},
                             [x, values = std::move(values)](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * values[i];
                             });
}

inline Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return detail::make_result("log", x.shape(), std::move(out), {&x},
                             [x](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
                             });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result("sum", {}, {s}, {&x}, [x](std::span<const double> g) {
    auto gx = detail::grad_sink(x);
    for (double& v : gx) v += g[0];
  });
}

/// Columnwise mean of X[T x d] -> [d].
inline Tensor mean_rows(const Tensor& x) {
  detail::require_matrix(x, "mean_rows");
  const std::size_t t = x.rows(), d = x.cols();
  if (t == 0) throw DimensionError("mean_rows over an empty sequence");
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  const double inv = 1.0 / static_cast<double>(t);
  for (double& v : out) v *= inv;
  return detail::make_result("mean_rows", {d}, std::move(out), {&x},
                             [x, t, d, inv](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < t; ++i) {
                                 for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
                               }
                             });
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i) kernels::softmax_row({out.data() + i * n, n});
  auto probs = out;
  return detail::make_result("softmax_rows", x.shape(), std::move(out), {&x},
                             [x, m, n, probs = std::move(probs)](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double* p = probs.data() + i * n;
                                 const double* gi = g.data() + i * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += gi[j] * p[j];
                                 for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += p[j] * (gi[j] - dot);
                               }
                             });
}

inline constexpr double kMinNormalizableNorm = 1e-12;

/// Scales every row to unit Euclidean norm.
inline Tensor l2_normalize_rows(const Tensor& x) {
  detail::require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), d = x.cols();
  std::vector<double> out(x.numel());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
    const double norm = std::sqrt(ss);
    if (!(norm > kMinNormalizableNorm)) {
      throw DegenerateVectorError("l2_normalize_rows: row " + std::to_string(i) +
                                  " has norm " + std::to_string(norm));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / norm;
  }
  auto unit = out;
  return detail::make_result(
      "l2_normalize_rows", x.shape(), std::move(out), {&x},
      [x, m, d, unit = std::move(unit), norms = std::move(norms)](std::span<const double> g) {
        auto gx = detail::grad_sink(x);
        for (std::size_t i = 0; i < m; ++i) {
          const double* y = unit.data() + i * d;
          const double* gi = g.data() + i * d;
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += y[j] * gi[j];
          for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (gi[j] - y[j] * dot) / norms[i];
        }
      });
}

/// Per-row layer normalization with learned gain and shift.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
  detail::require_matrix(x, "layer_norm_rows");
  const std::size_t m = x.rows(), d = x.cols();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm_rows: gain/shift must be [" + std::to_string(d) + "]");
  }
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(m);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gamma[j] + beta[j];
    }
  }
  return detail::make_result(
      "layer_norm_rows", x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g) {
        auto gx = detail::grad_sink(x);
        auto gg = detail::grad_sink(gamma);
        auto gb = detail::grad_sink(beta);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data() + i * d;
          const double* xh = xhat.data() + i * d;
          if (!gg.empty()) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += gi[j] * xh[j];
          }
          if (!gb.empty()) {
            for (std::size_t j = 0; j < d; ++j) gb[j] += gi[j];
          }
          if (gx.empty()) continue;
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gi[j] * gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[i * d + j] += inv_std[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      });
}

namespace detail {

inline void check_attention_shapes(const Tensor& q, const Tensor& k, std::size_t n_heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  if (n_heads == 0 || q.cols() % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(q.cols()) +
                         " not divisible by head count " + std::to_string(n_heads));
  }
  if (k.cols() != q.cols()) throw DimensionError("attention: query/key widths differ");
}

/// Copies columns [h*dh, (h+1)*dh) of X[T x width] into a contiguous T x dh block.
inline std::vector<double> head_slice(const Tensor& x, std::size_t h, std::size_t dh) {
  const std::size_t t = x.rows(), width = x.cols();
  std::vector<double> out(t * dh);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < dh; ++j) out[i * dh + j] = x[i * width + h * dh + j];
  }
  return out;
}

inline std::vector<double> attention_probs(const Tensor& q, const Tensor& k, std::size_t n_heads) {
  const std::size_t tq = q.rows(), tk = k.rows(), dh = q.cols() / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(n_heads * tq * tk, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto qh = head_slice(q, h, dh);
    const auto kh = head_slice(k, h, dh);
    double* p = probs.data() + h * tq * tk;
    kernels::gemm_nt_acc(tq, dh, tk, qh.data(), kh.data(), p);
    for (std::size_t i = 0; i < tq * tk; ++i) p[i] *= scale;
    for (std::size_t i = 0; i < tq; ++i) kernels::softmax_row({p + i * tk, tk});
  }
  return probs;
}

}  // namespace detail

/// Attention probabilities [n_heads][T_q x T_k], returned flat. Not recorded.
inline std::vector<double> attention_weights(const Tensor& q, const Tensor& k, std::size_t n_heads) {
  detail::check_attention_shapes(q, k, n_heads);
  return detail::attention_probs(q, k, n_heads);
}

/// Multi-head scaled dot-product attention. Per head h with width dh:
/// softmax(Q_h K_h^T / sqrt(dh)) V_h, heads concatenated along columns.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  detail::check_attention_shapes(q, k, n_heads);
  detail::require_same_shape(k, v, "attention");
  const std::size_t tq = q.rows(), tk = k.rows(), width = q.cols(), dh = width / n_heads;
  auto probs = detail::attention_probs(q, k, n_heads);
  std::vector<double> out(tq * width, 0.0);
  std::vector<double> oh(tq * dh);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto vh = detail::head_slice(v, h, dh);
    std::fill(oh.begin(), oh.end(), 0.0);
    kernels::gemm_acc(tq, tk, dh, probs.data() + h * tq * tk, vh.data(), oh.data());
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < dh; ++j) out[i * width + h * dh + j] = oh[i * dh + j];
    }
  }
  return detail::make_result(
      "attention", {tq, width}, std::move(out), {&q, &k, &v},
      [q, k, v, n_heads, tq, tk, width, dh, probs = std::move(probs)](std::span<const double> g) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        auto gq = detail::grad_sink(q);
        auto gk = detail::grad_sink(k);
        auto gv = detail::grad_sink(v);
        std::vector<double> goh(tq * dh), dp(tq * tk), ds(tq * tk), tmp;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const double* p = probs.data() + h * tq * tk;
          for (std::size_t i = 0; i < tq; ++i) {
            for (std::size_t j = 0; j < dh; ++j) goh[i * dh + j] = g[i * width + h * dh + j];
          }
          const auto qh = detail::head_slice(q, h, dh);
          const auto kh = detail::head_slice(k, h, dh);
          const auto vh = detail::head_slice(v, h, dh);
          if (!gv.empty()) {
            tmp.assign(tk * dh, 0.0);
            kernels::gemm_tn_acc(tk, tq, dh, p, goh.data(), tmp.data());
            for (std::size_t i = 0; i < tk; ++i) {
              for (std::size_t j = 0; j < dh; ++j) gv[i * width + h * dh + j] += tmp[i * dh + j];
            }
          }
          if (gq.empty() && gk.empty()) continue;
          std::fill(dp.begin(), dp.end(), 0.0);
          kernels::gemm_nt_acc(tq, dh, tk, goh.data(), vh.data(), dp.data());
          for (std::size_t i = 0; i < tq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < tk; ++j) dot += dp[i * tk + j] * p[i * tk + j];
            for (std::size_t j = 0; j < tk; ++j) {
              ds[i * tk + j] = p[i * tk + j] * (dp[i * tk + j] - dot) * scale;
            }
          }
          if (!gq.empty()) {
            tmp.assign(tq * dh, 0.0);
            kernels::gemm_acc(tq, tk, dh, ds.data(), kh.data(), tmp.data());
            for (std::size_t i = 0; i < tq; ++i) {
              for (std::size_t j = 0; j < dh; ++j) gq[i * width + h * dh + j] += tmp[i * dh + j];
            }
          }
          if (!gk.empty()) {
            tmp.assign(tk * dh, 0.0);
            kernels::gemm_tn_acc(tk, tq, dh, ds.data(), qh.data(), tmp.data());
            for (std::size_t i = 0; i < tk; ++i) {
              for (std::size_t j = 0; j < dh; ++j) gk[i * width + h * dh + j] += tmp[i * dh + j];
            }
          }
        }
      });
}

/// Rows of X selected by index, in the given order.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(index.size() * d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range " +
                           std::to_string(n));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(index[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return detail::make_result("gather_rows", {index.size(), d}, std::move(out), {&x},
                             [x, index, d](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t r = 0; r < index.size(); ++r) {
                                 for (std::size_t j = 0; j < d; ++j) gx[index[r] * d + j] += g[r * d + j];
                               }
                             });
}

/// Places row r of X at row index[r] of an n-row zero matrix.
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& index, std::size_t n) {
  detail::require_matrix(x, "scatter_rows");
  if (index.size() != x.rows()) throw DimensionError("scatter_rows: index length != row count");
  const std::size_t d = x.cols();
  std::vector<double> out(n * d, 0.0);
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n || seen[index[r]]) throw DimensionError("scatter_rows: bad or repeated index");
    seen[index[r]] = true;
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * d), d, out.begin() + static_cast<std::ptrdiff_t>(index[r] * d));
  }
  return detail::make_result("scatter_rows", {n, d}, std::move(out), {&x},
                             [x, index, d](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t r = 0; r < index.size(); ++r) {
                                 for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[index[r] * d + j];
                               }
                             });
}

/// Stacks equal-length vectors ([d] or [1 x d]) into an [n x d] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of zero rows");
  const std::size_t d = rows[0].numel();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    const bool vector_like = r.rank() == 1 || (r.rank() == 2 && r.rows() == 1);
    if (!vector_like || r.numel() != d) {
      throw DimensionError("stack_rows: incompatible row " + shape_str(r.shape()));
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return detail::make_result_n("stack_rows", {rows.size(), d}, std::move(out), rows,
                               [rows, d](std::span<const double> g) {
                                 for (std::size_t r = 0; r < rows.size(); ++r) {
                                   if (auto gr = detail::grad_sink(rows[r]); !gr.empty()) {
                                     detail::axpy(gr, g.subspan(r * d, d));
                                   }
                                 }
                               });
}

/// [a ; b] for vectors, or column-wise [A | B] for matrices with equal rows.
inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() == 1 && b.rank() == 1) {
    std::vector<double> out(a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    const std::size_t na = a.numel(), n = out.size();
    return detail::make_result("concat", {n}, std::move(out), {&a, &b},
                               [a, b, na](std::span<const double> g) {
                                 if (auto ga = detail::grad_sink(a); !ga.empty()) detail::axpy(ga, g.first(na));
                                 if (auto gb = detail::grad_sink(b); !gb.empty()) detail::axpy(gb, g.subspan(na));
                               });
  }
  detail::require_matrix(a, "concat");
  detail::require_matrix(b, "concat");
  if (a.rows() != b.rows()) throw DimensionError("concat: row counts differ");
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * c + j] = a[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[i * c + ca + j] = b[i * cb + j];
  }
  return detail::make_result("concat", {n, c}, std::move(out), {&a, &b},
                             [a, b, n, ca, cb, c](std::span<const double> g) {
                               auto ga = detail::grad_sink(a);
                               auto gb = detail::grad_sink(b);
                               for (std::size_t i = 0; i < n; ++i) {
                                 if (!ga.empty()) {
                                   for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
                                 }
                                 if (!gb.empty()) {
                                   for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
                                 }
                               }
                             });
}

/// Multiplies row i of X by the constant coeff[i].
inline Tensor row_scale(const Tensor& x, const std::vector<double>& coeff) {
  detail::require_matrix(x, "row_scale");
  if (coeff.size() != x.rows()) throw DimensionError("row_scale: coefficient count != rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * coeff[i];
  }
  return detail::make_result("row_scale", x.shape(), std::move(out), {&x},
                             [x, coeff, n, d](std::span<const double> g) {
                               auto gx = detail::grad_sink(x);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * coeff[i];
                               }
                             });
}

/// Diagonal of a square matrix.
inline Tensor diag(const Tensor& x) {
  detail::require_matrix(x, "diag");
  if (x.rows() != x.cols()) throw DimensionError("diag of non-square " + shape_str(x.shape()));
  const std::size_t n = x.rows();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i * n + i];
  return detail::make_result("diag", {n}, std::move(out), {&x}, [x, n](std::span<const double> g) {
    auto gx = detail::grad_sink(x);
    for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += g[i];
  });
}

/// log(sum(exp(x))) over every element, evaluated with max subtraction.
inline Tensor logsumexp(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("logsumexp of empty tensor");
  double mx = x[0];
  for (double v : x.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x.data()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  return detail::make_result("logsumexp", {}, {lse}, {&x}, [x, lse](std::span<const double> g) {
    auto gx = detail::grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp(x[i] - lse);
  });
}

/// Mean softmax cross-entropy of logits[N x C] against integer labels.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw DimensionError("cross_entropy: label count != rows");
  if (n == 0) throw DimensionError("cross_entropy of empty batch");
  std::vector<double> probs(logits.data().begin(), logits.data().end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw DimensionError("cross_entropy: label out of range");
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    loss += mx + std::log(s) - row[labels[i]];
    kernels::softmax_row({probs.data() + i * c, c});
  }
  loss /= static_cast<double>(n);
  return detail::make_result("cross_entropy", {}, {loss}, {&logits},
                             [logits, labels, n, c, probs = std::move(probs)](std::span<const double> g) {
                               auto gl = detail::grad_sink(logits);
                               const double w = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double target = j == labels[i] ? 1.0 : 0.0;
                                   gl[i * c + j] += w * (probs[i * c + j] - target);
                                 }
                               }
                             });
}

}  // namespace lava
