// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "lava/model/encoders.hpp"
#include "support/test_util.hpp"

namespace lava::testing {

// Independent projections per space, rows zeroed where unavailable.
inline EmbeddingSet random_set(std::size_t n, std::size_t d, Rng& rng, const std::vector<bool>& avail_a,
                               const std::vector<bool>& avail_t, bool requires_grad = false) {
  auto masked = [&](const std::vector<bool>* mask) {
    Tensor x = random_unit_rows(n, d, rng);
    std::vector<double> v(x.data().begin(), x.data().end());
    if (mask) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!(*mask)[i]) std::fill(v.begin() + i * d, v.begin() + (i + 1) * d, 0.0);
      }
    }
    return Tensor(Shape{n, d}, std::move(v), requires_grad);
  };
  EmbeddingSet e;
  e.proj_av_a = masked(&avail_a);
  e.proj_av_v = masked(nullptr);
  e.proj_vt_v = masked(nullptr);
  e.proj_vt_t = masked(&avail_t);
  e.proj_avt_a = masked(&avail_a);
  e.proj_avt_v = masked(nullptr);
  e.proj_avt_t = masked(&avail_t);
  e.avail_a = avail_a;
  e.avail_t = avail_t;
  return e;
}

inline EmbeddingSet subset(const EmbeddingSet& e, const std::vector<std::size_t>& idx) {
  EmbeddingSet s;
  s.proj_av_a = gather_rows(e.proj_av_a, idx);
  s.proj_av_v = gather_rows(e.proj_av_v, idx);
  s.proj_vt_v = gather_rows(e.proj_vt_v, idx);
  s.proj_vt_t = gather_rows(e.proj_vt_t, idx);
  s.proj_avt_a = gather_rows(e.proj_avt_a, idx);
  s.proj_avt_v = gather_rows(e.proj_avt_v, idx);
  s.proj_avt_t = gather_rows(e.proj_avt_t, idx);
  for (std::size_t i : idx) {
    s.avail_a.push_back(e.avail_a[i]);
    s.avail_t.push_back(e.avail_t[i]);
  }
  return s;
}

inline std::vector<bool> coin_flips(std::size_t n, double p, Rng& rng) {
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rng.bernoulli(p);
  return out;
}

}  // namespace lava::testing
