// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lava/core/random.hpp"
#include "lava/core/tensor.hpp"

namespace lava::check {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates probed per input; 0 probes all of them. When sampling, the
  // chosen coordinates are drawn from `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // A failing probe is re-measured with step / 10 up to this many times. A
  // difference straddling a ReLU kink shrinks with the step; a wrong backward
  // rule does not.
  std::size_t kink_rechecks = 0;
};

struct GradcheckResult {
  double max_error = 0.0;  // max over probes of |analytic - fd| / max(1, |fd|)
  std::string worst;       // "input k[i]" of the worst probe
  std::size_t probes = 0;
  std::size_t rechecked = 0;  // probes that needed a smaller step
  bool passed = true;
};

/// Compares d f / d inputs from backward() with central differences. `f` must
/// rebuild its graph from the current values of `inputs` on every call.
inline GradcheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                 const GradcheckOptions& opts = {}) {
  for (auto& in : inputs) in.zero_grad();
  Tensor loss = f();
  if (loss.numel() != 1) throw GraphError("gradcheck: function must return a scalar");
  std::vector<std::vector<double>> analytic;
  if (loss.requires_grad()) {
    loss.backward();
    for (const auto& in : inputs) analytic.push_back(in.grad());
  } else {
    for (const auto& in : inputs) analytic.emplace_back(in.numel(), 0.0);
  }

  GradcheckResult result;
  Rng rng(opts.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_input != 0 && coords.size() > opts.max_coords_per_input) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(opts.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      auto probe = [&](double h) {
        values[i] = saved + h;
        const double up = f().item();
        values[i] = saved - h;
        const double down = f().item();
        values[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        return std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd));
      };
      double err = probe(opts.step);
      double h = opts.step;
      for (std::size_t t = 0; t < opts.kink_rechecks && err >= opts.tolerance; ++t) {
        h /= 10.0;
        if (t == 0) ++result.rechecked;
        err = probe(h);
      }
      ++result.probes;
      if (result.worst.empty() || err > result.max_error) {
        result.max_error = err;
        result.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  result.passed = result.max_error < opts.tolerance;
  for (auto& in : inputs) in.zero_grad();
  return result;
}

}  // namespace lava::check
