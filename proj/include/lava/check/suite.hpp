// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gradient-check sweep over every differentiable op, layer, encoder,
// projection head and loss at tiny dimensions. Each case is checked on a
// number of random instances; the report keeps the worst relative error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/check/gradcheck.hpp"
#include "lava/loss/losses.hpp"
#include "lava/model/encoders.hpp"

namespace lava::check {

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t kink_rechecks = 1;
  std::string inject_fault;  // op whose backward rule is corrupted; empty for none
  std::vector<std::string> only;  // restrict to these case names; empty runs all
};

struct CaseReport {
  std::string name;
  std::string group;
  std::size_t instances = 0;
  std::size_t probes = 0;
  std::size_t rechecked = 0;
  double worst_error = 0.0;
  std::string worst_at;
  bool passed = true;
};

struct SuiteReport {
  std::vector<CaseReport> cases;
  double tolerance = 0.0;
  std::string inject_fault;
  double seconds = 0.0;
  bool passed = true;

  const CaseReport* find(const std::string& name) const {
    for (const auto& c : cases) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

namespace detail {

// A case draws one instance from the rng: the tensors to perturb and a
// closure rebuilding the scalar from their current values.
struct Instance {
  std::vector<Tensor> inputs;
  std::function<Tensor()> f;
  std::size_t max_coords = 0;
};

struct Case {
  std::string name;
  std::string group;
  std::function<Instance(Rng&)> draw;
};

inline Tensor uniform(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Random fixed weighting, so every output coordinate carries gradient.
inline Tensor weighted(const Tensor& y, Rng& rng) { return sum(mul(y, uniform(y.shape(), rng, false))); }

inline std::vector<Tensor> parameters_of(const nn::ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params) out.push_back(p);
  return out;
}

inline Instance unary(Tensor x, std::function<Tensor(const Tensor&)> op, Rng& rng) {
  Tensor w = uniform(op(x).shape(), rng, false);
  return {{x}, [x, op, w] { return sum(mul(op(x), w)); }};
}

inline Instance binary(Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> op, Rng& rng) {
  Tensor w = uniform(op(a, b).shape(), rng, false);
  return {{a, b}, [a, b, op, w] { return sum(mul(op(a, b), w)); }};
}

inline std::vector<Case> op_cases() {
  using T = const Tensor&;
  std::vector<Case> c;
  auto add_case = [&](std::string name, std::function<Instance(Rng&)> draw) {
    c.push_back({std::move(name), "op", std::move(draw)});
  };
  add_case("matmul", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({4, 2}, r);
    return binary(a, b, [](T x, T y) { return matmul(x, y); }, r);
  });
  add_case("matmul_nt", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({3, 4}, r);
    return binary(a, b, [](T x, T y) { return matmul_nt(x, y, 0.7); }, r);
  });
  add_case("transpose", [](Rng& r) { return unary(uniform({4, 3}, r), [](T x) { return transpose(x); }, r); });
  add_case("add", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({3, 4}, r);
    return binary(a, b, [](T x, T y) { return add(x, y); }, r);
  });
  add_case("sub", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({3, 4}, r);
    return binary(a, b, [](T x, T y) { return sub(x, y); }, r);
  });
  add_case("mul", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({3, 4}, r);
    return binary(a, b, [](T x, T y) { return mul(x, y); }, r);
  });
  add_case("scale", [](Rng& r) { return unary(uniform({3, 4}, r), [](T x) { return scale(x, -1.3); }, r); });
  add_case("sum", [](Rng& r) {
    Tensor x = uniform({3, 4}, r);
    return Instance{{x}, [x] { return scale(sum(x), 0.9); }};
  });
  add_case("add_row_bias", [](Rng& r) {
    auto a = uniform({3, 4}, r), b = uniform({4}, r);
    return binary(a, b, [](T x, T y) { return add_row_bias(x, y); }, r);
  });
  add_case("relu", [](Rng& r) {
    Tensor x = uniform({3, 4}, r);
    for (double& v : x.mutable_data()) v += v > 0 ? 0.05 : -0.05;  // away from the kink
    return unary(x, [](T y) { return relu(y); }, r);
  });
  add_case("exp", [](Rng& r) { return unary(uniform({3, 4}, r), [](T x) { return exp(x); }, r); });
  add_case("log", [](Rng& r) { return unary(uniform({3, 4}, r, true, 0.5, 2.0), [](T x) { return log(x); }, r); });
  add_case("mean_rows", [](Rng& r) { return unary(uniform({3, 4}, r), [](T x) { return mean_rows(x); }, r); });
  add_case("softmax_rows",
           [](Rng& r) { return unary(uniform({3, 6}, r, true, -3, 3), [](T x) { return softmax_rows(x); }, r); });
  add_case("l2_normalize_rows",
           [](Rng& r) { return unary(uniform({3, 4}, r), [](T x) { return l2_normalize_rows(x); }, r); });
  add_case("layer_norm_rows", [](Rng& r) {
    Tensor x = uniform({3, 4}, r), g = uniform({4}, r), b = uniform({4}, r);
    Tensor w = uniform({3, 4}, r, false);
    return Instance{{x, g, b}, [=] { return sum(mul(layer_norm_rows(x, g, b), w)); }};
  });
  add_case("attention", [](Rng& r) {
    Tensor q = uniform({5, 6}, r), k = uniform({4, 6}, r), v = uniform({4, 6}, r);
    Tensor w = uniform({5, 6}, r, false);
    return Instance{{q, k, v}, [=] { return sum(mul(attention(q, k, v, 2), w)); }};
  });
  add_case("gather_rows", [](Rng& r) {
    return unary(uniform({3, 3}, r), [](T x) { return gather_rows(x, {2, 0, 2, 1}); }, r);
  });
  add_case("scatter_rows", [](Rng& r) {
    return unary(uniform({3, 3}, r), [](T x) { return scatter_rows(x, {4, 0, 2}, 5); }, r);
  });
  add_case("stack_rows", [](Rng& r) {
    auto a = uniform({3}, r), b = uniform({3}, r);
    return binary(a, b, [](T x, T y) { return stack_rows({x, y, x}); }, r);
  });
  add_case("concat", [](Rng& r) {
    auto a = uniform({2, 2}, r), b = uniform({2, 4}, r);
    return binary(a, b, [](T x, T y) { return concat(x, y); }, r);
  });
  add_case("row_scale", [](Rng& r) {
    return unary(uniform({3, 4}, r), [](T x) { return row_scale(x, {0.5, -2.0, 1.5}); }, r);
  });
  add_case("diag", [](Rng& r) { return unary(uniform({3, 3}, r), [](T x) { return diag(x); }, r); });
  add_case("logsumexp", [](Rng& r) {
    Tensor x = uniform({3, 3}, r, true, -4, 4);
    return Instance{{x}, [x] { return logsumexp(x); }};
  });
  add_case("cross_entropy", [](Rng& r) {
    Tensor x = uniform({3, 4}, r, true, -3, 3);
    return Instance{{x}, [x] { return cross_entropy(x, {1, 3, 0}); }};
  });
  return c;
}

// Layer parameters plus the input are all perturbed.
template <class Layer>
Instance layer_instance(Layer layer, const std::string& prefix, Tensor x, Rng& r) {
  nn::ParameterList params;
  layer.collect(prefix, params);
  auto inputs = parameters_of(params);
  inputs.push_back(x);
  Tensor w = uniform(layer(x).shape(), r, false);
  return {inputs, [layer, x, w] { return sum(mul(layer(x), w)); }};
}

inline std::vector<Case> layer_cases() {
  std::vector<Case> c;
  auto add_case = [&](std::string name, std::function<Instance(Rng&)> draw) {
    c.push_back({std::move(name), "layer", std::move(draw)});
  };
  add_case("linear", [](Rng& r) {
    nn::Linear base(4, 3, r);
    nn::Linear layer(base.weight(), uniform({3}, r));
    return layer_instance(layer, "linear", uniform({5, 4}, r), r);
  });
  add_case("mlp", [](Rng& r) { return layer_instance(nn::Mlp(3, 5, 4, r), "mlp", uniform({4, 3}, r), r); });
  add_case("layer_norm", [](Rng& r) {
    nn::LayerNorm ln(4);
    nn::ParameterList params;
    ln.collect("ln", params);
    for (auto& p : parameters_of(params)) {
      for (double& v : p.mutable_data()) v += r.uniform(-0.5, 0.5);
    }
    return layer_instance(ln, "ln", uniform({3, 4}, r), r);
  });
  add_case("multi_head_attention", [](Rng& r) {
    return layer_instance(nn::MultiHeadAttention(6, 2, r), "attn", uniform({4, 6}, r), r);
  });
  add_case("encoder_block", [](Rng& r) {
    return layer_instance(nn::EncoderBlock(4, 2, 8, r), "block", uniform({3, 4}, r), r);
  });
  add_case("transformer_encoder", [](Rng& r) {
    return layer_instance(nn::TransformerEncoder(nn::EncoderConfig{2, 4, 2, 2, true}, r), "f", uniform({3, 4}, r),
                          r);
  });
  add_case("embedding_table", [](Rng& r) {
    nn::EmbeddingTable table(6, 4, r);
    nn::ParameterList params;
    table.collect("embed", params);
    const std::vector<std::size_t> ids = {1, 4, 1, 5};
    Tensor w = uniform({4, 4}, r, false);
    return Instance{parameters_of(params), [table, ids, w] { return sum(mul(table(ids), w)); }};
  });
  add_case("mean_pool", [](Rng& r) { return unary(uniform({5, 3}, r), [](const Tensor& x) { return nn::mean_pool(x); }, r); });
  return c;
}

inline ModelConfig tiny_model() {
  ModelConfig c;
  c.encoder = nn::EncoderConfig{1, 4, 2, 2, true};
  c.video_feature_dim = 3;
  c.audio_feature_dim = 2;
  c.vocab = 7;
  c.max_text_len = 6;
  c.proj_dim = 3;
  return c;
}

// Model-level cases sample a few coordinates per parameter tensor.
inline constexpr std::size_t kModelCoords = 6;

inline Instance stack_instance(const std::function<Tensor(const EncoderStack&, const Tensor&)>& f, Tensor x,
                               Rng& r) {
  EncoderStack stack(tiny_model(), r.next());
  auto inputs = parameters_of(stack.parameters());
  if (x.numel() != 0) inputs.push_back(x);
  Tensor probe = f(stack, x);
  Tensor w = uniform(probe.shape(), r, false);
  return {inputs, [stack, f, x, w] { return sum(mul(f(stack, x), w)); }, kModelCoords};
}

inline std::vector<Case> encoder_cases() {
  std::vector<Case> c;
  c.push_back({"f_v", "encoder", [](Rng& r) {
                 return stack_instance([](const EncoderStack& s, const Tensor& x) { return s.encode_video(x); },
                                       uniform({3, 3}, r), r);
               }});
  c.push_back({"f_a", "encoder", [](Rng& r) {
                 return stack_instance([](const EncoderStack& s, const Tensor& x) { return s.encode_audio(x); },
                                       uniform({4, 2}, r), r);
               }});
  c.push_back({"f_t", "encoder", [](Rng& r) {
                 std::vector<std::size_t> ids(1 + r.next() % 5);
                 for (auto& id : ids) id = r.next() % 7;
                 return stack_instance(
                     [ids](const EncoderStack& s, const Tensor&) { return s.encode_text(ids); }, Tensor(), r);
               }});
  const std::pair<const char*, std::pair<Space, Modality>> heads[] = {
      {"g_av", {Space::kAV, Modality::kAudio}},
      {"g_vt", {Space::kVT, Modality::kText}},
      {"g_avt", {Space::kAVT, Modality::kVideo}},
  };
  for (const auto& [name, sm] : heads) {
    const auto [space, modality] = sm;
    c.push_back({name, "projection", [space, modality](Rng& r) {
                   return stack_instance(
                       [space, modality](const EncoderStack& s, const Tensor& z) { return s.project(z, space, modality); },
                       uniform({3, 4}, r), r);
                 }});
  }
  return c;
}

inline std::vector<bool> coin_flips(std::size_t n, Rng& r) {
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = r.uniform(0.0, 1.0) < 0.7;
  return out;
}

inline EmbeddingSet normalized_set(const std::vector<Tensor>& raw, const std::vector<bool>& avail_a,
                                   const std::vector<bool>& avail_t) {
  EmbeddingSet e;
  e.proj_av_a = l2_normalize_rows(raw[0]);
  e.proj_av_v = l2_normalize_rows(raw[1]);
  e.proj_vt_v = l2_normalize_rows(raw[2]);
  e.proj_vt_t = l2_normalize_rows(raw[3]);
  e.proj_avt_a = l2_normalize_rows(raw[4]);
  e.proj_avt_v = l2_normalize_rows(raw[5]);
  e.proj_avt_t = l2_normalize_rows(raw[6]);
  e.avail_a = avail_a;
  e.avail_t = avail_t;
  return e;
}

inline std::vector<Case> loss_cases() {
  std::vector<Case> c;
  c.push_back({"nce", "loss", [](Rng& r) {
                 Tensor a = uniform({4, 3}, r), b = uniform({4, 3}, r);
                 std::vector<bool> mask = coin_flips(4, r);
                 mask[r.next() % 4] = true;
                 const double tau = r.uniform(0.1, 1.0);
                 return Instance{{a, b}, [=] { return nce(l2_normalize_rows(a), l2_normalize_rows(b), tau, mask); }};
               }});
  c.push_back({"centroid", "loss", [](Rng& r) {
                 std::vector<Tensor> raw;
                 for (int k = 0; k < 7; ++k) raw.push_back(uniform({4, 3}, r));
                 auto avail_a = coin_flips(4, r), avail_t = coin_flips(4, r);
                 avail_a[0] = true;
                 LossConfig cfg;
                 cfg.tau = r.uniform(0.1, 1.0);
                 return Instance{raw, [=] {
                                   EmbeddingSet e = normalized_set(raw, avail_a, avail_t);
                                   return loss_avt(e, compute_centroids(e), cfg).value;
                                 }};
               }});
  // Whole objective from raw features through every encoder and head.
  c.push_back({"total", "end_to_end", [](Rng& r) {
                 EncoderStack stack(tiny_model(), r.next());
                 std::vector<ModalityFeatures> batch(3);
                 std::vector<Tensor> inputs = parameters_of(stack.parameters());
                 for (std::size_t i = 0; i < batch.size(); ++i) {
                   batch[i].video = uniform({2 + i, 3}, r);
                   inputs.push_back(batch[i].video);
                   if (i != 1) {
                     batch[i].audio = uniform({3, 2}, r);
                     inputs.push_back(*batch[i].audio);
                   }
                   if (i != 2) batch[i].text = std::vector<std::size_t>{i, 3, 6 - i};
                 }
                 LossConfig cfg;
                 cfg.tau = 0.5;
                 return Instance{inputs, [stack, batch, cfg] { return loss_total(stack.embed_batch(batch), cfg).total; },
                                 kModelCoords};
               }});
  return c;
}

}  // namespace detail

/// Names of every case in the sweep, in run order.
inline std::vector<std::string> suite_case_names() {
  std::vector<std::string> out;
  for (auto group : {detail::op_cases(), detail::layer_cases(), detail::encoder_cases(), detail::loss_cases()}) {
    for (const auto& c : group) out.push_back(c.name);
  }
  return out;
}

/// Op names accepted by FaultInjection (the primitive op cases).
inline std::vector<std::string> faultable_ops() {
  std::vector<std::string> out;
  for (const auto& c : detail::op_cases()) out.push_back(c.name);
  return out;
}

inline SuiteReport run_suite(const SuiteOptions& opts = {}) {
  if (opts.instances == 0) throw ConfigError("gradcheck suite needs at least one instance per case");
  if (!opts.inject_fault.empty()) {
    const auto ops = faultable_ops();
    if (std::find(ops.begin(), ops.end(), opts.inject_fault) == ops.end()) {
      throw ConfigError("unknown op for fault injection: " + opts.inject_fault);
    }
  }
  const auto names = suite_case_names();
  for (const auto& n : opts.only) {
    if (std::find(names.begin(), names.end(), n) == names.end()) throw ConfigError("unknown gradcheck case: " + n);
  }

  const auto start = std::chrono::steady_clock::now();
  std::optional<FaultInjection> fault;
  if (!opts.inject_fault.empty()) fault.emplace(opts.inject_fault);

  SuiteReport report;
  report.tolerance = opts.tolerance;
  report.inject_fault = opts.inject_fault;
  std::uint64_t case_index = 0;
  for (auto group : {detail::op_cases(), detail::layer_cases(), detail::encoder_cases(), detail::loss_cases()}) {
    for (const auto& c : group) {
      ++case_index;
      if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), c.name) == opts.only.end()) continue;
      CaseReport cr;
      cr.name = c.name;
      cr.group = c.group;
      Rng rng(derive_seed(opts.seed, {0x67c4, case_index}));
      for (std::size_t k = 0; k < opts.instances; ++k) {
        detail::Instance inst = c.draw(rng);
        GradcheckOptions go;
        go.step = opts.step;
        go.tolerance = opts.tolerance;
        go.max_coords_per_input = inst.max_coords;
        go.kink_rechecks = opts.kink_rechecks;
        go.seed = derive_seed(opts.seed, {0x67c5, case_index, k});
        GradcheckResult r = gradcheck(inst.f, inst.inputs, go);
        cr.probes += r.probes;
        cr.rechecked += r.rechecked;
        if (cr.worst_at.empty() || r.max_error > cr.worst_error) {
          cr.worst_error = r.max_error;
          cr.worst_at = "instance " + std::to_string(k) + " " + r.worst;
        }
        ++cr.instances;
      }
      cr.passed = cr.worst_error < opts.tolerance;
      report.passed = report.passed && cr.passed;
      report.cases.push_back(std::move(cr));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline nlohmann::ordered_json to_json(const SuiteReport& r) {
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const auto& c : r.cases) {
    cases.push_back({{"name", c.name},
                     {"group", c.group},
                     {"instances", c.instances},
                     {"probes", c.probes},
                     {"rechecked", c.rechecked},
                     {"worst_rel_error", c.worst_error},
                     {"worst_at", c.worst_at},
                     {"passed", c.passed}});
  }
  nlohmann::ordered_json out = {{"tolerance", r.tolerance}, {"cases", cases}};
  if (!r.inject_fault.empty()) out["inject_fault"] = r.inject_fault;
  out["seconds"] = r.seconds;
  out["passed"] = r.passed;
  return out;
}

}  // namespace lava::check
