// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bokeh/loss_metrics.hpp"
#include "bokeh/model.hpp"

namespace bokeh {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckFloor = 1e-5;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[index]: analytic vs numeric"

  bool passed(double tol = kGradCheckTolerance) const { return checked > 0 && max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

/// Compares backward() of the scalar `loss` against central differences for
/// every entry of `inputs` (or `samples` random entries per input when
/// samples > 0).
inline GradCheckResult check_gradients(const std::string& name, std::vector<Var<double>> inputs,
                                       const std::function<Var<double>()>& loss, std::uint64_t seed = 1,
                                       std::size_t samples = 0, double h = kGradCheckStep) {
  GradCheckResult res;
  res.name = name;
  for (auto& in : inputs)
    if (in.has_grad()) in.zero_grad();
  backward(loss());
  std::vector<Tensor<double>> analytic;
  for (auto& in : inputs)
    analytic.push_back(in.has_grad() ? in.grad() : Tensor<double>::zeros(in.shape()));

  SplitMix64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& value = inputs[t].mutable_value();
    std::vector<std::size_t> idx;
    if (samples == 0 || samples >= value.size()) {
      for (std::size_t i = 0; i < value.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < samples; ++i) idx.push_back(rng.uniform_int(value.size()));
    }
    for (std::size_t i : idx) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = loss().value()[0];
      value[i] = saved - h;
      const double down = loss().value()[0];
      value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      const double err = relative_error(a, numeric);
      ++res.checked;
      if (res.worst.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "input " + std::to_string(t) + "[" + std::to_string(i) + "]: " + std::to_string(a) + " vs " +
                    std::to_string(numeric);
      }
    }
  }
  return res;
}

/// Smooth scalar probe of a tensor-valued op: sum(out * weights).
inline Var<double> weighted_sum(const Var<double>& out, SplitMix64& rng) {
  return sum(mul_const(out, Tensor<double>::uniform(out.shape(), rng, -1.0, 1.0)));
}

/// Replaces every parameter with random values of moderate scale; layer
/// norm gains are centred on 1.
template <class T>
void randomize_parameters(ParamStore<T>& params, std::uint64_t seed, double scale = 0.3) {
  SplitMix64 rng(seed);
  for (const auto& [name, pv] : params) {
    Var<T> p = pv;
    const bool gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
    for (auto& v : p.mutable_value().data()) v = static_cast<T>((gain ? 1.0 : 0.0) + rng.uniform(-scale, scale));
  }
}

/// The 64-bit finite-difference suite: every differentiable op, the blocks,
/// the losses and the full tiny model on a 1 x 3 x 8 x 8 input.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed = 7, std::ostream* log = nullptr) {
  using V = Var<double>;
  using Tn = Tensor<double>;
  std::vector<GradCheckResult> results;
  SplitMix64 rng(seed);
  auto leaf = [&](Shape s, double lo = -1.0, double hi = 1.0) { return V::leaf(Tn::uniform(std::move(s), rng, lo, hi)); };
  auto run = [&](const std::string& name, std::vector<V> inputs, std::function<V()> f, std::size_t samples = 0) {
    results.push_back(check_gradients(name, std::move(inputs), f, derive_seed(seed, results.size()), samples));
    if (log) {
      const auto& r = results.back();
      *log << (r.passed() ? "ok   " : "FAIL ") << r.name << "  max_rel_err=" << r.max_rel_error
           << "  checked=" << r.checked << (r.passed() ? "" : "  worst " + r.worst) << '\n';
    }
  };
  auto probe = [&](const Shape& s) { return Tn::uniform(s, rng, -1.0, 1.0); };

  {
    V x = leaf({2, 4, 5, 5}), w = leaf({3, 4, 3, 3}), b = leaf({3});
    auto r = probe({2, 3, 5, 5});
    run("conv2d 3x3 pad 1", {x, w, b}, [=] { return sum(mul_const(conv2d(x, w, b, ConvSpec{1, 1, 1}), r)); });
  }
  {
    V x = leaf({1, 4, 6, 6}), w = leaf({4, 2, 3, 3}), b = leaf({4});
    auto r = probe({1, 4, 3, 3});
    run("conv2d stride 2 groups 2", {x, w, b}, [=] { return sum(mul_const(conv2d(x, w, b, ConvSpec{2, 1, 2}), r)); });
  }
  {
    V x = leaf({1, 3, 4, 4}), w = leaf({5, 3, 1, 1}), b = leaf({5});
    auto r = probe({1, 5, 4, 4});
    run("conv2d 1x1", {x, w, b}, [=] { return sum(mul_const(conv2d(x, w, b), r)); });
  }
  {
    V x = leaf({1, 4, 4, 4}), w = leaf({6, 4, 2, 2}), b = leaf({6});
    auto r = probe({1, 6, 2, 2});
    run("conv2d 2x2 stride 2", {x, w, b}, [=] { return sum(mul_const(conv2d(x, w, b, ConvSpec{2, 0, 1}), r)); });
  }
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      V a = leaf(ta ? Shape{2, 4, 3} : Shape{2, 3, 4});
      V b = leaf(tb ? Shape{2, 5, 4} : Shape{2, 4, 5});
      auto r = probe({2, 3, 5});
      run("matmul ta=" + std::to_string(ta) + " tb=" + std::to_string(tb), {a, b},
          [=] { return sum(mul_const(matmul(a, b, ta != 0, tb != 0), r)); });
    }
  {
    V x = leaf({2, 3, 5}, -2, 2);
    auto r = probe({2, 3, 5});
    run("softmax_lastdim", {x}, [=] { return sum(mul_const(softmax_lastdim(x), r)); });
  }
  {
    V x = leaf({2, 4, 3, 3}), g = leaf({4}, 0.5, 1.5), s = leaf({4});
    auto r = probe({2, 4, 3, 3});
    run("layer_norm", {x, g, s}, [=] { return sum(mul_const(layer_norm(x, g, s), r)); });
  }
  {
    V a = leaf({2, 3, 2, 2}), b = leaf({2, 3, 2, 2});
    auto r = probe({2, 3, 2, 2});
    run("add", {a, b}, [=] { return sum(mul_const(add(a, b), r)); });
    run("sub", {a, b}, [=] { return sum(mul_const(sub(a, b), r)); });
    run("mul", {a, b}, [=] { return sum(mul_const(mul(a, b), r)); });
    run("mul_const", {a}, [=] { return sum(mul_const(mul_const(a, r), r)); });
    run("scale", {a}, [=] { return sum(mul_const(scale(a, 1.7), r)); });
    run("square", {a}, [=] { return sum(mul_const(square(a), r)); });
    run("sigmoid", {a}, [=] { return sum(mul_const(sigmoid(a), r)); });
    run("gelu", {a}, [=] { return sum(mul_const(gelu(a), r)); });
    run("mean", {a}, [=] { return mean(square(a)); });
  }
  {
    V x = leaf({2, 6, 3, 3});
    auto r = probe({2, 3, 3, 3});
    run("simple_gate", {x}, [=] { return sum(mul_const(simple_gate(x), r)); });
    auto r2 = probe({2, 6, 1, 1});
    run("global_avg_pool", {x}, [=] { return sum(mul_const(global_avg_pool(x), r2)); });
    V s = leaf({2, 6, 1, 1});
    auto r3 = probe({2, 6, 3, 3});
    run("scale_channels", {x, s}, [=] { return sum(mul_const(scale_channels(x, s), r3)); });
    auto r4 = probe({2, 2, 3, 3});
    run("slice_channels", {x}, [=] { return sum(mul_const(slice_channels(x, 3, 2), r4)); });
    auto r5 = probe({2, 6, 9});
    run("reshape", {x}, [=] { return sum(mul_const(reshape(x, Shape{2, 6, 9}), r5)); });
    run("normalize_channels", {x}, [=] { return sum(mul_const(normalize_channels(x), r3)); });
  }
  {
    V x = leaf({1, 8, 2, 3});
    auto r = probe({1, 2, 4, 6});
    run("pixel_shuffle", {x}, [=] { return sum(mul_const(pixel_shuffle(x, 2), r)); });
    V y = leaf({1, 2, 4, 6});
    auto r2 = probe({1, 8, 2, 3});
    run("pixel_unshuffle", {y}, [=] { return sum(mul_const(pixel_unshuffle(y, 2), r2)); });
  }
  {
    V a = leaf({1, 2, 3, 3}), b = leaf({1, 3, 3, 3});
    auto r = probe({1, 5, 3, 3});
    run("concat_channels", {a, b}, [=] { return sum(mul_const(concat_channels<double>({a, b}), r)); });
  }
  {
    V x = leaf({1, 3, 4, 5}), w = leaf({4, 5, 3, 3}), b = leaf({4});
    auto r = probe({1, 4, 4, 5});
    run("coord_conv", {x, w, b}, [=] { return sum(mul_const(coord_conv(x, w, b, ConvSpec{1, 1, 1}), r)); });
    V wd = leaf({3, 3, 3, 3}), bd = leaf({3});
    auto r2 = probe({1, 3, 4, 5});
    run("coord_conv depthwise", {x, wd, bd},
        [=] { return sum(mul_const(coord_conv(x, wd, bd, ConvSpec{1, 1, 3}), r2)); });
  }

  // Attention in every mask mode, batch of two with distinct apertures.
  for (MaskMode mode : {MaskMode::maskless, MaskMode::single_mask, MaskMode::multi_mask, MaskMode::f_aware}) {
    const std::size_t C = 4;
    AttentionParams<double> p{leaf({C, C, 1, 1}), leaf({C}), leaf({C, C, 1, 1}), leaf({C}), leaf({C, C, 1, 1}),
                              leaf({C}),          leaf({C, C, 1, 1}), leaf({C}), leaf({C, 1, 3, 3}), leaf({C})};
    V x = leaf({2, C, 3, 3});
    const DecaySchedule sched{2.0, 6.0, 2, mode};
    auto r = probe({2, C, 3, 3});
    const std::vector<double> fs{1.0, 0.35};
    run("aaa_forward " + to_string(mode), {x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.lepe_w, p.lepe_b},
        [=] { return sum(mul_const(aaa_forward(x, std::span<const double>(fs), p, sched), r)); });
  }

  {
    ParamStore<double> store;
    Initializer<double> init(store, seed);
    auto naf = NafBlockParams<double>::make(init, "naf", 4);
    auto rg = ResidualGroupParams<double>::make(init, "rg", 4, 2, 2);
    randomize_parameters(store, derive_seed(seed, 99));
    std::vector<V> params;
    for (const auto& [name, v] : store) params.push_back(v);
    std::vector<V> naf_inputs, rg_inputs;
    V x = leaf({1, 4, 4, 4});
    naf_inputs.push_back(x);
    rg_inputs.push_back(x);
    for (const auto& [name, v] : store) (name.rfind("naf", 0) == 0 ? naf_inputs : rg_inputs).push_back(v);
    auto r = probe({1, 4, 4, 4});
    run("nafblock", naf_inputs, [=] { return sum(mul_const(nafblock_forward(x, naf), r)); }, 6);
    const std::vector<double> fs{0.5};
    AttentionContext<double> ctx{std::span<const double>(fs), DecaySchedule{2.0, 6.0, 2, MaskMode::f_aware}, nullptr, {}};
    run("aab", rg_inputs, [=] {
      AttentionContext<double> c = ctx;
      c.f = std::span<const double>(fs);
      return sum(mul_const(aab_forward(x, rg.blocks[0], c), r));
    }, 6);
    run("residual_group", rg_inputs, [=] {
      AttentionContext<double> c = ctx;
      c.f = std::span<const double>(fs);
      return sum(mul_const(rg_forward(x, rg, c), r));
    }, 6);
  }

  {
    Tn target = Tn::uniform({1, 3, 8, 8}, rng, 0.0, 1.0);
    V pred = leaf({1, 3, 8, 8}, 0.0, 1.0);
    PerceptualProxy<double> proxy;
    run("l1_loss", {pred}, [=] { return l1_loss(pred, target); });
    run("perceptual_loss", {pred}, [=] { return perceptual_loss(pred, target, proxy); });
    run("combined_loss", {pred}, [=] { return combined_loss(pred, target, proxy).total; });
  }

  {
    auto model = std::make_shared<Model<double>>(Model<double>::build(ModelConfig::tiny(), seed));
    randomize_parameters(model->params(), derive_seed(seed, 1234));
    V x = leaf({1, 3, 8, 8}, 0.0, 1.0);
    std::vector<V> inputs{x};
    for (const auto& [name, v] : model->params()) inputs.push_back(v);
    auto r = probe({1, 3, 8, 8});
    run("model tiny 1x3x8x8", inputs, [=] { return mean(mul_const(model->forward(x, 5.6), r)); }, 3);
  }
  return results;
}

inline bool all_passed(const std::vector<GradCheckResult>& rs, double tol = kGradCheckTolerance) {
  return std::all_of(rs.begin(), rs.end(), [tol](const GradCheckResult& r) { return r.passed(tol); });
}

}  // namespace bokeh
