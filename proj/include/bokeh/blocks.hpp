// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bokeh/aperture_attention.hpp"
#include "bokeh/ops.hpp"

namespace bokeh {

/// Ordered collection of named trainable tensors. Names are hierarchical
/// ("enc.0.naf.1.conv1.weight") and unique.
template <class T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, Var<T>::leaf(std::move(value), true));
    return entries_.back().second;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic parameter factory. Every tensor draws from one generator in
/// registration order, so a seed fixes the whole model.
template <class T>
class Initializer {
 public:
  Initializer(ParamStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  /// Kaiming-uniform (gain 1) over fan-in: U(-sqrt(3 / fan_in), +sqrt(3 / fan_in)).
  Var<T> kaiming(const std::string& name, Shape shape) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    return store_.add(name, Tensor<T>::uniform(std::move(shape), rng_, -bound, bound));
  }
  Var<T> zeros(const std::string& name, Shape shape) {
    return store_.add(name, Tensor<T>::zeros(std::move(shape)));
  }
  Var<T> ones(const std::string& name, Shape shape) {
    return store_.add(name, Tensor<T>::ones(std::move(shape)));
  }

 private:
  ParamStore<T>& store_;
  SplitMix64 rng_;
};

// ---------------------------------------------------------------------------
// CoordConv

/// N x 2 x H x W constant: channel 0 is x, channel 1 is y, each spanning
/// [-1, 1] across the extent. A single-pixel extent maps to 0.
template <class T>
Tensor<T> coordinate_channels(std::size_t n, std::size_t h, std::size_t w) {
  Tensor<T> c({n, 2, h, w});
  auto ramp = [](std::size_t i, std::size_t extent) {
    return extent == 1 ? 0.0
                       : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1);
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        c.at(b, 0, y, x) = static_cast<T>(ramp(x, w));
        c.at(b, 1, y, x) = static_cast<T>(ramp(y, h));
      }
  return c;
}

/// Convolution whose input is augmented with the two coordinate channels.
/// Weight is Cout x (C / groups + 2) x K x K: each group sees its own slice
/// of the input followed by the shared x/y channels.
template <class T>
Var<T> coord_conv(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
                  ConvSpec spec = {}) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  detail::require(xs.size() == 4 && ws.size() == 4 && spec.groups >= 1 &&
                      xs[1] % spec.groups == 0 && ws[1] == xs[1] / spec.groups + 2,
                  "coord_conv: weight " + to_string(ws) + " expects " +
                      (ws.size() == 4 ? std::to_string(ws[1] - 2) : std::string("?")) +
                      " image channels per group, input is " + to_string(xs));
  auto coords = Var<T>::constant(coordinate_channels<T>(xs[0], xs[2], xs[3]));
  if (spec.groups == 1) return conv2d(concat_channels<T>({input, coords}), weight, bias, spec);
  const std::size_t per = ws[1] - 2;
  Var<T> image_part = conv2d(input, slice_channels(weight, 0, per), bias, spec);
  Var<T> coord_part = conv2d(coords, slice_channels(weight, per, 2), Var<T>{},
                             ConvSpec{spec.stride, spec.padding, 1});
  return add(image_part, coord_part);
}

// ---------------------------------------------------------------------------
// NAF block

template <class T>
struct NafBlockParams {
  Var<T> norm1_g, norm1_b;
  Var<T> conv1_w, conv1_b;  // coord_conv 1x1, C+2 -> 2C
  Var<T> dw_w, dw_b;        // depthwise 3x3 on 2C
  Var<T> sca_w, sca_b;      // 1x1 C -> C on pooled features
  Var<T> conv3_w, conv3_b;  // 1x1 C -> C, zero-initialised
  Var<T> norm2_g, norm2_b;
  Var<T> conv4_w, conv4_b;  // 1x1 C -> 2C
  Var<T> conv5_w, conv5_b;  // 1x1 C -> C, zero-initialised

  static NafBlockParams make(Initializer<T>& init, const std::string& p, std::size_t c) {
    NafBlockParams b;
    b.norm1_g = init.ones(p + ".norm1.gain", {c});
    b.norm1_b = init.zeros(p + ".norm1.shift", {c});
    b.conv1_w = init.kaiming(p + ".conv1.weight", {2 * c, c + 2, 1, 1});
    b.conv1_b = init.zeros(p + ".conv1.bias", {2 * c});
    b.dw_w = init.kaiming(p + ".dwconv.weight", {2 * c, 1, 3, 3});
    b.dw_b = init.zeros(p + ".dwconv.bias", {2 * c});
    b.sca_w = init.kaiming(p + ".sca.weight", {c, c, 1, 1});
    b.sca_b = init.zeros(p + ".sca.bias", {c});
    b.conv3_w = init.zeros(p + ".conv3.weight", {c, c, 1, 1});
    b.conv3_b = init.zeros(p + ".conv3.bias", {c});
    b.norm2_g = init.ones(p + ".norm2.gain", {c});
    b.norm2_b = init.zeros(p + ".norm2.shift", {c});
    b.conv4_w = init.kaiming(p + ".conv4.weight", {2 * c, c, 1, 1});
    b.conv4_b = init.zeros(p + ".conv4.bias", {2 * c});
    b.conv5_w = init.zeros(p + ".conv5.weight", {c, c, 1, 1});
    b.conv5_b = init.zeros(p + ".conv5.bias", {c});
    return b;
  }
};

template <class T>
Var<T> nafblock_forward(const Var<T>& x, const NafBlockParams<T>& p) {
  const std::size_t c2 = p.dw_w.shape()[0];
  Var<T> h = layer_norm(x, p.norm1_g, p.norm1_b);
  h = coord_conv(h, p.conv1_w, p.conv1_b);
  h = conv2d(h, p.dw_w, p.dw_b, ConvSpec{1, 1, c2});
  h = simple_gate(h);
  h = scale_channels(h, conv2d(global_avg_pool(h), p.sca_w, p.sca_b));
  h = conv2d(h, p.conv3_w, p.conv3_b);
  Var<T> y = add(x, h);

  h = layer_norm(y, p.norm2_g, p.norm2_b);
  h = conv2d(h, p.conv4_w, p.conv4_b);
  h = simple_gate(h);
  h = conv2d(h, p.conv5_w, p.conv5_b);
  return add(y, h);
}

// ---------------------------------------------------------------------------
// Aperture attention block

template <class T>
struct AabParams {
  Var<T> cpe_w, cpe_b;  // depthwise 3x3 coord_conv, C x 3 x 3 x 3
  Var<T> norm1_g, norm1_b;
  AttentionParams<T> attn;
  Var<T> norm2_g, norm2_b;
  Var<T> ffn1_w, ffn1_b;  // C -> ratio C
  Var<T> ffn2_w, ffn2_b;  // ratio C -> C, zero-initialised

  static AabParams make(Initializer<T>& init, const std::string& p, std::size_t c,
                        std::size_t ffn_ratio) {
    AabParams b;
    b.cpe_w = init.zeros(p + ".cpe.weight", {c, 3, 3, 3});
    b.cpe_b = init.zeros(p + ".cpe.bias", {c});
    b.norm1_g = init.ones(p + ".norm1.gain", {c});
    b.norm1_b = init.zeros(p + ".norm1.shift", {c});
    b.attn.wq = init.kaiming(p + ".attn.q.weight", {c, c, 1, 1});
    b.attn.bq = init.zeros(p + ".attn.q.bias", {c});
    b.attn.wk = init.kaiming(p + ".attn.k.weight", {c, c, 1, 1});
    b.attn.bk = init.zeros(p + ".attn.k.bias", {c});
    b.attn.wv = init.kaiming(p + ".attn.v.weight", {c, c, 1, 1});
    b.attn.bv = init.zeros(p + ".attn.v.bias", {c});
    b.attn.lepe_w = init.kaiming(p + ".attn.lepe.weight", {c, 1, 3, 3});
    b.attn.lepe_b = init.zeros(p + ".attn.lepe.bias", {c});
    b.attn.wo = init.zeros(p + ".attn.out.weight", {c, c, 1, 1});
    b.attn.bo = init.zeros(p + ".attn.out.bias", {c});
    b.norm2_g = init.ones(p + ".norm2.gain", {c});
    b.norm2_b = init.zeros(p + ".norm2.shift", {c});
    b.ffn1_w = init.kaiming(p + ".ffn.fc1.weight", {ffn_ratio * c, c, 1, 1});
    b.ffn1_b = init.zeros(p + ".ffn.fc1.bias", {ffn_ratio * c});
    b.ffn2_w = init.zeros(p + ".ffn.fc2.weight", {c, ffn_ratio * c, 1, 1});
    b.ffn2_b = init.zeros(p + ".ffn.fc2.bias", {c});
    return b;
  }
};

/// Per-forward context shared by all attention blocks.
template <class T>
struct AttentionContext {
  std::span<const double> f;  // encoded aperture per batch item
  DecaySchedule schedule;
  MaskCache<T>* cache = nullptr;
  AttentionOptions options{};
};

template <class T>
Var<T> aab_forward(const Var<T>& x, const AabParams<T>& p, const AttentionContext<T>& ctx) {
  const std::size_t c = x.shape()[1];
  Var<T> y = add(x, coord_conv(x, p.cpe_w, p.cpe_b, ConvSpec{1, 1, c}));
  Var<T> a = aaa_forward(layer_norm(y, p.norm1_g, p.norm1_b), ctx.f, p.attn, ctx.schedule,
                         ctx.cache, ctx.options);
  y = add(y, a);
  Var<T> h = layer_norm(y, p.norm2_g, p.norm2_b);
  h = gelu(conv2d(h, p.ffn1_w, p.ffn1_b));
  h = conv2d(h, p.ffn2_w, p.ffn2_b);
  return add(y, h);
}

// ---------------------------------------------------------------------------
// Residual group

template <class T>
struct ResidualGroupParams {
  std::vector<AabParams<T>> blocks;
  Var<T> tail_w, tail_b;  // 1x1 coord_conv, zero-initialised

  static ResidualGroupParams make(Initializer<T>& init, const std::string& p, std::size_t c,
                                  std::size_t n_aab, std::size_t ffn_ratio) {
    if (n_aab < 1) throw std::invalid_argument("residual group needs at least one AAB");
    ResidualGroupParams g;
    for (std::size_t i = 0; i < n_aab; ++i)
      g.blocks.push_back(AabParams<T>::make(init, p + ".aab." + std::to_string(i), c, ffn_ratio));
    g.tail_w = init.zeros(p + ".tail.weight", {c, c + 2, 1, 1});
    g.tail_b = init.zeros(p + ".tail.bias", {c});
    return g;
  }
};

/// y = x + tail(AAB_n(... AAB_1(x))).
template <class T>
Var<T> rg_forward(const Var<T>& x, const ResidualGroupParams<T>& p,
                  const AttentionContext<T>& ctx) {
  Var<T> h = x;
  for (const auto& b : p.blocks) h = aab_forward(h, b, ctx);
  return add(x, coord_conv(h, p.tail_w, p.tail_b));
}

}  // namespace bokeh
