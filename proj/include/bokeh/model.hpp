// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bokeh/aperture_attention.hpp"
#include "bokeh/blocks.hpp"

namespace bokeh {

enum class Precondition { input_channel, none };

struct ModelConfig {
  std::size_t width = 16;  // encoder base channels
  std::size_t n_rg = 3;
  std::size_t n_aab = 3;
  std::size_t n_heads = 3;
  std::size_t embed_dim = 96;
  MaskMode mask_mode = MaskMode::f_aware;
  double a = 2.0;
  double b = 6.0;
  double reference_f_number = 2.0;
  bool ae_literal = false;
  Precondition precondition = Precondition::input_channel;
  std::size_t levels = 3;         // x2 downsampling stages
  std::size_t naf_per_level = 2;  // NAF blocks per encoder/decoder level
  std::size_t ffn_ratio = 4;

  static ModelConfig medium() { return ModelConfig{}; }

  /// Every headline hyperparameter of the medium preset doubled.
  static ModelConfig large() {
    ModelConfig c;
    c.width = 32;
    c.n_rg = 6;
    c.n_aab = 6;
    c.n_heads = 6;
    c.embed_dim = 192;
    return c;
  }

  /// Desk-scale preset for tests and CPU training.
  static ModelConfig tiny() {
    ModelConfig c;
    c.width = 8;
    c.n_rg = 2;
    c.n_aab = 2;
    c.n_heads = 2;
    c.embed_dim = 32;
    c.levels = 2;
    c.naf_per_level = 1;
    return c;
  }

  static ModelConfig preset(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "m" || name == "M") return medium();
    if (name == "l" || name == "L") return large();
    throw std::invalid_argument("unknown preset '" + name + "'");
  }

  std::size_t downsample_factor() const { return std::size_t{1} << levels; }

  /// Channels of encoder level k (k < levels).
  std::size_t level_channels(std::size_t k) const { return width << k; }

  DecaySchedule schedule() const { return DecaySchedule{a, b, n_heads, mask_mode}; }

  void validate() const {
    if (width < 1 || n_rg < 1 || n_aab < 1 || n_heads < 1 || levels < 1 ||
        naf_per_level < 1 || ffn_ratio < 1)
      throw std::invalid_argument("ModelConfig: extents must be >= 1");
    if (embed_dim % n_heads != 0)
      throw std::invalid_argument("ModelConfig: embed_dim " + std::to_string(embed_dim) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    schedule().validate();
    if (!(reference_f_number > 0.0))
      throw std::invalid_argument("ModelConfig: reference f-number must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(MaskMode, {{MaskMode::maskless, "maskless"},
                                        {MaskMode::single_mask, "single_mask"},
                                        {MaskMode::multi_mask, "multi_mask"},
                                        {MaskMode::f_aware, "f_aware"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Precondition, {{Precondition::input_channel, "input_channel"},
                                            {Precondition::none, "none"}})

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"n_rg", c.n_rg},
                     {"n_aab", c.n_aab},
                     {"n_heads", c.n_heads},
                     {"embed_dim", c.embed_dim},
                     {"mask_mode", c.mask_mode},
                     {"a", c.a},
                     {"b", c.b},
                     {"reference_f_number", c.reference_f_number},
                     {"ae_literal", c.ae_literal},
                     {"precondition", c.precondition},
                     {"levels", c.levels},
                     {"naf_per_level", c.naf_per_level},
                     {"ffn_ratio", c.ffn_ratio}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("width").get_to(c.width);
  j.at("n_rg").get_to(c.n_rg);
  j.at("n_aab").get_to(c.n_aab);
  j.at("n_heads").get_to(c.n_heads);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("mask_mode").get_to(c.mask_mode);
  j.at("a").get_to(c.a);
  j.at("b").get_to(c.b);
  j.at("reference_f_number").get_to(c.reference_f_number);
  j.at("ae_literal").get_to(c.ae_literal);
  j.at("precondition").get_to(c.precondition);
  j.at("levels").get_to(c.levels);
  j.at("naf_per_level").get_to(c.naf_per_level);
  j.at("ffn_ratio").get_to(c.ffn_ratio);
}

enum class ForwardMode { training, inference };

/// Image-to-image network: preconditioned input, CNN encoder, stack of
/// residual groups over the token grid, CNN decoder, global residual.
template <class T>
class Model {
 public:
  struct Level {
    std::vector<NafBlockParams<T>> blocks;
    Var<T> down_w, down_b;  // 2x2 stride-2 conv to the next level
  };
  struct UpLevel {
    Var<T> up_w, up_b;  // 1x1 conv to 4c before pixel_shuffle(2)
    std::vector<NafBlockParams<T>> blocks;
  };

  static Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    m.params_ = std::make_unique<ParamStore<T>>();
    m.cache_ = std::make_unique<MaskCache<T>>();
    Initializer<T> init(*m.params_, seed);
    const std::size_t in_ch = config.precondition == Precondition::input_channel ? 4 : 3;
    const std::size_t w = config.width, E = config.embed_dim, L = config.levels;

    m.stem_w_ = init.kaiming("stem.weight", {w, in_ch + 2, 3, 3});
    m.stem_b_ = init.zeros("stem.bias", {w});
    for (std::size_t k = 0; k < L; ++k) {
      Level lv;
      const std::size_t c = config.level_channels(k);
      const std::string p = "enc." + std::to_string(k);
      for (std::size_t j = 0; j < config.naf_per_level; ++j)
        lv.blocks.push_back(NafBlockParams<T>::make(init, p + ".naf." + std::to_string(j), c));
      const std::size_t next = k + 1 < L ? config.level_channels(k + 1) : E;
      lv.down_w = init.kaiming(p + ".down.weight", {next, c, 2, 2});
      lv.down_b = init.zeros(p + ".down.bias", {next});
      m.encoder_.push_back(std::move(lv));
    }
    for (std::size_t r = 0; r < config.n_rg; ++r)
      m.groups_.push_back(ResidualGroupParams<T>::make(init, "body.rg." + std::to_string(r), E,
                                                       config.n_aab, config.ffn_ratio));
    m.body_tail_w_ = init.zeros("body.tail.weight", {E, E, 1, 1});
    m.body_tail_b_ = init.zeros("body.tail.bias", {E});
    for (std::size_t kk = L; kk-- > 0;) {
      UpLevel up;
      const std::size_t c = config.level_channels(kk);
      const std::size_t prev = kk + 1 < L ? config.level_channels(kk + 1) : E;
      const std::string p = "dec." + std::to_string(kk);
      up.up_w = init.kaiming(p + ".up.weight", {4 * c, prev, 1, 1});
      up.up_b = init.zeros(p + ".up.bias", {4 * c});
      for (std::size_t j = 0; j < config.naf_per_level; ++j)
        up.blocks.push_back(NafBlockParams<T>::make(init, p + ".naf." + std::to_string(j), c));
      m.decoder_.push_back(std::move(up));
    }
    m.out_w_ = init.zeros("out.weight", {3, w, 3, 3});
    m.out_b_ = init.zeros("out.bias", {3});
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return *params_; }
  const ParamStore<T>& params() const { return *params_; }
  std::size_t parameter_count() const { return params_->element_count(); }
  MaskCache<T>& mask_cache() { return *cache_; }

  /// Encoded control scalar for a requested f-number.
  double encode(double f_number) const {
    return aperture_encode(f_number, config_.reference_f_number, config_.ae_literal).f;
  }

  /// image: N x 3 x H x W in [0, 1]; one f-number per batch item (or one for
  /// all). Inference clamps the output to [0, 1].
  Var<T> forward(const Var<T>& image, std::span<const double> f_numbers,
                 ForwardMode mode = ForwardMode::training) const {
    const auto& s = image.shape();
    if (s.size() != 4 || s[1] != 3)
      throw ShapeError("Model::forward: expected N x 3 x H x W, got " + to_string(s));
    const std::size_t N = s[0], H = s[2], W = s[3], factor = config_.downsample_factor();
    if (H % factor != 0 || W % factor != 0)
      throw ShapeError("Model::forward: H and W must be divisible by " +
                       std::to_string(factor) + ", got " + to_string(s));
    if (f_numbers.size() != 1 && f_numbers.size() != N)
      throw std::invalid_argument("Model::forward: need 1 or N f-numbers");
    std::vector<double> f(N);
    for (std::size_t n = 0; n < N; ++n)
      f[n] = encode(f_numbers.size() == 1 ? f_numbers[0] : f_numbers[n]);

    Var<T> x = image;
    if (config_.precondition == Precondition::input_channel) {
      Tensor<T> fc({N, 1, H, W});
      for (std::size_t n = 0; n < N; ++n)
        std::fill(fc.raw() + n * H * W, fc.raw() + (n + 1) * H * W, static_cast<T>(f[n]));
      x = concat_channels<T>({image, Var<T>::constant(std::move(fc))});
    }
    Var<T> h = coord_conv(x, stem_w_, stem_b_, ConvSpec{1, 1, 1});
    std::vector<Var<T>> skips;
    for (const auto& lv : encoder_) {
      for (const auto& b : lv.blocks) h = nafblock_forward(h, b);
      skips.push_back(h);
      h = conv2d(h, lv.down_w, lv.down_b, ConvSpec{2, 0, 1});
    }

    AttentionContext<T> ctx{std::span<const double>(f), config_.schedule(), cache_.get(), {}};
    Var<T> z = h;
    for (const auto& g : groups_) h = rg_forward(h, g, ctx);
    h = add(z, conv2d(h, body_tail_w_, body_tail_b_));

    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const auto& up = decoder_[i];
      h = pixel_shuffle(conv2d(h, up.up_w, up.up_b), 2);
      h = add(h, skips[skips.size() - 1 - i]);
      for (const auto& b : up.blocks) h = nafblock_forward(h, b);
    }
    Var<T> y = add(image, conv2d(h, out_w_, out_b_, ConvSpec{1, 1, 1}));
    if (mode == ForwardMode::inference) {
      Tensor<T> v = y.value();
      for (auto& e : v.data()) e = std::clamp(e, T{0}, T{1});
      return Var<T>::constant(std::move(v));
    }
    return y;
  }

  Var<T> forward(const Var<T>& image, double f_number,
                 ForwardMode mode = ForwardMode::training) const {
    const double fs[1] = {f_number};
    return forward(image, std::span<const double>(fs, 1), mode);
  }

  /// Renders one 3 x H x W (or 1 x 3 x H x W) image at inference.
  Tensor<T> infer(const Tensor<T>& image, double f_number) const {
    Tensor<T> x = image.rank() == 3 ? image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)})
                                    : image;
    NoGradGuard no_grad;
    return forward(Var<T>::constant(std::move(x)), f_number, ForwardMode::inference).value();
  }

 private:
  ModelConfig config_;
  std::unique_ptr<ParamStore<T>> params_;
  std::unique_ptr<MaskCache<T>> cache_;
  Var<T> stem_w_, stem_b_;
  std::vector<Level> encoder_;
  std::vector<ResidualGroupParams<T>> groups_;
  Var<T> body_tail_w_, body_tail_b_;
  std::vector<UpLevel> decoder_;
  Var<T> out_w_, out_b_;
};

/// Analytic multiply-accumulate count of one forward pass on a single
/// h x w image: every convolution (coordinate channels included) and both
/// attention products.
inline std::uint64_t count_macs(const ModelConfig& c, std::size_t h, std::size_t w) {
  c.validate();
  const std::size_t factor = c.downsample_factor();
  if (h % factor != 0 || w % factor != 0)
    throw std::invalid_argument("count_macs: extents must be divisible by " +
                                std::to_string(factor));
  std::uint64_t total = 0;
  auto conv = [&](std::uint64_t cin_per_group, std::uint64_t cout, std::uint64_t k,
                  std::uint64_t pixels) { total += cout * cin_per_group * k * k * pixels; };
  auto naf = [&](std::uint64_t ch, std::uint64_t px) {
    conv(ch + 2, 2 * ch, 1, px);  // coord_conv expand
    conv(1, 2 * ch, 3, px);       // depthwise
    conv(ch, ch, 1, 1);           // channel attention on pooled vector
    conv(ch, ch, 1, px);
    conv(ch, 2 * ch, 1, px);
    conv(ch, ch, 1, px);
  };
  const std::uint64_t in_ch = c.precondition == Precondition::input_channel ? 4 : 3;
  std::uint64_t px = static_cast<std::uint64_t>(h) * w;
  conv(in_ch + 2, c.width, 3, px);
  for (std::size_t k = 0; k < c.levels; ++k) {
    const std::uint64_t ch = c.level_channels(k);
    for (std::size_t j = 0; j < c.naf_per_level; ++j) naf(ch, px);
    px /= 4;
    conv(ch, k + 1 < c.levels ? c.level_channels(k + 1) : c.embed_dim, 2, px);
  }
  const std::uint64_t E = c.embed_dim, tokens = px;
  for (std::size_t r = 0; r < c.n_rg; ++r) {
    for (std::size_t a = 0; a < c.n_aab; ++a) {
      conv(1, E, 3, tokens);  // depthwise CPE, image channel
      conv(2, E, 3, tokens);  // CPE coordinate taps
      conv(E, E, 1, tokens);  // q
      conv(E, E, 1, tokens);  // k
      conv(E, E, 1, tokens);  // v
      total += 2 * tokens * tokens * E;  // QK^T and AV over all heads
      conv(1, E, 3, tokens);  // LePE
      conv(E, E, 1, tokens);  // out
      conv(E, c.ffn_ratio * E, 1, tokens);
      conv(c.ffn_ratio * E, E, 1, tokens);
    }
    conv(E + 2, E, 1, tokens);  // group tail
  }
  conv(E, E, 1, tokens);  // body tail
  std::uint64_t prev = E;
  for (std::size_t k = c.levels; k-- > 0;) {
    const std::uint64_t ch = c.level_channels(k);
    conv(prev, 4 * ch, 1, px);
    px *= 4;
    for (std::size_t j = 0; j < c.naf_per_level; ++j) naf(ch, px);
    prev = ch;
  }
  conv(c.width, 3, 3, px);
  return total;
}

}  // namespace bokeh
