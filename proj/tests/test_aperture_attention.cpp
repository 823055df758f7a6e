// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "bokeh/aperture_attention.hpp"
#include "bokeh/blocks.hpp"
#include "attention_reference.hpp"

using namespace bokeh;

TEST(ApertureEncode, ReferenceRatio) {
  EXPECT_DOUBLE_EQ(aperture_encode(2.0).f, 1.0);
  EXPECT_DOUBLE_EQ(aperture_encode(4.0).f, 0.5);
  EXPECT_DOUBLE_EQ(aperture_encode(22.0).f, 1.0 / 11.0);
  EXPECT_DOUBLE_EQ(aperture_encode(8.0, 4.0).f, 0.5);
}

TEST(ApertureEncode, Literal) {
  EXPECT_DOUBLE_EQ(aperture_encode(22.0, 2.0, true).f, 1.0);
  EXPECT_DOUBLE_EQ(aperture_encode(11.0, 2.0, true).f, 0.5);
  EXPECT_THROW(aperture_encode(32.0, 2.0, true), std::invalid_argument);
}

TEST(ApertureEncode, RejectsWiderThanReference) {
  EXPECT_THROW(aperture_encode(1.4), std::invalid_argument);
  EXPECT_THROW(aperture_encode(4.0, 0.0), std::invalid_argument);
}

TEST(DecaySchedule, HeadZeroIndependentOfF) {
  DecaySchedule s{2.0, 6.0, 3, MaskMode::f_aware};
  EXPECT_DOUBLE_EQ(head_decay(s, 1.0, 0), 0.75);
  EXPECT_DOUBLE_EQ(head_decay(s, 0.1, 0), 0.75);
}

TEST(DecaySchedule, ClosedFormValues) {
  DecaySchedule s{2.0, 6.0, 3, MaskMode::f_aware};
  EXPECT_NEAR(head_decay(s, 1.0, 2), 1.0 - std::exp2(-14.0 / 3.0), 1e-15);
  EXPECT_NEAR(head_decay(s, 1.0, 2), 0.96062, 1e-5);
  EXPECT_NEAR(head_decay(s, 0.25, 2), 1.0 - std::exp2(-5.0 / 3.0), 1e-15);
  EXPECT_NEAR(head_decay(s, 0.25, 2), 0.68502, 1e-5);
}

TEST(DecaySchedule, ModesAssignRates) {
  DecaySchedule s{2.0, 6.0, 3, MaskMode::maskless};
  for (double g : decay_rates(s, 0.5)) EXPECT_EQ(g, 1.0);
  s.mode = MaskMode::single_mask;
  for (double g : decay_rates(s, 0.5)) EXPECT_DOUBLE_EQ(g, 0.75);
  s.mode = MaskMode::multi_mask;
  const auto multi_a = decay_rates(s, 0.2), multi_b = decay_rates(s, 0.9);
  EXPECT_EQ(multi_a, multi_b);
  s.mode = MaskMode::f_aware;
  EXPECT_EQ(decay_rates(s, 1.0), multi_a);
  EXPECT_NE(decay_rates(s, 0.5), multi_a);
}

TEST(DecaySchedule, FOutsideUnitIntervalRejected) {
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  EXPECT_THROW(decay_rates(s, 0.0), std::invalid_argument);
  EXPECT_THROW(decay_rates(s, 1.5), std::invalid_argument);
  EXPECT_THROW(decay_rates(DecaySchedule{0.0, 6.0, 2}, 0.5), std::invalid_argument);
  EXPECT_THROW(decay_rates(DecaySchedule{3.0, 2.0, 2}, 0.5), std::invalid_argument);
}

TEST(DecaySchedule, ParseModes) {
  EXPECT_EQ(parse_mask_mode("f-aware"), MaskMode::f_aware);
  EXPECT_EQ(parse_mask_mode("single"), MaskMode::single_mask);
  EXPECT_EQ(parse_mask_mode("multi"), MaskMode::multi_mask);
  EXPECT_EQ(parse_mask_mode("maskless"), MaskMode::maskless);
  EXPECT_THROW(parse_mask_mode("dense"), std::invalid_argument);
}

TEST(Masks, TwoByTwoGrid) {
  const auto set = build_masks<double>(2, 2, {0.5});
  EXPECT_EQ(set.at(0, 0, 0), 1.0);
  EXPECT_EQ(set.at(0, 0, 1), 0.5);
  EXPECT_EQ(set.at(0, 0, 2), 0.5);
  EXPECT_EQ(set.at(0, 0, 3), 0.25);
  EXPECT_EQ(set.at(0, 1, 2), 0.25);
}

TEST(Masks, GammaOneIsAllOnes) {
  const auto set = build_masks<double>(3, 4, {1.0, 1.0});
  for (double v : set.masks.data()) EXPECT_EQ(v, 1.0);
}

TEST(Masks, MatchesCoordinateLoop) {
  const std::size_t H = 3, W = 5;
  const std::vector<double> g{0.3, 0.8};
  const auto set = build_masks<double>(H, W, g);
  for (std::size_t h = 0; h < g.size(); ++h)
    for (std::size_t y1 = 0; y1 < H; ++y1)
      for (std::size_t x1 = 0; x1 < W; ++x1)
        for (std::size_t y2 = 0; y2 < H; ++y2)
          for (std::size_t x2 = 0; x2 < W; ++x2) {
            const double d = std::abs(double(x1) - double(x2)) + std::abs(double(y1) - double(y2));
            EXPECT_NEAR(set.at(h, y1 * W + x1, y2 * W + x2), std::pow(g[h], d), 1e-15);
          }
}

TEST(Masks, TorusWrapsDistances) {
  const auto set = build_masks<double>(1, 6, {0.5}, MaskTopology::torus);
  EXPECT_EQ(set.at(0, 0, 5), 0.5);
  EXPECT_EQ(set.at(0, 0, 3), 0.125);
}

TEST(Masks, Errors) {
  EXPECT_THROW(build_masks<double>(0, 3, {0.5}), std::invalid_argument);
  EXPECT_THROW(build_masks<double>(2, 2, {}), std::invalid_argument);
  EXPECT_THROW(build_masks<double>(2, 2, {0.0}), std::invalid_argument);
  EXPECT_THROW(build_masks<double>(2, 2, {1.2}), std::invalid_argument);
  EXPECT_THROW(build_masks<double>(65, 64, {0.5}), std::invalid_argument);
  EXPECT_THROW(build_masks<double>(4, 4, {0.5}, MaskTopology::planar, 15), std::invalid_argument);
}

TEST(MaskCache, ReturnsSharedEntries) {
  MaskCache<float> cache;
  auto a = cache.get(4, 4, {0.5, 0.75});
  auto b = cache.get(4, 4, {0.5, 0.75});
  EXPECT_EQ(a.get(), b.get());
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(cache.hits(), 1u);
  auto c = cache.get(4, 4, {0.5, 0.7});
  EXPECT_NE(a.get(), c.get());
  EXPECT_EQ(cache.size(), 2u);
}

TEST(MaskCache, ConcurrentLookups) {
  MaskCache<double> cache;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&cache, t] {
      for (int i = 0; i < 20; ++i) cache.get(3, 3, {0.5 + 0.1 * ((i + t) % 3)});
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(cache.size(), 3u);
}

TEST(MaskCache, TokenCapApplies) {
  MaskCache<float> cache;
  cache.set_token_cap(8);
  EXPECT_THROW(cache.get(3, 3, {0.5}), std::invalid_argument);
}

namespace {

struct Fixture {
  AttentionParams<double> p;
  Var<double> x;
  std::size_t C, H, W, N;
};

Fixture make_fixture(std::size_t N, std::size_t C, std::size_t H, std::size_t W, std::uint64_t seed) {
  SplitMix64 rng(seed);
  auto r = [&](Shape s, double s_ = 0.5) { return Var<double>::leaf(Tensor<double>::uniform(std::move(s), rng, -s_, s_)); };
  Fixture f;
  f.N = N;
  f.C = C;
  f.H = H;
  f.W = W;
  f.p.wq = r({C, C, 1, 1});
  f.p.bq = r({C});
  f.p.wk = r({C, C, 1, 1});
  f.p.bk = r({C});
  f.p.wv = r({C, C, 1, 1});
  f.p.bv = r({C});
  f.p.wo = r({C, C, 1, 1});
  f.p.bo = r({C});
  f.p.lepe_w = r({C, 1, 3, 3});
  f.p.lepe_b = r({C});
  f.x = r({N, C, H, W}, 1.0);
  return f;
}

}  // namespace

TEST(Attention, MasklessMatchesLoopReference) {
  auto fx = make_fixture(2, 6, 3, 3, 11);
  DecaySchedule s{2.0, 6.0, 3, MaskMode::maskless};
  const auto got = aaa_forward(fx.x, 1.0, fx.p, s).value();
  const auto want = testref::attention(fx.x.value(), fx.p, 3, {1.0, 1.0, 1.0}, {});
  EXPECT_LT(max_abs_diff(got, want), 1e-10);
}

TEST(Attention, FAwareMatchesLoopReferencePerItem) {
  auto fx = make_fixture(2, 4, 3, 4, 12);
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  const std::vector<double> f{1.0, 0.3};
  const auto got = aaa_forward(fx.x, std::span<const double>(f), fx.p, s).value();
  std::vector<std::vector<double>> per_item{decay_rates(s, 1.0), decay_rates(s, 0.3)};
  const auto want = testref::attention(fx.x.value(), fx.p, 2, {}, per_item);
  EXPECT_LT(max_abs_diff(got, want), 1e-10);
}

TEST(Attention, NearUnitDecayApproachesMaskless) {
  auto fx = make_fixture(1, 4, 3, 3, 13);
  // a = b and f = 1 makes every head decay 1 - 2^-a.
  const double a = -std::log2(1e-9);
  DecaySchedule near{a, a, 2, MaskMode::f_aware};
  DecaySchedule none{2.0, 6.0, 2, MaskMode::maskless};
  const auto g = decay_rates(near, 1.0);
  EXPECT_NEAR(g[0], 1.0 - 1e-9, 1e-15);
  const auto y1 = aaa_forward(fx.x, 1.0, fx.p, near).value();
  const auto y0 = aaa_forward(fx.x, 1.0, fx.p, none).value();
  EXPECT_LT(max_abs_diff(y1, y0), 1e-6);
}

TEST(Attention, MaskedRowSumsAtMostOne) {
  auto fx = make_fixture(2, 4, 3, 3, 18);
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  for (double f : {0.1, 0.5, 1.0}) {
    const auto g = decay_rates(s, f);
    const auto w = testref::masked_weights(fx.x.value(), fx.p, 2, {g, g});
    for (const auto& row : w) {
      double sum = 0;
      for (double v : row) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_LE(sum, 1.0 + 1e-12);
    }
  }
}

TEST(Attention, TorusTranslationEquivariance) {
  auto fx = make_fixture(1, 4, 4, 4, 14);
  // Circular LePE padding is not modelled, so the depthwise term is zeroed.
  fx.p.lepe_w.mutable_value().fill(0.0);
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  AttentionOptions opt;
  opt.topology = MaskTopology::torus;
  const auto y = aaa_forward(fx.x, 0.5, fx.p, s, static_cast<MaskCache<double>*>(nullptr), opt).value();
  Tensor<double> shifted = fx.x.value();
  auto roll = [](const Tensor<double>& t, std::size_t dy, std::size_t dx) {
    Tensor<double> out(t.shape());
    for (std::size_t c = 0; c < t.dim(1); ++c)
      for (std::size_t yy = 0; yy < t.dim(2); ++yy)
        for (std::size_t xx = 0; xx < t.dim(3); ++xx)
          out.at(0, c, (yy + dy) % t.dim(2), (xx + dx) % t.dim(3)) = t.at(0, c, yy, xx);
    return out;
  };
  shifted = roll(shifted, 1, 2);
  const auto ys = aaa_forward(Var<double>::constant(shifted), 0.5, fx.p, s, static_cast<MaskCache<double>*>(nullptr), opt).value();
  EXPECT_LT(max_abs_diff(ys, roll(y, 1, 2)), 1e-12);
}

TEST(Attention, CacheGivesSameResult) {
  auto fx = make_fixture(1, 4, 3, 3, 15);
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  MaskCache<double> cache;
  const auto a = aaa_forward(fx.x, 0.4, fx.p, s, &cache).value();
  const auto b = aaa_forward(fx.x, 0.4, fx.p, s, &cache).value();
  const auto c = aaa_forward(fx.x, 0.4, fx.p, s).value();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(cache.hits(), 1u);
}

TEST(Attention, OutputDependsOnF) {
  auto fx = make_fixture(1, 4, 3, 3, 16);
  DecaySchedule s{2.0, 6.0, 2, MaskMode::f_aware};
  const auto a = aaa_forward(fx.x, 1.0, fx.p, s).value();
  const auto b = aaa_forward(fx.x, 0.2, fx.p, s).value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
  s.mode = MaskMode::multi_mask;
  EXPECT_EQ(aaa_forward(fx.x, 1.0, fx.p, s).value(), aaa_forward(fx.x, 0.2, fx.p, s).value());
}

TEST(Attention, Errors) {
  auto fx = make_fixture(2, 6, 3, 3, 17);
  DecaySchedule s{2.0, 6.0, 4, MaskMode::f_aware};
  EXPECT_THROW(aaa_forward(fx.x, 1.0, fx.p, s), std::invalid_argument);
  s.n_heads = 3;
  const std::vector<double> three{1.0, 1.0, 1.0};
  EXPECT_THROW(aaa_forward(fx.x, std::span<const double>(three), fx.p, s), std::invalid_argument);
  EXPECT_THROW(aaa_forward(fx.x, 1.5, fx.p, s), std::invalid_argument);
  s.mode = MaskMode::maskless;
  EXPECT_THROW(aaa_forward(fx.x, 0.0, fx.p, s), std::invalid_argument);
}
