// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#include <set>
#include <string>

#include <gtest/gtest.h>

#include "bokeh/blocks.hpp"
#include "bokeh/gradcheck.hpp"

using namespace bokeh;

TEST(CoordinateChannels, SinglePixelIsZero) {
  const auto c = coordinate_channels<double>(1, 1, 1);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
}

TEST(CoordinateChannels, RampValues) {
  const auto c = coordinate_channels<double>(2, 3, 4);
  const double xs[4] = {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        EXPECT_NEAR(c.at(n, 0, y, x), xs[x], 1e-15);
        EXPECT_NEAR(c.at(n, 1, y, x), -1.0 + y, 1e-15);
      }
}

TEST(CoordConv, CoordinateWeightsReproduceRamp) {
  // Zero image weights and a unit x-coordinate weight give the x ramp.
  auto x = Var<double>::constant(Tensor<double>::full({1, 2, 3, 5}, 0.7));
  Tensor<double> w = Tensor<double>::zeros({1, 4, 1, 1});
  w[2] = 1.0;
  auto y = coord_conv(x, Var<double>::constant(w), Var<double>::constant(Tensor<double>::zeros({1})));
  const auto ramp = coordinate_channels<double>(1, 3, 5);
  for (std::size_t yy = 0; yy < 3; ++yy)
    for (std::size_t xx = 0; xx < 5; ++xx) EXPECT_DOUBLE_EQ(y.value().at(0, 0, yy, xx), ramp.at(0, 0, yy, xx));
}

TEST(CoordConv, DepthwiseEqualsDenseBlockDiagonal) {
  SplitMix64 rng(3);
  const std::size_t C = 3;
  auto x = Var<double>::constant(Tensor<double>::uniform({1, C, 4, 4}, rng, -1, 1));
  auto wd = Tensor<double>::uniform({C, 3, 3, 3}, rng, -1, 1);
  auto b = Var<double>::constant(Tensor<double>::uniform({C}, rng, -1, 1));
  auto yd = coord_conv(x, Var<double>::constant(wd), b, ConvSpec{1, 1, C});
  Tensor<double> dense = Tensor<double>::zeros({C, C + 2, 3, 3});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < 9; ++k) {
      dense[(c * (C + 2) + c) * 9 + k] = wd[(c * 3 + 0) * 9 + k];
      dense[(c * (C + 2) + C) * 9 + k] = wd[(c * 3 + 1) * 9 + k];
      dense[(c * (C + 2) + C + 1) * 9 + k] = wd[(c * 3 + 2) * 9 + k];
    }
  auto yf = coord_conv(x, Var<double>::constant(dense), b, ConvSpec{1, 1, 1});
  EXPECT_LT(max_abs_diff(yd.value(), yf.value()), 1e-12);
}

TEST(CoordConv, RejectsWrongWeight) {
  auto x = Var<double>::constant(Tensor<double>::zeros({1, 3, 4, 4}));
  auto w = Var<double>::constant(Tensor<double>::zeros({2, 3, 1, 1}));
  EXPECT_THROW(coord_conv(x, w, Var<double>{}), ShapeError);
}

TEST(ParamStore, RejectsDuplicates) {
  ParamStore<double> ps;
  ps.add("a", Tensor<double>::zeros({2}));
  EXPECT_THROW(ps.add("a", Tensor<double>::zeros({2})), std::invalid_argument);
  EXPECT_THROW(ps.get("b"), std::out_of_range);
  EXPECT_EQ(ps.element_count(), 2u);
}

TEST(Initializer, DeterministicAndBounded) {
  ParamStore<double> a, b;
  Initializer<double> ia(a, 9), ib(b, 9);
  auto wa = ia.kaiming("w", {4, 3, 3, 3});
  auto wb = ib.kaiming("w", {4, 3, 3, 3});
  EXPECT_EQ(wa.value(), wb.value());
  const double bound = std::sqrt(3.0 / 27.0);
  for (double v : wa.value().data()) EXPECT_LE(std::abs(v), bound);
}

namespace {

Var<double> random_input(std::size_t c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return Var<double>::constant(Tensor<double>::uniform({2, c, 4, 4}, rng, -1, 1));
}

}  // namespace

TEST(NafBlock, IdentityAtInit) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  auto p = NafBlockParams<double>::make(init, "naf", 6);
  auto x = random_input(6, 2);
  EXPECT_EQ(nafblock_forward(x, p).value(), x.value());
}

TEST(NafBlock, PreservesShapeWhenTrained) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  auto p = NafBlockParams<double>::make(init, "naf", 6);
  randomize_parameters(ps, 5);
  auto x = random_input(6, 2);
  auto y = nafblock_forward(x, p);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_GT(max_abs_diff(y.value(), x.value()), 1e-3);
}

TEST(Aab, IdentityAtInitForEveryF) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  auto p = AabParams<double>::make(init, "aab", 4, 2);
  auto x = random_input(4, 3);
  for (double f : {1.0, 0.5, 1.0 / 11.0}) {
    const double fs[1] = {f};
    AttentionContext<double> ctx{std::span<const double>(fs, 1), DecaySchedule{2, 6, 2, MaskMode::f_aware}};
    EXPECT_EQ(aab_forward(x, p, ctx).value(), x.value());
  }
}

TEST(Aab, TrainedBlockDependsOnF) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  auto p = AabParams<double>::make(init, "aab", 4, 2);
  randomize_parameters(ps, 8);
  auto x = random_input(4, 3);
  const double f1[1] = {1.0}, f2[1] = {0.2};
  DecaySchedule s{2, 6, 2, MaskMode::f_aware};
  auto a = aab_forward(x, p, AttentionContext<double>{std::span<const double>(f1, 1), s});
  auto b = aab_forward(x, p, AttentionContext<double>{std::span<const double>(f2, 1), s});
  EXPECT_GT(max_abs_diff(a.value(), b.value()), 1e-6);
}

TEST(ResidualGroup, IdentityAtInitAndUniqueNames) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  auto g = ResidualGroupParams<double>::make(init, "rg", 4, 3, 2);
  EXPECT_EQ(g.blocks.size(), 3u);
  std::set<std::string> names;
  for (const auto& [name, v] : ps) names.insert(name);
  EXPECT_EQ(names.size(), ps.size());
  auto x = random_input(4, 4);
  const double fs[1] = {0.5};
  AttentionContext<double> ctx{std::span<const double>(fs, 1), DecaySchedule{2, 6, 2, MaskMode::f_aware}};
  EXPECT_EQ(rg_forward(x, g, ctx).value(), x.value());
}

TEST(ResidualGroup, NeedsOneBlock) {
  ParamStore<double> ps;
  Initializer<double> init(ps, 1);
  EXPECT_THROW(ResidualGroupParams<double>::make(init, "rg", 4, 0, 2), std::invalid_argument);
}
