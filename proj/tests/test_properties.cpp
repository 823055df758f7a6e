// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

// Randomised invariants. Every loop draws from a fixed seed so failures
// reproduce.

#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "bokeh/bokeh.hpp"
#include "conv_reference.hpp"

using namespace bokeh;

TEST(Property, ConvMatchesReferenceOnRandomShapes) {
  SplitMix64 rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t groups = 1 + rng.uniform_int(3);
    const std::size_t cin = groups * (1 + rng.uniform_int(3)), cout = groups * (1 + rng.uniform_int(3));
    const std::size_t k = 1 + rng.uniform_int(3), stride = 1 + rng.uniform_int(2), pad = rng.uniform_int(k);
    const std::size_t h = k + rng.uniform_int(6), w = k + rng.uniform_int(6), n = 1 + rng.uniform_int(2);
    auto x = Tensor<double>::uniform({n, cin, h, w}, rng, -1, 1);
    auto wt = Tensor<double>::uniform({cout, cin / groups, k, k}, rng, -1, 1);
    auto b = Tensor<double>::uniform({cout}, rng, -1, 1);
    auto y = conv2d(Var<double>::constant(x), Var<double>::constant(wt), Var<double>::constant(b),
                    ConvSpec{stride, pad, groups});
    EXPECT_LE(max_abs_diff(y.value(), testref::reference_conv(x, wt, &b, stride, pad, groups)), 1e-12)
        << "trial " << trial;
  }
}

TEST(Property, SoftmaxRowsSumToOne) {
  SplitMix64 rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng.uniform_int(6), cols = 1 + rng.uniform_int(40);
    auto x = Tensor<double>::uniform({rows, cols}, rng, -30, 30);
    const auto y = softmax_lastdim(Var<double>::constant(x)).value();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GE(y[r * cols + c], 0.0);
        s += y[r * cols + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Property, LayerNormZeroMeanUnitVariance) {
  SplitMix64 rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 2 + rng.uniform_int(8);
    auto x = Tensor<double>::uniform({2, c, 3, 3}, rng, -5, 5);
    auto y = layer_norm(Var<double>::constant(x), Var<double>::constant(Tensor<double>::ones({c})),
                        Var<double>::constant(Tensor<double>::zeros({c})))
                 .value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        double m = 0, v = 0;
        for (std::size_t k = 0; k < c; ++k) m += y[(n * c + k) * 9 + p];
        m /= c;
        for (std::size_t k = 0; k < c; ++k) v += std::pow(y[(n * c + k) * 9 + p] - m, 2);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / c, 1.0, 1e-4);
      }
  }
}

TEST(Property, PixelShuffleRoundTrip) {
  SplitMix64 rng(104);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = 1 + rng.uniform_int(3);
    const std::size_t c = 1 + rng.uniform_int(3), h = 1 + rng.uniform_int(4), w = 1 + rng.uniform_int(4);
    auto x = Tensor<double>::uniform({1, c * r * r, h, w}, rng, -1, 1);
    const auto back = pixel_unshuffle(pixel_shuffle(Var<double>::constant(x), r), r).value();
    EXPECT_EQ(back, x);
  }
}

TEST(Property, MasksMatchBruteForce) {
  SplitMix64 rng(105);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t H = 1 + rng.uniform_int(6), W = 1 + rng.uniform_int(6);
    const double g = rng.uniform(0.05, 1.0);
    const auto set = build_masks<double>(H, W, {g});
    for (std::size_t a = 0; a < H * W; ++a)
      for (std::size_t b = 0; b < H * W; ++b) {
        const double d = std::abs(double(a % W) - double(b % W)) + std::abs(double(a / W) - double(b / W));
        EXPECT_NEAR(set.at(0, a, b), std::pow(g, d), 1e-12);
      }
  }
}

TEST(Property, MaskSymmetryDiagonalAndBounds) {
  SplitMix64 rng(106);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t H = 1 + rng.uniform_int(5), W = 1 + rng.uniform_int(5), T = H * W;
    const auto set = build_masks<double>(H, W, {rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)});
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t a = 0; a < T; ++a) {
        EXPECT_EQ(set.at(h, a, a), 1.0);
        for (std::size_t b = 0; b < T; ++b) {
          EXPECT_EQ(set.at(h, a, b), set.at(h, b, a));
          EXPECT_GT(set.at(h, a, b), 0.0);
          EXPECT_LE(set.at(h, a, b), 1.0);
        }
      }
  }
}

TEST(Property, ScheduleAlgebra) {
  SplitMix64 rng(107);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = rng.uniform(0.1, 6.0), b = a + rng.uniform(0.0, 6.0);
    const std::size_t N = 1 + rng.uniform_int(8);
    const DecaySchedule s{a, b, N, MaskMode::f_aware};
    const double f = rng.uniform(1e-3, 1.0);
    const auto g = decay_rates(s, f);
    EXPECT_NEAR(g[0], 1.0 - std::exp2(-a), 1e-15);
    for (std::size_t i = 0; i < N; ++i) {
      EXPECT_GT(g[i], 0.0);
      EXPECT_LT(g[i], 1.0);
      if (i > 0 && f * b > a) {
        EXPECT_GT(g[i], g[i - 1]);
      }
      if (i > 0) {
        const double f2 = std::min(1.0, f + rng.uniform(1e-3, 0.5));
        if (f2 > f) {
          EXPECT_GT(head_decay(s, f2, i), head_decay(s, f, i));
        }
      }
    }
  }
}

TEST(Property, PsfNormalisedForRandomRadii) {
  SplitMix64 rng(108);
  for (int trial = 0; trial < 30; ++trial) {
    const auto k = disk_psf(rng.uniform(0.0, 32.0));
    double s = 0;
    for (double v : k.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Property, IdentityAtInitForRandomInputs) {
  SplitMix64 rng(109);
  const auto m = Model<float>::build(ModelConfig::tiny(), 17);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t h = 4 * (1 + rng.uniform_int(4)), w = 4 * (1 + rng.uniform_int(4));
    const auto x = Tensor<float>::uniform({1 + rng.uniform_int(2), 3, h, w}, rng, 0, 1);
    const double f = rng.uniform(2.0, 22.0);
    EXPECT_EQ(m.forward(Var<float>::constant(x), f).value(), x);
  }
}

TEST(Property, BackwardLinearInSeedGradient) {
  // grad of (2 L) equals 2 grad of L for a random composite graph.
  SplitMix64 rng(110);
  auto x = Var<double>::leaf(Tensor<double>::uniform({1, 2, 4, 4}, rng, -1, 1));
  auto w = Var<double>::leaf(Tensor<double>::uniform({3, 2, 3, 3}, rng, -1, 1));
  auto loss = [&] { return mean(gelu(conv2d(x, w, Var<double>{}, ConvSpec{1, 1, 1}))); };
  backward(loss());
  const auto g1 = x.grad();
  x.zero_grad();
  w.zero_grad();
  backward(scale(loss(), 2.0));
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(x.grad()[i], 2 * g1[i], 1e-14);
}

TEST(Property, MetricsSymmetric) {
  SplitMix64 rng(111);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = Tensor<double>::uniform({3, 16, 16}, rng, 0, 1);
    const auto b = Tensor<double>::uniform({3, 16, 16}, rng, 0, 1);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  }
}

TEST(Property, OverfitMovingAverageDecreases) {
  // 20-step averages over consecutive non-overlapping windows. With 8 pairs
  // and batch 4 each window covers exactly ten shuffled epochs, so batch
  // composition cancels and only training progress remains.
  PairOptions opt;
  opt.height = 64;
  opt.width = 64;
  auto pairs = make_pairs(consecutive_seeds(100, 3), FTargetPolicy::fixed_list({2.0, 4.0, 8.0}), opt);
  pairs.resize(8);
  auto model = Model<float>::build(ModelConfig::tiny(), 21);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.patch = 64;
  cfg.steps = 200;
  cfg.seed = 22;
  Trainer<float> trainer(model, pairs, cfg);
  const auto rec = trainer.run();
  ASSERT_EQ(rec.size(), 200u);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w < 10; ++w) {
    double avg = 0;
    for (std::size_t i = 0; i < 20; ++i) avg += rec[w * 20 + i].loss / 20;
    EXPECT_LT(avg, prev) << "window " << w;
    prev = avg;
  }
}
