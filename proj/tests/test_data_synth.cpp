// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "bokeh/data_synth.hpp"

using namespace bokeh;
namespace fs = std::filesystem;

namespace {

double sum(const Tensor<double>& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s;
}

// Two-layer scene: empty in-focus layer over a black background holding one
// point light.
SceneSpec light_scene(std::size_t y, std::size_t x, double intensity, double radius) {
  SceneSpec s;
  s.seed = 1;
  s.height = 40;
  s.width = 40;
  SceneLayer fg{0, TextureKind::gradient, Tensor<double>::zeros({3, 40, 40}), Tensor<double>::zeros({40, 40}), {}};
  SceneLayer bg{1, TextureKind::gradient, Tensor<double>::zeros({3, 40, 40}), Tensor<double>::ones({40, 40}), {}};
  bg.lights.push_back({y, x, radius, intensity});
  s.layers = {fg, bg};
  return s;
}

double mean_background_laplacian(const Tensor<float>& img, const std::vector<bool>& mask) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) {
        if (!mask[y * w + x]) continue;
        const float* p = img.raw() + c * h * w;
        acc += std::abs(4.0 * p[y * w + x] - p[(y - 1) * w + x] - p[(y + 1) * w + x] - p[y * w + x - 1] -
                        p[y * w + x + 1]);
        ++n;
      }
  return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST(DiskPsf, RadiusTwoTaps) {
  const auto k = disk_psf(2.0);
  ASSERT_EQ(k.shape(), (Shape{5, 5}));
  EXPECT_NEAR(k[2 * 5 + 2], 1.0 / 13.0, 1e-15);
  EXPECT_NEAR(k[0 * 5 + 2], 0.038461538461538464, 1e-15);
  EXPECT_EQ(k[0], 0.0);
  EXPECT_NEAR(k[1 * 5 + 1], 1.0 / 13.0, 1e-15);
}

TEST(DiskPsf, FractionalRadius) {
  const auto k = disk_psf(2.5);
  ASSERT_EQ(k.shape(), (Shape{7, 7}));
  EXPECT_NEAR(k[3 * 7 + 3], 0.05063291139240506, 1e-15);
}

TEST(DiskPsf, NormalisedAndSymmetric) {
  for (double r : {0.3, 1.0, 1.7, 4.2, 8.0, 17.5, 32.0}) {
    const auto k = disk_psf(r);
    EXPECT_NEAR(sum(k), 1.0, 1e-9) << r;
    const std::size_t n = k.dim(0);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        EXPECT_EQ(k[y * n + x], k[(n - 1 - y) * n + x]);
        EXPECT_EQ(k[y * n + x], k[x * n + y]);
      }
  }
}

TEST(DiskPsf, RadiusZeroIsIdentity) {
  const auto k = disk_psf(0.0);
  EXPECT_EQ(k.shape(), (Shape{1, 1}));
  EXPECT_EQ(k[0], 1.0);
  std::vector<double> plane{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(convolve_plane(plane, 2, 3, k, Padding::zero), plane);
}

TEST(DiskPsf, Errors) {
  EXPECT_THROW(disk_psf(-1.0), std::invalid_argument);
  EXPECT_THROW(disk_psf(33.0), std::invalid_argument);
}

TEST(BlurRadius, Examples) {
  EXPECT_DOUBLE_EQ(blur_radius(4.0, 2, 3, 8.0), 4.0);
  EXPECT_DOUBLE_EQ(blur_radius(2.0, 0, 3, 8.0), 0.0);
  EXPECT_DOUBLE_EQ(blur_radius(2.0, 2, 3, 8.0) / blur_radius(22.0, 2, 3, 8.0), 11.0);
  EXPECT_THROW(blur_radius(1.8, 1, 3, 8.0), std::invalid_argument);
  EXPECT_THROW(blur_radius(4.0, 3, 3, 8.0), std::invalid_argument);
  EXPECT_THROW(blur_radius(4.0, 0, 1, 8.0), std::invalid_argument);
}

TEST(ThirdStops, Grid) {
  EXPECT_DOUBLE_EQ(third_stop(0), 2.0);
  EXPECT_NEAR(third_stop(6), 4.0, 1e-12);
  EXPECT_NEAR(third_stop(3), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_EQ(third_stop_index(third_stop(13)), 13);
  EXPECT_FALSE(third_stop_index(2.1).has_value());
}

TEST(Render, PointLightEnergyConserved) {
  RenderOptions opt;
  opt.clamp = false;
  for (double f : {2.0, 2.8, 5.6, 22.0}) {
    const auto img = render_scene<double>(light_scene(20, 19, 0.8, 0.0), f, opt);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 1600; ++i) s += img[c * 1600 + i];
      EXPECT_NEAR(s, 0.8, 1e-6) << "f/" << f;
    }
  }
}

TEST(Render, ForceSharpEqualsUnblurredComposite) {
  const auto spec = SceneSpec::random(5, 32, 32);
  RenderOptions sharp;
  sharp.force_sharp = true;
  const auto a = render_scene<double>(spec, 2.0, sharp);
  const auto b = render_scene<double>(spec, 22.0, sharp);
  EXPECT_EQ(a, b);
  // Unblurred over-compositing by hand.
  std::vector<double> acc(3 * 32 * 32, 0.0);
  for (int rank = spec.n_layers() - 1; rank >= 0; --rank)
    for (const auto& l : spec.layers) {
      if (l.depth_rank != rank) continue;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p) {
          double tex = l.texture[c * 1024 + p];
          for (const auto& li : l.lights) {
            const double dy = double(p / 32) - double(li.y), dx = double(p % 32) - double(li.x);
            if (dy * dy + dx * dx <= li.radius * li.radius) tex += li.intensity;
          }
          acc[c * 1024 + p] = l.alpha[p] * tex + (1 - l.alpha[p]) * acc[c * 1024 + p];
        }
    }
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(a[i], std::clamp(acc[i], 0.0, 1.0), 1e-12);
}

TEST(Render, InFocusPixelsInvariantAcrossF) {
  const auto spec = SceneSpec::random(6, 48, 48);
  const auto& alpha = foreground_alpha(spec);
  const auto ref = render_scene<float>(spec, 22.0);
  for (double f : {2.0, 3.2, 8.0}) {
    const auto img = render_scene<float>(spec, f);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 48 * 48; ++p)
        if (alpha[p] == 1.0) {
          EXPECT_EQ(img[c * 2304 + p], ref[c * 2304 + p]);
        }
  }
}

TEST(Render, DeterministicBitEquality) {
  const auto a = render_scene<float>(SceneSpec::random(9, 32, 40), 2.8);
  const auto b = render_scene<float>(SceneSpec::random(9, 32, 40), 2.8);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == render_scene<float>(SceneSpec::random(10, 32, 40), 2.8));
}

// Mean |Laplacian| is not monotone in f for every scene: a hard disk's
// frequency response has zeros and sidelobes, so a periodic texture can regain
// contrast between stops, and pixel-sized lights alias. What holds for every
// scene is the trend between the end stops, with bounded local rises.
TEST(Render, BackgroundSharpnessTrend) {
  const double stops[] = {22.0, 16.0, 11.0, 8.0, 5.6, 4.0, 2.8, 2.0};
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const auto spec = SceneSpec::random(seed, 64, 64);
    const auto mask = background_mask(spec);
    if (std::count(mask.begin(), mask.end(), true) < 50) continue;
    double lap[8];
    for (int i = 0; i < 8; ++i) lap[i] = mean_background_laplacian(render_scene<float>(spec, stops[i]), mask);
    EXPECT_LT(lap[7], lap[0]) << "seed " << seed;
    for (int i = 1; i < 8; ++i) EXPECT_LE(lap[i] - lap[i - 1], 0.15 * lap[0]) << "seed " << seed << " f/" << stops[i];
    ++checked;
  }
  EXPECT_GT(checked, 40);
}

TEST(Render, CheckerRegainsContrastBetweenStops) {
  // Two-pixel checker on the far layer, nothing in front: its contrast all but
  // vanishes near r = 1.8 and returns by r = 2.2 (sidelobe of the disk response).
  SceneSpec s;
  s.seed = 1;
  s.height = s.width = 48;
  Tensor<double> tex = Tensor<double>::zeros({3, 48, 48});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x) tex[(c * 48 + y) * 48 + x] = ((y / 2 + x / 2) % 2) ? 0.8 : 0.2;
  s.layers = {{0, TextureKind::checker, Tensor<double>::zeros({3, 48, 48}), Tensor<double>::zeros({48, 48}), {}},
              {1, TextureKind::checker, tex, Tensor<double>::ones({48, 48}), {}}};
  const std::vector<bool> all(48 * 48, true);
  RenderOptions opt;
  opt.max_radius = 4.0;
  double prev = std::numeric_limits<double>::infinity();
  int rises = 0;
  for (int k = 18; k >= 0; --k) {
    const double lap = mean_background_laplacian(render_scene<float>(s, third_stop(k), opt), all);
    if (lap > prev) ++rises;
    prev = lap;
  }
  EXPECT_GT(rises, 0);
}

TEST(SceneSpec, Validation) {
  auto s = SceneSpec::random(1, 16, 16);
  s.layers[0].depth_rank = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SceneSpec::random(1, 16, 16);
  s.layers[0].alpha[0] = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SceneSpec::random(1, 16, 16);
  s.layers[0].texture = Tensor<double>::zeros({3, 8, 16});
  EXPECT_THROW(s.validate(), ShapeError);
  EXPECT_THROW(SceneSpec::random(1, 16, 16, 1), std::invalid_argument);
}

TEST(Pairs, ProtocolTargets) {
  const auto fs = choose_f_targets(FTargetPolicy::protocol_policy(), 17);
  ASSERT_EQ(fs.size(), 4u);
  EXPECT_EQ(fs.back(), 2.0);
  std::set<double> distinct(fs.begin(), fs.end());
  EXPECT_EQ(distinct.size(), 4u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_GE(fs[i], 2.2);
    EXPECT_LE(fs[i], 20.0);
    EXPECT_TRUE(third_stop_index(fs[i]).has_value());
  }
  EXPECT_EQ(fs, choose_f_targets(FTargetPolicy::protocol_policy(), 17));
}

TEST(Pairs, FourPerSceneAndInversion) {
  PairOptions opt;
  opt.height = 16;
  opt.width = 16;
  const auto pairs = make_pairs(consecutive_seeds(3, 2), FTargetPolicy::protocol_policy(), opt);
  ASSERT_EQ(pairs.size(), 8u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.f_input, 22.0);
    EXPECT_EQ(p.input.shape(), (Shape{3, 16, 16}));
  }
  EXPECT_EQ(pairs[3].f_target, 2.0);
  opt.invert = true;
  const auto inv = make_pairs(consecutive_seeds(3, 2), FTargetPolicy::protocol_policy(), opt);
  EXPECT_EQ(inv[0].input, pairs[0].target);
  EXPECT_EQ(inv[0].target, pairs[0].input);
  EXPECT_EQ(inv[0].f_target, 22.0);
  EXPECT_THROW(choose_f_targets(FTargetPolicy::fixed_list({1.0}), 0), std::invalid_argument);
}

TEST(Dataset, WriteAndLoadRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "bokeh_test_dataset";
  fs::remove_all(dir);
  PairOptions opt;
  opt.height = 16;
  opt.width = 24;
  const auto rows = write_dataset(dir, {4, 5}, FTargetPolicy::fixed_list({2.0, 5.6}), opt);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "scenes/4/input_f22.png"));
  EXPECT_TRUE(fs::exists(dir / "scenes/5/target_f5.60.png"));
  const auto loaded = load_dataset(dir);
  const auto direct = make_pairs({4, 5}, FTargetPolicy::fixed_list({2.0, 5.6}), opt);
  ASSERT_EQ(loaded.size(), direct.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].seed, direct[i].seed);
    EXPECT_EQ(loaded[i].f_target, direct[i].f_target);
    EXPECT_LE(max_abs_diff(loaded[i].target, direct[i].target), 1.0f / 131070.0f + 1e-7f);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ManifestErrors) {
  const fs::path dir = fs::temp_directory_path() / "bokeh_test_bad_manifest";
  fs::create_directories(dir);
  {
    std::ofstream(dir / "manifest.csv") << "seed,f\n";
  }
  EXPECT_THROW(load_dataset(dir), std::runtime_error);
  {
    std::ofstream(dir / "manifest.csv") << kManifestHeader << "\n1,22,abc,a.png,b.png\n";
  }
  EXPECT_THROW(read_manifest(dir / "manifest.csv"), std::runtime_error);
  fs::remove_all(dir);
}
