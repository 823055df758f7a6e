// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bokeh/image_io.hpp"
#include "bokeh/tensor.hpp"

namespace bokeh {

/// f-number at which every input image is rendered.
inline constexpr double kInputFNumber = 22.0;
/// Widest target aperture; always part of the capture protocol.
inline constexpr double kWidestFNumber = 2.0;
inline constexpr double kMaxPsfRadius = 32.0;
inline constexpr int kPsfSupersample = 4;

/// Disk point spread function. Each tap holds the fraction of a 4x4 grid of
/// sub-pixel samples that falls inside the disk, normalised to unit sum.
/// Radius 0 (or a disk too small to cover any sample) is the 1x1 identity.
inline Tensor<double> disk_psf(double radius) {
  if (!(radius >= 0.0)) throw std::invalid_argument("disk_psf: radius must be >= 0");
  if (radius > kMaxPsfRadius)
    throw std::invalid_argument("disk_psf: radius " + std::to_string(radius) + " exceeds " +
                                std::to_string(kMaxPsfRadius));
  if (radius == 0.0) return Tensor<double>::ones({1, 1});
  const auto half = static_cast<std::size_t>(std::ceil(radius));
  const std::size_t size = 2 * half + 1;
  Tensor<double> k = Tensor<double>::zeros({size, size});
  const double r2 = radius * radius;
  double total = 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kPsfSupersample; ++sy)
        for (int sx = 0; sx < kPsfSupersample; ++sx) {
          const double py = static_cast<double>(y) - static_cast<double>(half) + (sy + 0.5) / kPsfSupersample - 0.5;
          const double px = static_cast<double>(x) - static_cast<double>(half) + (sx + 0.5) / kPsfSupersample - 0.5;
          if (py * py + px * px <= r2) ++inside;
        }
      const double cov = static_cast<double>(inside) / (kPsfSupersample * kPsfSupersample);
      k.raw()[y * size + x] = cov;
      total += cov;
    }
  if (total == 0.0) return Tensor<double>::ones({1, 1});
  for (auto& v : k.data()) v /= total;
  return k;
}

/// Blur radius of a layer: max_radius * (2 / f) * rank / (n_layers - 1).
inline double blur_radius(double f_number, int depth_rank, int n_layers, double max_radius) {
  if (!(f_number >= kWidestFNumber)) throw std::invalid_argument("blur_radius: f-number must be >= 2.0");
  if (n_layers < 2) throw std::invalid_argument("blur_radius: need at least two layers");
  if (depth_rank < 0 || depth_rank >= n_layers) throw std::invalid_argument("blur_radius: depth rank out of range");
  if (!(max_radius >= 0.0)) throw std::invalid_argument("blur_radius: max_radius must be >= 0");
  return max_radius * (kWidestFNumber / f_number) * static_cast<double>(depth_rank) /
         static_cast<double>(n_layers - 1);
}

enum class Padding { zero, edge };

/// 2D correlation of one plane with a centred odd-sized kernel.
inline std::vector<double> convolve_plane(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                          const Tensor<double>& kernel, Padding pad) {
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1);
  if (kh == 1 && kw == 1) {
    std::vector<double> out(plane);
    for (auto& v : out) v *= kernel.raw()[0];
    return out;
  }
  const auto ry = static_cast<std::ptrdiff_t>(kh / 2), rx = static_cast<std::ptrdiff_t>(kw / 2);
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  std::vector<double> out(h * w, 0.0);
  for (std::ptrdiff_t y = 0; y < ih; ++y)
    for (std::ptrdiff_t x = 0; x < iw; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t dy = -ry; dy <= ry; ++dy) {
        std::ptrdiff_t sy = y + dy;
        if (sy < 0 || sy >= ih) {
          if (pad == Padding::zero) continue;
          sy = std::clamp<std::ptrdiff_t>(sy, 0, ih - 1);
        }
        const double* krow = kernel.raw() + static_cast<std::size_t>(dy + ry) * kw;
        for (std::ptrdiff_t dx = -rx; dx <= rx; ++dx) {
          std::ptrdiff_t sx = x + dx;
          if (sx < 0 || sx >= iw) {
            if (pad == Padding::zero) continue;
            sx = std::clamp<std::ptrdiff_t>(sx, 0, iw - 1);
          }
          acc += krow[dx + rx] * plane[static_cast<std::size_t>(sy * iw + sx)];
        }
      }
      out[static_cast<std::size_t>(y * iw + x)] = acc;
    }
  return out;
}

enum class TextureKind { gradient, checker, value_noise };

/// Bright disc added to a layer's texture before blurring. Radius 0 lights a
/// single pixel.
struct PointLight {
  std::size_t y = 0, x = 0;
  double radius = 0.0;
  double intensity = 1.0;
};

struct SceneLayer {
  int depth_rank = 0;
  TextureKind texture_kind = TextureKind::gradient;
  Tensor<double> texture;  // 3 x H x W
  Tensor<double> alpha;    // H x W, values in [0, 1]
  std::vector<PointLight> lights;
};

/// Layered scene. Layer ranks order depth: rank 0 is in focus, larger ranks
/// are farther away and blurrier.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t height = 0, width = 0;
  std::vector<SceneLayer> layers;

  int n_layers() const { return static_cast<int>(layers.size()); }

  void validate() const {
    if (height == 0 || width == 0) throw std::invalid_argument("SceneSpec: empty size");
    if (layers.size() < 2) throw std::invalid_argument("SceneSpec: need at least two layers");
    int in_focus = 0;
    for (const auto& l : layers) {
      if (l.depth_rank < 0 || l.depth_rank >= n_layers())
        throw std::invalid_argument("SceneSpec: depth rank out of range");
      if (l.depth_rank == 0) ++in_focus;
      if (l.texture.shape() != Shape{3, height, width})
        throw ShapeError("SceneSpec: texture must be 3 x H x W, got " + to_string(l.texture.shape()));
      if (l.alpha.shape() != Shape{height, width})
        throw ShapeError("SceneSpec: alpha must be H x W, got " + to_string(l.alpha.shape()));
      for (double a : l.alpha.data())
        if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("SceneSpec: alpha outside [0, 1]");
      for (const auto& p : l.lights)
        if (p.y >= height || p.x >= width) throw std::invalid_argument("SceneSpec: light outside the frame");
    }
    if (in_focus != 1) throw std::invalid_argument("SceneSpec: exactly one layer must have depth rank 0");
  }

  /// Procedural scene: a full-frame background at the farthest rank carrying
  /// the point lights, with shaped foreground layers in front of it.
  static SceneSpec random(std::uint64_t seed, std::size_t height, std::size_t width, int n_layers = 3,
                          int n_point_lights = 6);
};

namespace detail {

inline std::array<double, 3> random_color(SplitMix64& rng) {
  return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
}

inline Tensor<double> make_texture(TextureKind kind, SplitMix64& rng, std::size_t h, std::size_t w) {
  Tensor<double> t = Tensor<double>::zeros({3, h, w});
  const auto c0 = random_color(rng), c1 = random_color(rng);
  const std::size_t hw = h * w;
  switch (kind) {
    case TextureKind::gradient: {
      const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double dy = std::sin(angle), dx = std::cos(angle);
      const double span = std::abs(dy) * h + std::abs(dx) * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double s = (dy * (y - h / 2.0) + dx * (x - w / 2.0)) / span + 0.5;
          s = std::clamp(s, 0.0, 1.0);
          for (std::size_t c = 0; c < 3; ++c) t.raw()[c * hw + y * w + x] = c0[c] + (c1[c] - c0[c]) * s;
        }
      break;
    }
    case TextureKind::checker: {
      const std::size_t period = 3 + rng.uniform_int(8);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const bool odd = ((y / period) + (x / period)) % 2 == 1;
          for (std::size_t c = 0; c < 3; ++c) t.raw()[c * hw + y * w + x] = odd ? c1[c] : c0[c];
        }
      break;
    }
    case TextureKind::value_noise: {
      const std::size_t cell = 4 + rng.uniform_int(9);
      const std::size_t gy = h / cell + 2, gx = w / cell + 2;
      std::vector<double> lattice(gy * gx);
      for (auto& v : lattice) v = rng.uniform();
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
          const auto iy = static_cast<std::size_t>(fy), ix = static_cast<std::size_t>(fx);
          double ty = fy - iy, tx = fx - ix;
          ty = ty * ty * (3 - 2 * ty);
          tx = tx * tx * (3 - 2 * tx);
          const double top = lattice[iy * gx + ix] * (1 - tx) + lattice[iy * gx + ix + 1] * tx;
          const double bot = lattice[(iy + 1) * gx + ix] * (1 - tx) + lattice[(iy + 1) * gx + ix + 1] * tx;
          const double s = top * (1 - ty) + bot * ty;
          for (std::size_t c = 0; c < 3; ++c) t.raw()[c * hw + y * w + x] = c0[c] + (c1[c] - c0[c]) * s;
        }
      break;
    }
  }
  return t;
}

// Hard-edged disc, ellipse or rectangle.
inline Tensor<double> make_shape_alpha(SplitMix64& rng, std::size_t h, std::size_t w) {
  Tensor<double> a = Tensor<double>::zeros({h, w});
  const double cy = rng.uniform(0.25, 0.75) * h, cx = rng.uniform(0.25, 0.75) * w;
  const double ry = rng.uniform(0.15, 0.35) * h, rx = rng.uniform(0.15, 0.35) * w;
  const bool rect = rng.uniform() < 0.4;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double ny = (y + 0.5 - cy) / ry, nx = (x + 0.5 - cx) / rx;
      const bool in = rect ? (std::abs(ny) <= 1.0 && std::abs(nx) <= 1.0) : (ny * ny + nx * nx <= 1.0);
      a.raw()[y * w + x] = in ? 1.0 : 0.0;
    }
  return a;
}

}  // namespace detail

inline SceneSpec SceneSpec::random(std::uint64_t seed, std::size_t height, std::size_t width, int n_layers,
                                   int n_point_lights) {
  if (n_layers < 2) throw std::invalid_argument("SceneSpec::random: need at least two layers");
  if (height == 0 || width == 0) throw std::invalid_argument("SceneSpec::random: empty size");
  SplitMix64 rng(seed);
  SceneSpec s;
  s.seed = seed;
  s.height = height;
  s.width = width;
  for (int rank = 0; rank < n_layers; ++rank) {
    SceneLayer l;
    l.depth_rank = rank;
    l.texture_kind = static_cast<TextureKind>(rng.uniform_int(3));
    l.texture = detail::make_texture(l.texture_kind, rng, height, width);
    const bool background = rank == n_layers - 1;
    l.alpha = background ? Tensor<double>::ones({height, width}) : detail::make_shape_alpha(rng, height, width);
    if (background)
      for (int i = 0; i < n_point_lights; ++i) {
        PointLight p;
        p.y = rng.uniform_int(height);
        p.x = rng.uniform_int(width);
        p.radius = rng.uniform(0.0, 1.5);
        p.intensity = rng.uniform(0.6, 1.0);
        l.lights.push_back(p);
      }
    s.layers.push_back(std::move(l));
  }
  return s;
}

struct RenderOptions {
  double max_radius = 8.0;
  /// Forces every blur radius to 0 (infinitely deep focus).
  bool force_sharp = false;
  /// Clamp the composite into [0, 1].
  bool clamp = true;
};

namespace detail {

inline std::vector<double> lit_texture(const SceneLayer& l, std::size_t h, std::size_t w) {
  std::vector<double> tex(l.texture.data().begin(), l.texture.data().end());
  const std::size_t hw = h * w;
  for (const auto& p : l.lights) {
    const auto r = static_cast<std::ptrdiff_t>(std::floor(p.radius));
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
      for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
        if (static_cast<double>(dy * dy + dx * dx) > p.radius * p.radius) continue;
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(p.y) + dy, x = static_cast<std::ptrdiff_t>(p.x) + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) continue;
        for (std::size_t c = 0; c < 3; ++c) tex[c * hw + static_cast<std::size_t>(y) * w + x] += p.intensity;
      }
  }
  return tex;
}

}  // namespace detail

/// Back-to-front composite. Each layer's premultiplied colour and its alpha
/// are blurred with the layer's disk PSF (edge-clamped borders) and laid
/// over what is behind it.
template <class T = float>
Tensor<T> render_scene(const SceneSpec& spec, double f_number, const RenderOptions& opt = {}) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, hw = h * w;
  std::vector<const SceneLayer*> order;
  for (const auto& l : spec.layers) order.push_back(&l);
  std::stable_sort(order.begin(), order.end(),
                   [](const SceneLayer* a, const SceneLayer* b) { return a->depth_rank > b->depth_rank; });
  std::vector<double> acc(3 * hw, 0.0);
  for (const SceneLayer* l : order) {
    const double r = opt.force_sharp ? 0.0 : blur_radius(f_number, l->depth_rank, spec.n_layers(), opt.max_radius);
    const Tensor<double> k = disk_psf(r);
    std::vector<double> alpha(l->alpha.data().begin(), l->alpha.data().end());
    const auto tex = detail::lit_texture(*l, h, w);
    const auto blurred_alpha = convolve_plane(alpha, h, w, k, Padding::edge);
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> premul(hw);
      for (std::size_t p = 0; p < hw; ++p) premul[p] = tex[c * hw + p] * alpha[p];
      const auto blurred = convolve_plane(premul, h, w, k, Padding::edge);
      for (std::size_t p = 0; p < hw; ++p)
        acc[c * hw + p] = blurred[p] + (1.0 - blurred_alpha[p]) * acc[c * hw + p];
    }
  }
  Tensor<T> out = Tensor<T>::zeros({3, h, w});
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.raw()[i] = static_cast<T>(opt.clamp ? std::clamp(acc[i], 0.0, 1.0) : acc[i]);
  return out;
}

/// Alpha of the in-focus layer.
inline const Tensor<double>& foreground_alpha(const SceneSpec& spec) {
  for (const auto& l : spec.layers)
    if (l.depth_rank == 0) return l.alpha;
  throw std::invalid_argument("foreground_alpha: no in-focus layer");
}

/// Pixels untouched by any non-background layer even at the widest aperture.
inline std::vector<bool> background_mask(const SceneSpec& spec, const RenderOptions& opt = {}) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const int far = spec.n_layers() - 1;
  std::vector<bool> mask(h * w, true);
  for (const auto& l : spec.layers) {
    if (l.depth_rank == far) continue;
    const auto k = disk_psf(blur_radius(kWidestFNumber, l.depth_rank, spec.n_layers(), opt.max_radius));
    std::vector<double> alpha(l.alpha.data().begin(), l.alpha.data().end());
    const auto b = convolve_plane(alpha, h, w, k, Padding::edge);
    for (std::size_t p = 0; p < h * w; ++p)
      if (b[p] > 0.0) mask[p] = false;
  }
  return mask;
}

/// f-number on the third-stop grid: 2 * 2^(k / 6).
inline double third_stop(int k) { return kWidestFNumber * std::exp2(static_cast<double>(k) / 6.0); }

/// Grid index of an f-number, or nullopt when it is off the grid.
inline std::optional<int> third_stop_index(double f_number, double tol = 1e-9) {
  if (!(f_number > 0.0)) return std::nullopt;
  const double k = 6.0 * std::log2(f_number / kWidestFNumber);
  const double r = std::round(k);
  if (std::abs(k - r) > tol) return std::nullopt;
  return static_cast<int>(r);
}

struct SamplePair {
  Tensor<float> input;
  Tensor<float> target;
  double f_input = kInputFNumber;
  double f_target = kWidestFNumber;
  std::uint64_t seed = 0;

  /// Deblurring direction: images and f labels trade places.
  SamplePair inverted() const { return {target, input, f_target, f_input, seed}; }
};

/// How target f-numbers are chosen per scene.
struct FTargetPolicy {
  enum class Kind { protocol, fixed } kind = Kind::protocol;
  std::vector<double> fixed;  // used when kind == fixed

  /// Three distinct random third-stops in [2.2, 20] plus 2.0.
  static FTargetPolicy protocol_policy() { return {}; }
  static FTargetPolicy fixed_list(std::vector<double> fs) { return {Kind::fixed, std::move(fs)}; }
};

// Third-stop indices covering [2.2, 20.0].
inline constexpr int kProtocolMinStop = 1;
inline constexpr int kProtocolMaxStop = 19;
inline constexpr int kProtocolRandomTargets = 3;

inline std::vector<double> choose_f_targets(const FTargetPolicy& policy, std::uint64_t scene_seed) {
  if (policy.kind == FTargetPolicy::Kind::fixed) {
    if (policy.fixed.empty()) throw std::invalid_argument("f-target policy: empty fixed list");
    for (double f : policy.fixed)
      if (!(f >= kWidestFNumber && f <= kInputFNumber))
        throw std::invalid_argument("f-target policy: f-number out of [2, 22]");
    return policy.fixed;
  }
  SplitMix64 rng(derive_seed(scene_seed, 0xF57095ULL));
  std::vector<int> pool;
  for (int k = kProtocolMinStop; k <= kProtocolMaxStop; ++k) pool.push_back(k);
  std::vector<double> out;
  for (int i = 0; i < kProtocolRandomTargets; ++i) {
    const std::size_t j = rng.uniform_int(pool.size());
    out.push_back(third_stop(pool[j]));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }
  out.push_back(kWidestFNumber);
  return out;
}

struct PairOptions {
  std::size_t height = 64, width = 64;
  int n_layers = 3;
  int n_point_lights = 6;
  RenderOptions render{};
  bool invert = false;
};

/// Renders every pair of one scene.
inline std::vector<SamplePair> make_scene_pairs(const SceneSpec& spec, const FTargetPolicy& policy,
                                                const RenderOptions& render = {}, bool invert = false) {
  const auto input = render_scene<float>(spec, kInputFNumber, render);
  std::vector<SamplePair> out;
  for (double f : choose_f_targets(policy, spec.seed)) {
    SamplePair p{input, render_scene<float>(spec, f, render), kInputFNumber, f, spec.seed};
    out.push_back(invert ? p.inverted() : std::move(p));
  }
  return out;
}

/// Pairs for a list of scene seeds, in seed order.
inline std::vector<SamplePair> make_pairs(const std::vector<std::uint64_t>& seeds, const FTargetPolicy& policy,
                                          const PairOptions& opt = {}) {
  std::vector<SamplePair> out;
  for (auto seed : seeds) {
    const auto spec = SceneSpec::random(seed, opt.height, opt.width, opt.n_layers, opt.n_point_lights);
    for (auto& p : make_scene_pairs(spec, policy, opt.render, opt.invert)) out.push_back(std::move(p));
  }
  return out;
}

/// Seeds base, base + 1, ... for n scenes.
inline std::vector<std::uint64_t> consecutive_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

// ---------------------------------------------------------------------------
// Dataset directory: scenes/<seed>/input_f22.png, scenes/<seed>/target_f<N>.png
// and manifest.csv with one row per pair.

inline constexpr const char* kManifestHeader = "seed,f_input,f_target,input_path,target_path";

inline std::string f_label(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", f);
  return buf;
}

struct ManifestRow {
  std::uint64_t seed = 0;
  double f_input = kInputFNumber;
  double f_target = kWidestFNumber;
  std::string input_path;
  std::string target_path;
};

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot create '" + path.string() + "'");
  out << kManifestHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    out << r.seed << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.f_input);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.f_target);
    out << buf << ',' << r.input_path << ',' << r.target_path << '\n';
  }
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw std::runtime_error(path.string() + ": bad manifest header");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 5)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    try {
      ManifestRow r;
      r.seed = std::stoull(cols[0]);
      r.f_input = std::stod(cols[1]);
      r.f_target = std::stod(cols[2]);
      r.input_path = cols[3];
      r.target_path = cols[4];
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

/// Renders `seeds` into `dir` with 16-bit PNGs and writes the manifest.
inline std::vector<ManifestRow> write_dataset(const std::filesystem::path& dir,
                                              const std::vector<std::uint64_t>& seeds,
                                              const FTargetPolicy& policy, const PairOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  for (auto seed : seeds) {
    const auto spec = SceneSpec::random(seed, opt.height, opt.width, opt.n_layers, opt.n_point_lights);
    const std::string scene = "scenes/" + std::to_string(seed) + "/";
    const std::string input_rel = scene + "input_f22.png";
    const auto pairs = make_scene_pairs(spec, policy, opt.render, false);
    write_image(dir / input_rel, pairs.front().input, BitDepth::k16);
    for (const auto& p : pairs) {
      const std::string target_rel = scene + "target_f" + f_label(p.f_target) + ".png";
      write_image(dir / target_rel, p.target, BitDepth::k16);
      rows.push_back({seed, p.f_input, p.f_target, input_rel, target_rel});
    }
  }
  write_manifest(dir / "manifest.csv", rows);
  return rows;
}

/// Loads every pair listed in `dir/manifest.csv`.
inline std::vector<SamplePair> load_dataset(const std::filesystem::path& dir, bool invert = false) {
  std::vector<SamplePair> out;
  for (const auto& r : read_manifest(dir / "manifest.csv")) {
    SamplePair p{read_image(dir / r.input_path), read_image(dir / r.target_path), r.f_input, r.f_target, r.seed};
    if (p.input.shape() != p.target.shape())
      throw ShapeError("dataset: input and target sizes differ for seed " + std::to_string(r.seed));
    out.push_back(invert ? p.inverted() : std::move(p));
  }
  if (out.empty()) throw std::runtime_error("dataset '" + dir.string() + "' is empty");
  return out;
}

}  // namespace bokeh
