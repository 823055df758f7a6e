// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bokeh/ops.hpp"

namespace bokeh {

// ---------------------------------------------------------------------------
// Aperture encoding

/// f-number that the literal encoding divides by; the widest f-number in the
/// synthetic data (the capture f-stop of the input image).
inline constexpr double kLiteralMaxFNumber = 22.0;

struct ApertureEncoding {
  double f_number = 2.0;
  double reference_f_number = 2.0;
  double f = 1.0;  // control scalar in (0, 1]
};

/// Maps a requested f-number to the control scalar.
///
/// Default: the fractional aperture diameter, reference / f_number, which is
/// 1 at the reference (widest) f-number and shrinks as the lens stops down.
/// With `literal` set, f = f_number / 22, i.e. av / av_max taken verbatim.
inline ApertureEncoding aperture_encode(double f_number, double reference = 2.0,
                                        bool literal = false) {
  if (!(reference > 0.0))
    throw std::invalid_argument("aperture_encode: reference f-number must be positive");
  if (!(f_number >= reference))
    throw std::invalid_argument("aperture_encode: f/" + std::to_string(f_number) +
                                " is wider than the reference f/" +
                                std::to_string(reference));
  ApertureEncoding e{f_number, reference, 0.0};
  if (literal) {
    if (f_number > kLiteralMaxFNumber)
      throw std::invalid_argument("aperture_encode: literal encoding limited to f/22");
    e.f = f_number / kLiteralMaxFNumber;
  } else {
    e.f = reference / f_number;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Decay schedule

enum class MaskMode { maskless, single_mask, multi_mask, f_aware };

inline std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::maskless: return "maskless";
    case MaskMode::single_mask: return "single_mask";
    case MaskMode::multi_mask: return "multi_mask";
    case MaskMode::f_aware: return "f_aware";
  }
  return "?";
}

/// Accepts the canonical names plus the CLI short forms.
inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "maskless") return MaskMode::maskless;
  if (s == "single" || s == "single_mask" || s == "single-mask") return MaskMode::single_mask;
  if (s == "multi" || s == "multi_mask" || s == "multi-mask") return MaskMode::multi_mask;
  if (s == "f-aware" || s == "f_aware") return MaskMode::f_aware;
  throw std::invalid_argument("unknown mask mode '" + s + "'");
}

struct DecaySchedule {
  double a = 2.0;  // smallest mask
  double b = 6.0;  // largest mask
  std::size_t n_heads = 1;
  MaskMode mode = MaskMode::f_aware;

  void validate() const {
    if (!(a > 0.0) || !(b >= a))
      throw std::invalid_argument("DecaySchedule: need 0 < a <= b");
    if (n_heads < 1) throw std::invalid_argument("DecaySchedule: need at least one head");
  }
};

/// lambda_i(f) = 1 - 2^(-a - (f b - a) i / N).
inline double head_decay(const DecaySchedule& s, double f, std::size_t head) {
  const double i = static_cast<double>(head);
  const double n = static_cast<double>(s.n_heads);
  return 1.0 - std::exp2(-s.a - (f * s.b - s.a) * i / n);
}

/// Per-head decay rates gamma_i for the schedule's mode.
inline std::vector<double> decay_rates(const DecaySchedule& s, double f) {
  s.validate();
  std::vector<double> g(s.n_heads);
  switch (s.mode) {
    case MaskMode::maskless:
      std::fill(g.begin(), g.end(), 1.0);
      break;
    case MaskMode::single_mask:
      std::fill(g.begin(), g.end(), head_decay(s, 1.0, 0));
      break;
    case MaskMode::multi_mask:
      for (std::size_t i = 0; i < s.n_heads; ++i) g[i] = head_decay(s, 1.0, i);
      break;
    case MaskMode::f_aware:
      if (!(f > 0.0 && f <= 1.0))
        throw std::invalid_argument("decay_rates: f = " + std::to_string(f) +
                                    " outside (0, 1]");
      for (std::size_t i = 0; i < s.n_heads; ++i) g[i] = head_decay(s, f, i);
      break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Manhattan decay masks

/// Planar masks use plain coordinate differences; torus masks wrap them,
/// which makes the masks invariant under cyclic translation.
enum class MaskTopology { planar, torus };

inline constexpr std::size_t kDefaultTokenCap = 4096;

template <class T>
struct DecayMaskSet {
  std::size_t height = 0, width = 0;
  std::vector<double> gammas;
  Tensor<T> masks;  // heads x (H W) x (H W), row-major token order

  std::size_t tokens() const { return height * width; }
  T at(std::size_t head, std::size_t n, std::size_t m) const {
    const std::size_t t = tokens();
    return masks[(head * t + n) * t + m];
  }
};

inline std::size_t manhattan(std::size_t n, std::size_t m, std::size_t width,
                             std::size_t height, MaskTopology topo) {
  const long yn = static_cast<long>(n / width), xn = static_cast<long>(n % width);
  const long ym = static_cast<long>(m / width), xm = static_cast<long>(m % width);
  long dy = std::labs(yn - ym), dx = std::labs(xn - xm);
  if (topo == MaskTopology::torus) {
    dy = std::min(dy, static_cast<long>(height) - dy);
    dx = std::min(dx, static_cast<long>(width) - dx);
  }
  return static_cast<std::size_t>(dy + dx);
}

/// D_i[n, m] = gamma_i ^ manhattan(n, m) for every head.
template <class T>
DecayMaskSet<T> build_masks(std::size_t height, std::size_t width,
                            const std::vector<double>& gammas,
                            MaskTopology topo = MaskTopology::planar,
                            std::size_t token_cap = kDefaultTokenCap) {
  if (height == 0 || width == 0) throw std::invalid_argument("build_masks: empty grid");
  const std::size_t t = height * width;
  if (t > token_cap)
    throw std::invalid_argument("build_masks: " + std::to_string(t) +
                                " tokens exceed cap " + std::to_string(token_cap));
  if (gammas.empty()) throw std::invalid_argument("build_masks: no heads");
  for (double g : gammas)
    if (!(g > 0.0 && g <= 1.0))
      throw std::invalid_argument("build_masks: decay rate outside (0, 1]");

  DecayMaskSet<T> set{height, width, gammas, Tensor<T>({gammas.size(), t, t})};
  const std::size_t max_d = height + width;
  std::vector<T> powers(max_d + 1);
  for (std::size_t h = 0; h < gammas.size(); ++h) {
    for (std::size_t d = 0; d <= max_d; ++d)
      powers[d] = static_cast<T>(std::pow(gammas[h], static_cast<double>(d)));
    T* m = set.masks.raw() + h * t * t;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        m[i * t + j] = powers[manhattan(i, j, width, height, topo)];
  }
  return set;
}

/// Memoises mask sets keyed by grid, topology and decay rates quantised to
/// 12 decimal digits. Concurrent lookups are safe; insertion takes the
/// exclusive lock.
template <class T>
class MaskCache {
 public:
  using Key = std::tuple<std::size_t, std::size_t, int, std::vector<long long>>;

  std::shared_ptr<const DecayMaskSet<T>> get(std::size_t height, std::size_t width,
                                             const std::vector<double>& gammas,
                                             MaskTopology topo = MaskTopology::planar) {
    Key key{height, width, static_cast<int>(topo), quantize(gammas)};
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto set = std::make_shared<const DecayMaskSet<T>>(
        build_masks<T>(height, width, gammas, topo, token_cap_));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(std::move(key), std::move(set));
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  std::size_t hits() const { return hits_; }
  void set_token_cap(std::size_t cap) { token_cap_ = cap; }

  static std::vector<long long> quantize(const std::vector<double>& g) {
    std::vector<long long> q(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) q[i] = std::llround(g[i] * 1e12);
    return q;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const DecayMaskSet<T>>> entries_;
  std::atomic<std::size_t> hits_{0};
  std::size_t token_cap_ = kDefaultTokenCap;
};

// ---------------------------------------------------------------------------
// Aperture-aware attention

template <class T>
struct AttentionParams {
  Var<T> wq, bq, wk, bk, wv, bv;  // 1x1 projections, C x C x 1 x 1
  Var<T> wo, bo;                  // output projection
  Var<T> lepe_w, lepe_b;          // 3x3 depthwise over V, C x 1 x 3 x 3
};

struct AttentionOptions {
  MaskTopology topology = MaskTopology::planar;
  std::size_t token_cap = kDefaultTokenCap;
};

/// Multi-head attention over the H x W token grid with per-head Manhattan
/// decay masks:
///   A_i = softmax(Q_i K_i^T / sqrt(d)) (elementwise) D_i(f),  out_i = A_i V_i
/// then heads are concatenated, a depthwise 3x3 conv of V is added and the
/// output projection is applied. `f` holds one control scalar per batch item
/// (or a single value shared by the batch).
template <class T>
Var<T> aaa_forward(const Var<T>& x, std::span<const double> f,
                   const AttentionParams<T>& p, const DecaySchedule& schedule,
                   MaskCache<T>* cache = nullptr, AttentionOptions opt = {}) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "aaa_forward: expected NxCxHxW, got " + to_string(s));
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3], Tk = H * W;
  const std::size_t heads = schedule.n_heads;
  if (heads == 0 || C % heads != 0)
    throw std::invalid_argument("aaa_forward: " + std::to_string(C) +
                                " channels not divisible by " +
                                std::to_string(heads) + " heads");
  if (f.size() != 1 && f.size() != N)
    throw std::invalid_argument("aaa_forward: need 1 or N aperture values");
  const std::size_t d = C / heads;

  Var<T> q = conv2d(x, p.wq, p.bq);
  Var<T> k = conv2d(x, p.wk, p.bk);
  Var<T> v = conv2d(x, p.wv, p.bv);
  // N x C x H x W is already N x heads x d x T in memory.
  const Shape hs{N, heads, d, Tk};
  Var<T> qh = reshape(q, hs), kh = reshape(k, hs), vh = reshape(v, hs);

  Var<T> scores = scale(matmul(qh, kh, true, false),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  Var<T> attn = softmax_lastdim(scores);  // N x heads x T x T

  if (schedule.mode != MaskMode::maskless) {
    Tensor<T> mask({N, heads, Tk, Tk});
    for (std::size_t n = 0; n < N; ++n) {
      const auto gammas = decay_rates(schedule, f.size() == 1 ? f[0] : f[n]);
      std::shared_ptr<const DecayMaskSet<T>> set;
      if (cache)
        set = cache->get(H, W, gammas, opt.topology);
      else
        set = std::make_shared<const DecayMaskSet<T>>(
            build_masks<T>(H, W, gammas, opt.topology, opt.token_cap));
      std::copy(set->masks.data().begin(), set->masks.data().end(),
                mask.raw() + n * heads * Tk * Tk);
    }
    attn = mul_const(attn, mask);
  } else {
    for (double fv : f)
      if (!(fv > 0.0)) throw std::invalid_argument("aaa_forward: invalid aperture value");
  }

  // out[d, t] = sum_s V[d, s] A[t, s]
  Var<T> out = reshape(matmul(vh, attn, false, true), s);
  Var<T> lepe = conv2d(v, p.lepe_w, p.lepe_b, ConvSpec{1, 1, C});
  return conv2d(add(out, lepe), p.wo, p.bo);
}

template <class T>
Var<T> aaa_forward(const Var<T>& x, double f, const AttentionParams<T>& p,
                   const DecaySchedule& schedule, MaskCache<T>* cache = nullptr,
                   AttentionOptions opt = {}) {
  const double fs[1] = {f};
  return aaa_forward(x, std::span<const double>(fs, 1), p, schedule, cache, opt);
}

}  // namespace bokeh
