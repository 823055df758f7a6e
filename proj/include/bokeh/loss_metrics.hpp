// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bokeh/blocks.hpp"
#include "bokeh/ops.hpp"

namespace bokeh {

/// Weight of the perceptual term in the combined objective.
inline constexpr double kDefaultPerceptualWeight = 0.6;

/// PSNR reported for identical images.
inline constexpr double kPsnrSentinel = 99.0;

/// Mean absolute error against a constant target.
template <class T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  pred.value().require_same(target, "l1_loss");
  const std::size_t n = target.size();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target[i]);
  const T inv = T{1} / static_cast<T>(n);
  return detail::make_result<T>(Tensor<T>::scalar(acc * inv), {pred}, [target, inv](Node<T>& nd) {
    auto* g = detail::parent_grad(nd, 0);
    if (!g) return;
    const auto& pv = nd.parents[0]->value;
    const T go = nd.grad[0] * inv;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const T d = pv[i] - target[i];
      (*g)[i] += d > 0 ? go : (d < 0 ? -go : T{0});
    }
  });
}

/// Frozen random convolutional feature pyramid standing in for a pretrained
/// perceptual network: three stride-2 3x3 stages (3 -> 8 -> 16 -> 32) with
/// GELU. Its weights are constants, so the optimiser never sees them, while
/// gradients still flow to the input.
template <class T>
class PerceptualProxy {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EED'B0CE'0001ULL;
  static constexpr std::array<std::size_t, 4> kChannels{3, 8, 16, 32};

  explicit PerceptualProxy(std::uint64_t seed = kDefaultSeed) {
    SplitMix64 rng(seed);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t cin = kChannels[s], cout = kChannels[s + 1];
      const double bound = std::sqrt(3.0 / static_cast<double>(cin * 9));
      weights_.push_back(Var<T>::constant(Tensor<T>::uniform({cout, cin, 3, 3}, rng, -bound, bound)));
      biases_.push_back(Var<T>::constant(Tensor<T>::uniform({cout}, rng, -0.1, 0.1)));
    }
  }

  /// Unit-normalised feature maps of every stage.
  std::vector<Var<T>> features(const Var<T>& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] < 8 || s[3] < 8)
      throw ShapeError("PerceptualProxy: need N x 3 x H x W with H, W >= 8, got " + to_string(s));
    std::vector<Var<T>> out;
    Var<T> h = x;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      h = gelu(conv2d(h, weights_[k], biases_[k], ConvSpec{2, 1, 1}));
      out.push_back(normalize_channels(h));
    }
    return out;
  }

  const std::vector<Var<T>>& weights() const { return weights_; }

 private:
  std::vector<Var<T>> weights_;
  std::vector<Var<T>> biases_;
};

namespace detail {

// Mean over locations of the squared distance between feature vectors.
template <class T>
Var<T> feature_distance(const Var<T>& a, const Var<T>& b) {
  const auto& s = a.shape();
  const T locations = static_cast<T>(s[0] * s[2] * s[3]);
  return scale(sum(square(sub(a, b))), T{1} / locations);
}

}  // namespace detail

/// Sum over stages of the mean squared distance between unit-normalised
/// proxy features of pred and target.
template <class T>
Var<T> perceptual_loss(const Var<T>& pred, const Tensor<T>& target, const PerceptualProxy<T>& proxy) {
  pred.value().require_same(target, "perceptual_loss");
  auto fp = proxy.features(pred);
  std::vector<Var<T>> ft;
  {
    NoGradGuard no_grad;
    ft = proxy.features(Var<T>::constant(target));
  }
  Var<T> total = detail::feature_distance(fp[0], ft[0]);
  for (std::size_t k = 1; k < fp.size(); ++k) total = add(total, detail::feature_distance(fp[k], ft[k]));
  return total;
}

/// Symmetric form with both sides differentiable.
template <class T>
Var<T> perceptual_distance(const Var<T>& a, const Var<T>& b, const PerceptualProxy<T>& proxy) {
  auto fa = proxy.features(a);
  auto fb = proxy.features(b);
  Var<T> total = detail::feature_distance(fa[0], fb[0]);
  for (std::size_t k = 1; k < fa.size(); ++k) total = add(total, detail::feature_distance(fa[k], fb[k]));
  return total;
}

template <class T>
struct LossTerms {
  Var<T> total;
  T l1{};
  T perceptual{};
};

/// L = L1 + weight * perceptual.
template <class T>
LossTerms<T> combined_loss(const Var<T>& pred, const Tensor<T>& target, const PerceptualProxy<T>& proxy,
                           double weight = kDefaultPerceptualWeight) {
  if (!(weight >= 0.0)) throw std::invalid_argument("combined_loss: weight must be >= 0");
  Var<T> l1 = l1_loss(pred, target);
  if (weight == 0.0) return {l1, l1.value()[0], T{0}};
  Var<T> p = perceptual_loss(pred, target, proxy);
  return {add(l1, scale(p, static_cast<T>(weight))), l1.value()[0], p.value()[0]};
}

// ---------------------------------------------------------------------------
// Metrics

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <class T>
double mean_abs_error(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "mean_abs_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE); identical inputs give kPsnrSentinel.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrSentinel;
  return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

// Rec.601 luma planes of a [N x] C x H x W tensor (C = 1 or 3).
template <class T>
std::vector<std::vector<double>> luma_planes(const Tensor<T>& t, std::size_t& h, std::size_t& w) {
  std::size_t n = 1, c = 0;
  if (t.rank() == 4) {
    n = t.dim(0);
    c = t.dim(1);
    h = t.dim(2);
    w = t.dim(3);
  } else if (t.rank() == 3) {
    c = t.dim(0);
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw ShapeError("ssim: expected [N x] C x H x W, got " + to_string(t.shape()));
  }
  if (c != 1 && c != 3) throw ShapeError("ssim: need 1 or 3 channels, got " + to_string(t.shape()));
  const std::size_t hw = h * w;
  std::vector<std::vector<double>> planes(n, std::vector<double>(hw));
  for (std::size_t b = 0; b < n; ++b) {
    const T* base = t.raw() + b * c * hw;
    for (std::size_t p = 0; p < hw; ++p)
      planes[b][p] = c == 1 ? static_cast<double>(base[p])
                            : 0.299 * base[p] + 0.587 * base[hw + p] + 0.114 * base[2 * hw + p];
  }
  return planes;
}

}  // namespace detail

inline constexpr std::size_t kSsimWindow = 8;

/// Mean SSIM over non-overlapping 8 x 8 windows of the luma channel, with
/// C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  a.require_same(b, "ssim");
  std::size_t h = 0, w = 0;
  auto pa = detail::luma_planes(a, h, w);
  auto pb = detail::luma_planes(b, h, w);
  const std::size_t wy = h / kSsimWindow, wx = w / kSsimWindow;
  if (wy == 0 || wx == 0) throw ShapeError("ssim: image smaller than one 8x8 window");
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const double area = static_cast<double>(kSsimWindow * kSsimWindow);
  double total = 0.0;
  for (std::size_t n = 0; n < pa.size(); ++n)
    for (std::size_t by = 0; by < wy; ++by)
      for (std::size_t bx = 0; bx < wx; ++bx) {
        double sa = 0, sb = 0;
        for (std::size_t y = 0; y < kSsimWindow; ++y)
          for (std::size_t x = 0; x < kSsimWindow; ++x) {
            const std::size_t i = (by * kSsimWindow + y) * w + bx * kSsimWindow + x;
            sa += pa[n][i];
            sb += pb[n][i];
          }
        const double ma = sa / area, mb = sb / area;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t y = 0; y < kSsimWindow; ++y)
          for (std::size_t x = 0; x < kSsimWindow; ++x) {
            const std::size_t i = (by * kSsimWindow + y) * w + bx * kSsimWindow + x;
            const double da = pa[n][i] - ma, db = pb[n][i] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= area;
        vb /= area;
        cov /= area;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
  return total / static_cast<double>(pa.size() * wy * wx);
}

/// One row of a metric report: sample_id, f_number, psnr, ssim, l1.
struct MetricRow {
  std::string sample_id;
  std::string f_number;
  double psnr = 0, ssim = 0, l1 = 0;
};

inline constexpr const char* kMetricCsvHeader = "sample_id,f_number,psnr,ssim,l1";

inline void write_metric_rows(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricCsvHeader << '\n';
  os.precision(10);
  for (const auto& r : rows)
    os << r.sample_id << ',' << r.f_number << ',' << r.psnr << ',' << r.ssim << ',' << r.l1 << '\n';
}

}  // namespace bokeh
