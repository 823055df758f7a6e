// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "bokeh/autodiff.hpp"
#include "bokeh/tensor.hpp"

namespace bokeh {

namespace detail {

template <class T>
Tensor<T>* parent_grad(Node<T>& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Dot product with eight independent partial sums so the loop vectorises
// under strict floating point. Summation order is fixed, so results are
// reproducible.
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  T s{0};
  for (; i < n; ++i) s += a[i] * b[i];
  for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
  return s;
}

template <class T>
T dot_strided(const T* a, const T* b, std::size_t n, std::size_t stride_b) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i * stride_b];
  return s;
}

template <class T>
std::vector<T> transposed(const T* A, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = A[r * cols + c];
  return t;
}

// C += op(A) * op(B) where op(A) is M x K and op(B) is K x N.
template <class T>
void gemm_acc(const T* A, bool ta, const T* B, bool tb, T* C, std::size_t M,
              std::size_t N, std::size_t K) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
  } else if (ta && !tb) {
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      for (std::size_t i = 0; i < M; ++i) {
        const T a = A[k * M + i];
        T* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < M; ++i) {
      const T* a = A + i * K;
      for (std::size_t j = 0; j < N; ++j) C[i * N + j] += dot(a, B + j * K, K);
    }
  } else {
    const auto At = transposed(A, K, M);
    gemm_acc(At.data(), false, B, true, C, M, N, K);
  }
}

struct ConvGeom {
  long n, cin, h, w, cout, kh, kw, oh, ow, stride, pad, groups, cin_g, cout_g;

  // Inclusive output range whose tap k lands inside [0, extent).
  void range(long k, long extent, long out_extent, long& lo, long& hi) const {
    const long a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    const long b = extent - 1 + pad - k;
    hi = b < 0 ? -1 : std::min(b / stride, out_extent - 1);
  }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad == 0;
  }
};

// Visits every (output row, input row, tap weight) triple of one
// (input plane, output plane, kernel) combination. fn(orow_off, irow_off,
// lo, hi, weight_index) where positions are ox in [lo, hi] and input column
// ox * stride + kx - pad.
template <class Fn>
void for_each_tap(const ConvGeom& g, Fn&& fn) {
  for (long ky = 0; ky < g.kh; ++ky) {
    long ylo, yhi;
    g.range(ky, g.h, g.oh, ylo, yhi);
    for (long kx = 0; kx < g.kw; ++kx) {
      long xlo, xhi;
      g.range(kx, g.w, g.ow, xlo, xhi);
      if (xlo > xhi) continue;
      for (long oy = ylo; oy <= yhi; ++oy) {
        const long iy = oy * g.stride + ky - g.pad;
        fn(oy * g.ow, iy * g.w + kx - g.pad, xlo, xhi, ky * g.kw + kx);
      }
    }
  }
}

}  // namespace detail

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation over N x C x H x W input with Cout x C/groups x KH x KW
/// weights. `bias` may be undefined.
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              ConvSpec spec = {}) {
  using detail::require;
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  require(xs.size() == 4, "conv2d: input must be NxCxHxW, got " + to_string(xs));
  require(ws.size() == 4, "conv2d: weight must be order 4, got " + to_string(ws));
  require(spec.groups >= 1 && spec.stride >= 1, "conv2d: stride/groups must be >= 1");
  require(xs[1] % spec.groups == 0 && ws[0] % spec.groups == 0,
          "conv2d: channels " + std::to_string(xs[1]) + "->" +
              std::to_string(ws[0]) + " not divisible by groups " +
              std::to_string(spec.groups));
  require(ws[1] == xs[1] / spec.groups,
          "conv2d: weight " + to_string(ws) + " inconsistent with input " +
              to_string(xs) + " and groups " + std::to_string(spec.groups));
  require(xs[2] + 2 * spec.padding >= ws[2] && xs[3] + 2 * spec.padding >= ws[3],
          "conv2d: kernel " + to_string(ws) + " larger than padded input " +
              to_string(xs));
  if (bias.defined())
    require(bias.value().size() == ws[0],
            "conv2d: bias " + to_string(bias.shape()) + " for " +
                std::to_string(ws[0]) + " output channels");

  detail::ConvGeom g{};
  g.n = static_cast<long>(xs[0]);
  g.cin = static_cast<long>(xs[1]);
  g.h = static_cast<long>(xs[2]);
  g.w = static_cast<long>(xs[3]);
  g.cout = static_cast<long>(ws[0]);
  g.kh = static_cast<long>(ws[2]);
  g.kw = static_cast<long>(ws[3]);
  g.stride = static_cast<long>(spec.stride);
  g.pad = static_cast<long>(spec.padding);
  g.groups = static_cast<long>(spec.groups);
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;

  count_macs_tally(static_cast<std::uint64_t>(g.n * g.cout * g.oh * g.ow *
                                              g.cin_g * g.kh * g.kw));

  Tensor<T> out({xs[0], ws[0], static_cast<std::size_t>(g.oh),
                 static_cast<std::size_t>(g.ow)});
  const T* X = input.value().raw();
  const T* Wt = weight.value().raw();
  T* O = out.raw();
  const long in_plane = g.h * g.w, out_plane = g.oh * g.ow,
             kplane = g.kh * g.kw;

  for (long n = 0; n < g.n; ++n)
    for (long oc = 0; oc < g.cout; ++oc) {
      T* o = O + (n * g.cout + oc) * out_plane;
      if (bias.defined()) std::fill(o, o + out_plane, bias.value()[oc]);
      const long grp = oc / g.cout_g;
      for (long icl = 0; icl < g.cin_g; ++icl) {
        const T* in = X + (n * g.cin + grp * g.cin_g + icl) * in_plane;
        const T* wk = Wt + (oc * g.cin_g + icl) * kplane;
        if (g.pointwise()) {
          const T wv = wk[0];
          for (long i = 0; i < out_plane; ++i) o[i] += wv * in[i];
          continue;
        }
        detail::for_each_tap(g, [&](long oo, long io, long lo, long hi, long wi) {
          const T wv = wk[wi];
          T* orow = o + oo;
          const T* irow = in + io;
          if (g.stride == 1)
            for (long ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox];
          else
            for (long ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox * g.stride];
        });
      }
    }

  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return detail::make_result<T>(std::move(out), inputs, [g, has_bias](Node<T>& nd) {
    const T* G = nd.grad.raw();
    const T* X = nd.parents[0]->value.raw();
    const T* Wt = nd.parents[1]->value.raw();
    Tensor<T>* gx = detail::parent_grad(nd, 0);
    Tensor<T>* gw = detail::parent_grad(nd, 1);
    Tensor<T>* gb = has_bias ? detail::parent_grad(nd, 2) : nullptr;
    const long in_plane = g.h * g.w, out_plane = g.oh * g.ow,
               kplane = g.kh * g.kw;
    for (long n = 0; n < g.n; ++n)
      for (long oc = 0; oc < g.cout; ++oc) {
        const T* go = G + (n * g.cout + oc) * out_plane;
        if (gb) {
          T s{0};
          for (long i = 0; i < out_plane; ++i) s += go[i];
          (*gb)[oc] += s;
        }
        const long grp = oc / g.cout_g;
        for (long icl = 0; icl < g.cin_g; ++icl) {
          const long ic_off = (n * g.cin + grp * g.cin_g + icl) * in_plane;
          const T* in = X + ic_off;
          const T* wk = Wt + (oc * g.cin_g + icl) * kplane;
          T* gin = gx ? gx->raw() + ic_off : nullptr;
          T* gwk = gw ? gw->raw() + (oc * g.cin_g + icl) * kplane : nullptr;
          if (g.pointwise()) {
            if (gin) {
              const T wv = wk[0];
              for (long i = 0; i < out_plane; ++i) gin[i] += wv * go[i];
            }
            if (gwk) gwk[0] += detail::dot(go, in, static_cast<std::size_t>(out_plane));
            continue;
          }
          detail::for_each_tap(g, [&](long oo, long io, long lo, long hi, long wi) {
            const T* grow = go + oo;
            if (gin) {
              const T wv = wk[wi];
              T* girow = gin + io;
              if (g.stride == 1)
                for (long ox = lo; ox <= hi; ++ox) girow[ox] += wv * grow[ox];
              else
                for (long ox = lo; ox <= hi; ++ox)
                  girow[ox * g.stride] += wv * grow[ox];
            }
            if (gwk) {
              const T* irow = in + io;
              const auto n = static_cast<std::size_t>(hi - lo + 1);
              gwk[wi] += g.stride == 1
                             ? detail::dot(grow + lo, irow + lo, n)
                             : detail::dot_strided(grow + lo, irow + lo * g.stride, n,
                                                   static_cast<std::size_t>(g.stride));
            }
          });
        }
      }
  });
}

/// Batched product op(a) * op(b) over the last two dims; leading dims must
/// agree. `trans_a`/`trans_b` read the stored matrix transposed.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false,
              bool trans_b = false) {
  using detail::require;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(as.size() >= 2 && as.size() == bs.size(),
          "matmul: operands " + to_string(as) + " and " + to_string(bs) +
              " need equal order >= 2");
  const std::size_t r = as.size();
  for (std::size_t i = 0; i + 2 < r; ++i)
    require(as[i] == bs[i], "matmul: batch dims differ in " + to_string(as) +
                                " vs " + to_string(bs));
  const std::size_t M = trans_a ? as[r - 1] : as[r - 2];
  const std::size_t K = trans_a ? as[r - 2] : as[r - 1];
  const std::size_t Kb = trans_b ? bs[r - 1] : bs[r - 2];
  const std::size_t N = trans_b ? bs[r - 2] : bs[r - 1];
  require(K == Kb, "matmul: inner extents differ, " + to_string(as) + " vs " +
                       to_string(bs));
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= as[i];
  Shape os(as.begin(), as.end());
  os[r - 2] = M;
  os[r - 1] = N;
  count_macs_tally(batch * M * N * K);

  Tensor<T> out(os);
  for (std::size_t bi = 0; bi < batch; ++bi)
    detail::gemm_acc(a.value().raw() + bi * M * K, trans_a,
                     b.value().raw() + bi * K * N, trans_b,
                     out.raw() + bi * M * N, M, N, K);

  return detail::make_result<T>(
      std::move(out), {a, b}, [=](Node<T>& nd) {
        const T* A = nd.parents[0]->value.raw();
        const T* B = nd.parents[1]->value.raw();
        const T* G = nd.grad.raw();
        Tensor<T>* ga = detail::parent_grad(nd, 0);
        Tensor<T>* gb = detail::parent_grad(nd, 1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* Ab = A + bi * M * K;
          const T* Bb = B + bi * K * N;
          const T* Gb = G + bi * M * N;
          if (ga) {
            T* dA = ga->raw() + bi * M * K;
            if (!trans_a)
              detail::gemm_acc(Gb, false, Bb, !trans_b, dA, M, K, N);
            else
              detail::gemm_acc(Bb, trans_b, Gb, true, dA, K, M, N);
          }
          if (gb) {
            T* dB = gb->raw() + bi * K * N;
            if (!trans_b)
              detail::gemm_acc(Ab, !trans_a, Gb, false, dB, K, N, M);
            else
              detail::gemm_acc(Gb, true, Ab, trans_a, dB, N, K, M);
          }
        }
      });
}

/// Softmax over the last dimension with max subtraction.
template <class T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const std::size_t L = x.shape().back();
  const std::size_t rows = x.value().size() / L;
  Tensor<T> out(x.shape());
  const T* X = x.value().raw();
  T* Y = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X + r * L;
    T* yr = Y + r * L;
    const T m = *std::max_element(xr, xr + L);
    T s{0};
    for (std::size_t i = 0; i < L; ++i) s += (yr[i] = std::exp(xr[i] - m));
    const T inv = T{1} / s;
    for (std::size_t i = 0; i < L; ++i) yr[i] *= inv;
  }
  return detail::make_result<T>(std::move(out), {x}, [L, rows](Node<T>& nd) {
    Tensor<T>* gx = detail::parent_grad(nd, 0);
    if (!gx) return;
    const T* Y = nd.value.raw();
    const T* G = nd.grad.raw();
    T* D = gx->raw();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = Y + r * L;
      const T* gr = G + r * L;
      T dot{0};
      for (std::size_t i = 0; i < L; ++i) dot += yr[i] * gr[i];
      for (std::size_t i = 0; i < L; ++i) D[r * L + i] += yr[i] * (gr[i] - dot);
    }
  });
}

/// Normalises each spatial location of an N x C x H x W map across channels
/// (epsilon 1e-6 under the root), then applies per-channel gain and shift.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "layer_norm: expected NxCxHxW, got " + to_string(s));
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  detail::require(gain.value().size() == C && shift.value().size() == C,
                  "layer_norm: affine params must have " + std::to_string(C) +
                      " entries");
  constexpr T eps = T(1e-6);
  Tensor<T> xhat(s), out(s);
  std::vector<T> inv_std(N * HW);
  const T* X = x.value().raw();
  const T* gm = gain.value().raw();
  const T* sh = shift.value().raw();
  std::vector<T> mean(HW), var(HW);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = X + n * C * HW;
    std::fill(mean.begin(), mean.end(), T{0});
    std::fill(var.begin(), var.end(), T{0});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) mean[p] += xn[c * HW + p];
    for (std::size_t p = 0; p < HW; ++p) mean[p] /= static_cast<T>(C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) {
        const T d = xn[c * HW + p] - mean[p];
        var[p] += d * d;
      }
    for (std::size_t p = 0; p < HW; ++p)
      inv_std[n * HW + p] = T{1} / std::sqrt(var[p] / static_cast<T>(C) + eps);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t i = (n * C + c) * HW + p;
        const T xh = (xn[c * HW + p] - mean[p]) * inv_std[n * HW + p];
        xhat[i] = xh;
        out[i] = xh * gm[c] + sh[c];
      }
  }
  return detail::make_result<T>(
      std::move(out), {x, gain, shift},
      [N, C, HW, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& nd) {
        const T* G = nd.grad.raw();
        const T* gm = nd.parents[1]->value.raw();
        Tensor<T>* gx = detail::parent_grad(nd, 0);
        Tensor<T>* gg = detail::parent_grad(nd, 1);
        Tensor<T>* gs = detail::parent_grad(nd, 2);
        std::vector<T> m1(HW), m2(HW);
        for (std::size_t n = 0; n < N; ++n) {
          std::fill(m1.begin(), m1.end(), T{0});
          std::fill(m2.begin(), m2.end(), T{0});
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) {
              const std::size_t i = (n * C + c) * HW + p;
              const T dxh = G[i] * gm[c];
              m1[p] += dxh;
              m2[p] += dxh * xhat[i];
              if (gg) (*gg)[c] += G[i] * xhat[i];
              if (gs) (*gs)[c] += G[i];
            }
          if (!gx) continue;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) {
              const std::size_t i = (n * C + c) * HW + p;
              const T dxh = G[i] * gm[c];
              (*gx)[i] += inv_std[n * HW + p] *
                          (dxh - m1[p] / static_cast<T>(C) -
                           xhat[i] * m2[p] / static_cast<T>(C));
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise family

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& nd) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = detail::parent_grad(nd, k)) *g += nd.grad;
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0)) *g += nd.grad;
    if (auto* g = detail::parent_grad(nd, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= nd.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& nd) {
    const auto& av = nd.parents[0]->value;
    const auto& bv = nd.parents[1]->value;
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += nd.grad[i] * bv[i];
    if (auto* g = detail::parent_grad(nd, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += nd.grad[i] * av[i];
  });
}

/// Elementwise product with a constant tensor of identical shape.
template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  a.value().require_same(c, "mul_const");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return detail::make_result<T>(std::move(out), {a}, [c](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += nd.grad[i] * c[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return detail::make_result<T>(std::move(out), {a}, [s](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += nd.grad[i] * s;
  });
}

template <class T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= v;
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& nd) {
    const auto& av = nd.parents[0]->value;
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += T{2} * av[i] * nd.grad[i];
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T y = nd.value[i];
        (*g)[i] += nd.grad[i] * y * (T{1} - y);
      }
  });
}

/// tanh approximation of GELU.
template <class T>
Var<T> gelu(const Var<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  Tensor<T> out = a.value();
  for (auto& v : out.data()) {
    const T x = v;
    v = T(0.5) * x * (T{1} + std::tanh(c * (x + k * x * x * x)));
  }
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& nd) {
    const auto& av = nd.parents[0]->value;
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T x = av[i];
        const T t = std::tanh(c * (x + k * x * x * x));
        const T d = T(0.5) * (T{1} + t) +
                    T(0.5) * x * (T{1} - t * t) * c * (T{1} + T{3} * k * x * x);
        (*g)[i] += nd.grad[i] * d;
      }
  });
}

/// Splits channels into first and second half and multiplies them.
template <class T>
Var<T> simple_gate(const Var<T>& x) {
  const auto& s = x.shape();
  detail::require(s.size() == 4 && s[1] % 2 == 0,
                  "simple_gate: need NxCxHxW with even C, got " + to_string(s));
  const std::size_t N = s[0], half = s[1] / 2, HW = s[2] * s[3];
  Tensor<T> out({N, half, s[2], s[3]});
  const T* X = x.value().raw();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < half; ++c)
      for (std::size_t p = 0; p < HW; ++p)
        out[(n * half + c) * HW + p] =
            X[(n * 2 * half + c) * HW + p] * X[(n * 2 * half + half + c) * HW + p];
  return detail::make_result<T>(std::move(out), {x}, [N, half, HW](Node<T>& nd) {
    auto* g = detail::parent_grad(nd, 0);
    if (!g) return;
    const T* X = nd.parents[0]->value.raw();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < half; ++c)
        for (std::size_t p = 0; p < HW; ++p) {
          const std::size_t ia = (n * 2 * half + c) * HW + p;
          const std::size_t ib = (n * 2 * half + half + c) * HW + p;
          const T go = nd.grad[(n * half + c) * HW + p];
          (*g)[ia] += go * X[ib];
          (*g)[ib] += go * X[ia];
        }
  });
}

/// N x C x H x W -> N x C x 1 x 1 spatial mean.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "global_avg_pool: expected NxCxHxW, got " + to_string(s));
  const std::size_t NC = s[0] * s[1], HW = s[2] * s[3];
  Tensor<T> out({s[0], s[1], 1, 1});
  for (std::size_t i = 0; i < NC; ++i) {
    T acc{0};
    for (std::size_t p = 0; p < HW; ++p) acc += x.value()[i * HW + p];
    out[i] = acc / static_cast<T>(HW);
  }
  return detail::make_result<T>(std::move(out), {x}, [NC, HW](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < NC; ++i) {
        const T v = nd.grad[i] / static_cast<T>(HW);
        for (std::size_t p = 0; p < HW; ++p) (*g)[i * HW + p] += v;
      }
  });
}

/// Multiplies each channel plane of x by s[n, c] (s is N x C x 1 x 1).
template <class T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const auto& xs = x.shape();
  detail::require(xs.size() == 4 && s.shape() == Shape{xs[0], xs[1], 1, 1},
                  "scale_channels: " + to_string(xs) + " by " + to_string(s.shape()));
  const std::size_t NC = xs[0] * xs[1], HW = xs[2] * xs[3];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < NC; ++i)
    for (std::size_t p = 0; p < HW; ++p) out[i * HW + p] *= s.value()[i];
  return detail::make_result<T>(std::move(out), {x, s}, [NC, HW](Node<T>& nd) {
    const auto& xv = nd.parents[0]->value;
    const auto& sv = nd.parents[1]->value;
    auto* gx = detail::parent_grad(nd, 0);
    auto* gs = detail::parent_grad(nd, 1);
    for (std::size_t i = 0; i < NC; ++i) {
      T acc{0};
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t k = i * HW + p;
        if (gx) (*gx)[k] += nd.grad[k] * sv[i];
        acc += nd.grad[k] * xv[k];
      }
      if (gs) (*gs)[i] += acc;
    }
  });
}

namespace detail {

template <class T>
Var<T> gather(const Var<T>& x, Shape out_shape, std::vector<std::size_t> index) {
  Tensor<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.value()[index[i]];
  return make_result<T>(std::move(out), {x}, [index = std::move(index)](Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0))
      for (std::size_t i = 0; i < index.size(); ++i) (*g)[index[i]] += nd.grad[i];
  });
}

}  // namespace detail

/// N x (C r^2) x H x W -> N x C x (H r) x (W r).
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
  const auto& s = x.shape();
  detail::require(s.size() == 4 && r >= 1 && s[1] % (r * r) == 0,
                  "pixel_shuffle: channels of " + to_string(s) +
                      " not divisible by r^2 = " + std::to_string(r * r));
  const std::size_t N = s[0], C = s[1] / (r * r), H = s[2], W = s[3];
  std::vector<std::size_t> idx(x.value().size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H * r; ++y)
        for (std::size_t xx = 0; xx < W * r; ++xx) {
          const std::size_t ic = c * r * r + (y % r) * r + (xx % r);
          idx[o++] = ((n * s[1] + ic) * H + y / r) * W + xx / r;
        }
  return detail::gather<T>(x, {N, C, H * r, W * r}, std::move(idx));
}

/// Inverse of pixel_shuffle.
template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, std::size_t r) {
  const auto& s = x.shape();
  detail::require(s.size() == 4 && r >= 1 && s[2] % r == 0 && s[3] % r == 0,
                  "pixel_unshuffle: spatial extents of " + to_string(s) +
                      " not divisible by " + std::to_string(r));
  const std::size_t N = s[0], C = s[1], H = s[2] / r, W = s[3] / r;
  std::vector<std::size_t> idx(x.value().size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < C * r * r; ++oc) {
      const std::size_t c = oc / (r * r), dy = (oc % (r * r)) / r, dx = oc % r;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          idx[o++] = ((n * C + c) * s[2] + y * r + dy) * s[3] + xx * r + dx;
    }
  return detail::gather<T>(x, {N, C * r * r, H, W}, std::move(idx));
}

/// Concatenates along dimension 1. All other extents must agree.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  detail::require(!xs.empty(), "concat_channels: no inputs");
  Shape s = xs[0].shape();
  detail::require(s.size() >= 2, "concat_channels: order must be >= 2");
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  std::size_t total_c = 0;
  for (const auto& x : xs) {
    const auto& t = x.shape();
    bool ok = t.size() == s.size() && t[0] == s[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = t[i] == s[i];
    detail::require(ok, "concat_channels: " + to_string(t) + " incompatible with " +
                            to_string(s));
    total_c += t[1];
  }
  const std::size_t N = s[0];
  s[1] = total_c;
  Tensor<T> out(s);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t c = x.shape()[1];
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(x.value().raw() + n * c * inner, c * inner,
                  out.raw() + (n * total_c + off) * inner);
    off += c;
  }
  return detail::make_result<T>(std::move(out), xs, [N, inner, total_c, offsets](Node<T>& nd) {
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      auto* g = detail::parent_grad(nd, k);
      if (!g) continue;
      const std::size_t c = nd.parents[k]->value.shape()[1];
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = nd.grad.raw() + (n * total_c + offsets[k]) * inner;
        T* dst = g->raw() + n * c * inner;
        for (std::size_t i = 0; i < c * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Channels [start, start + count) along dimension 1.
template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t start, std::size_t count) {
  const auto& s = x.shape();
  detail::require(s.size() >= 2 && count >= 1 && start + count <= s[1],
                  "slice_channels: [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") out of " + to_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[1] = count;
  std::vector<std::size_t> idx;
  idx.reserve(shape_size(os));
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t i = 0; i < inner; ++i)
        idx.push_back((n * s[1] + start + c) * inner + i);
  return detail::gather<T>(x, std::move(os), std::move(idx));
}

/// Halves of the channel dimension, in order.
template <class T>
std::pair<Var<T>, Var<T>> split_channels(const Var<T>& x) {
  const std::size_t c = x.shape().at(1);
  detail::require(c % 2 == 0, "split_channels: odd channel count " + std::to_string(c));
  return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c / 2)};
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += nd.grad[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return detail::make_result<T>(Tensor<T>::scalar(acc), {x}, [](Node<T>& nd) {
    if (auto* g = detail::parent_grad(nd, 0))
      for (auto& v : g->data()) v += nd.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Divides each spatial feature vector (over dimension 1) by its L2 norm.
template <class T>
Var<T> normalize_channels(const Var<T>& x, T eps = T(1e-10)) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "normalize_channels: expected NxCxHxW");
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out(s);
  std::vector<T> inv(N * HW);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      T ss = eps;
      for (std::size_t c = 0; c < C; ++c) {
        const T v = x.value()[(n * C + c) * HW + p];
        ss += v * v;
      }
      inv[n * HW + p] = T{1} / std::sqrt(ss);
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (n * C + c) * HW + p;
        out[i] = x.value()[i] * inv[n * HW + p];
      }
    }
  return detail::make_result<T>(std::move(out), {x}, [N, C, HW, inv = std::move(inv)](Node<T>& nd) {
    auto* g = detail::parent_grad(nd, 0);
    if (!g) return;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < HW; ++p) {
        T dot{0};
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (n * C + c) * HW + p;
          dot += nd.grad[i] * nd.value[i];
        }
        const T r = inv[n * HW + p];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (n * C + c) * HW + p;
          (*g)[i] += r * (nd.grad[i] - nd.value[i] * dot);
        }
      }
  });
}

}  // namespace bokeh
