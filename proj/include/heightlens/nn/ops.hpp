// Copyright 2026 The HeightLens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HEIGHTLENS_NN_OPS_HPP_
#define HEIGHTLENS_NN_OPS_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "heightlens/nn/graph.hpp"
#include "heightlens/nn/tensor.hpp"

// Differentiable operations on NHWC tensors. Each op computes its value
// eagerly and, when any input needs a gradient, registers a pullback that
// accumulates into the inputs' gradient buffers.
namespace heightlens::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

namespace detail {

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const Var<T>& v : vars) {
    if (v.needs_grad()) return true;
  }
  return false;
}

template <typename T>
CMapR<T> as_matrix(const Tensor<T>& t) {
  return CMapR<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                  t.shape.back());
}

template <typename T>
MapR<T> as_matrix(Tensor<T>& t) {
  return MapR<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), t.shape.back());
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_string(t.shape));
  }
}

// Elementwise unary op; `dfn(x, y)` is dy/dx.
template <typename T, typename Fn, typename DFn>
Var<T> unary(Var<T> x, Fn fn, DFn dfn) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape);
  for (size_t i = 0; i < y.size(); ++i) y.data[i] = fn(xv.data[i]);
  Graph<T>* g = x.graph;
  const bool ng = x.needs_grad();
  const int out_id = static_cast<int>(g->size());
  return g->op(std::move(y), ng, [g, x, dfn, out_id](const Tensor<T>& go) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& yv = g->value(Var<T>{g, out_id});
    Tensor<T>& gx = g->grad(x);
    for (size_t i = 0; i < go.size(); ++i) {
      gx.data[i] += go.data[i] * dfn(xv.data[i], yv.data[i]);
    }
  });
}

}  // namespace detail

// ----------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (size_t i = 0; i < y.size(); ++i) y.data[i] += bv.data[i];
  Graph<T>* g = a.graph;
  return g->op(std::move(y), detail::any_grad({a, b}),
               [g, a, b](const Tensor<T>& go) {
                 g->accumulate(a, go);
                 g->accumulate(b, go);
               });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (size_t i = 0; i < y.size(); ++i) y.data[i] -= bv.data[i];
  Graph<T>* g = a.graph;
  return g->op(std::move(y), detail::any_grad({a, b}),
               [g, a, b](const Tensor<T>& go) {
                 g->accumulate(a, go);
                 if (b.needs_grad()) {
                   Tensor<T>& gb = g->grad(b);
                   for (size_t i = 0; i < go.size(); ++i) gb.data[i] -= go.data[i];
                 }
               });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (size_t i = 0; i < y.size(); ++i) y.data[i] *= bv.data[i];
  Graph<T>* g = a.graph;
  return g->op(std::move(y), detail::any_grad({a, b}),
               [g, a, b](const Tensor<T>& go) {
                 const Tensor<T>& av = a.value();
                 const Tensor<T>& bv = b.value();
                 if (a.needs_grad()) {
                   Tensor<T>& ga = g->grad(a);
                   for (size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * bv.data[i];
                 }
                 if (b.needs_grad()) {
                   Tensor<T>& gb = g->grad(b);
                   for (size_t i = 0; i < go.size(); ++i) gb.data[i] += go.data[i] * av.data[i];
                 }
               });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  // tanh approximation
  constexpr T kC = T(0.7978845608028654);
  constexpr T kA = T(0.044715);
  return detail::unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T u = kC * (v + kA * v * v * v);
        const T t = std::tanh(u);
        const T du = kC * (T(1) + T(3) * kA * v * v);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      });
}

template <typename T>
T softplus_value(T v) {
  return v > T(20) ? v : std::log1p(std::exp(v));
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return detail::unary(
      x, [](T v) { return softplus_value(v); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.graph->constant(x.value());
}

// ------------------------------------------------------------ reductions

template <typename T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = T(0);
  for (T v : xv.data) s += v;
  Graph<T>* g = x.graph;
  return g->op(Tensor<T>({1}, s), x.needs_grad(), [g, x](const Tensor<T>& go) {
    Tensor<T>& gx = g->grad(x);
    for (T& v : gx.data) v += go.data[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().size());
  return scale(sum(x), T(1) / n);
}

template <typename T>
Var<T> weighted_sum(std::initializer_list<std::pair<Var<T>, T>> terms) {
  std::optional<Var<T>> acc;
  for (const auto& [v, w] : terms) {
    Var<T> s = scale(v, w);
    acc = acc ? add(*acc, s) : s;
  }
  return *acc;
}

// mean |pred - target|
template <typename T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
  require_same_shape(pred.value(), target.value(), "l1_loss");
  const Tensor<T>& p = pred.value();
  const Tensor<T>& t = target.value();
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(static_cast<double>(p.data[i] - t.data[i]));
  const T n = static_cast<T>(p.size());
  Graph<T>* g = pred.graph;
  return g->op(Tensor<T>({1}, static_cast<T>(s / static_cast<double>(n))),
               detail::any_grad({pred, target}),
               [g, pred, target, n](const Tensor<T>& go) {
                 const Tensor<T>& p = pred.value();
                 const Tensor<T>& t = target.value();
                 const T k = go.data[0] / n;
                 auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                 if (pred.needs_grad()) {
                   Tensor<T>& gp = g->grad(pred);
                   for (size_t i = 0; i < p.size(); ++i) gp.data[i] += k * sign(p.data[i] - t.data[i]);
                 }
                 if (target.needs_grad()) {
                   Tensor<T>& gt = g->grad(target);
                   for (size_t i = 0; i < p.size(); ++i) gt.data[i] -= k * sign(p.data[i] - t.data[i]);
                 }
               });
}

// sum (pred - target)^2, optionally divided by the element count.
template <typename T>
Var<T> squared_error(Var<T> pred, Var<T> target, bool average) {
  require_same_shape(pred.value(), target.value(), "squared_error");
  const Tensor<T>& p = pred.value();
  const Tensor<T>& t = target.value();
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p.data[i]) - t.data[i];
    s += d * d;
  }
  const T norm = average ? T(1) / static_cast<T>(p.size()) : T(1);
  Graph<T>* g = pred.graph;
  return g->op(Tensor<T>({1}, static_cast<T>(s) * norm),
               detail::any_grad({pred, target}),
               [g, pred, target, norm](const Tensor<T>& go) {
                 const Tensor<T>& p = pred.value();
                 const Tensor<T>& t = target.value();
                 const T k = T(2) * go.data[0] * norm;
                 if (pred.needs_grad()) {
                   Tensor<T>& gp = g->grad(pred);
                   for (size_t i = 0; i < p.size(); ++i) gp.data[i] += k * (p.data[i] - t.data[i]);
                 }
                 if (target.needs_grad()) {
                   Tensor<T>& gt = g->grad(target);
                   for (size_t i = 0; i < p.size(); ++i) gt.data[i] -= k * (p.data[i] - t.data[i]);
                 }
               });
}

// Per-sample sum over the n x n window with top-left (row0, col0) of a
// [B, H, W, 1] map. Returns [B].
template <typename T>
Var<T> window_sum(Var<T> x, int row0, int col0, int n) {
  const Tensor<T>& xv = x.value();
  detail::require_rank(xv, 4, "window_sum");
  const int B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (C != 1 || row0 < 0 || col0 < 0 || row0 + n > H || col0 + n > W || n < 1) {
    throw ShapeError("window_sum: window outside map");
  }
  Tensor<T> y({B});
  for (int b = 0; b < B; ++b) {
    T s = T(0);
    for (int r = row0; r < row0 + n; ++r) {
      for (int c = col0; c < col0 + n; ++c) {
        s += xv.data[(static_cast<size_t>(b) * H + r) * W + c];
      }
    }
    y.data[static_cast<size_t>(b)] = s;
  }
  Graph<T>* g = x.graph;
  return g->op(std::move(y), x.needs_grad(),
               [g, x, row0, col0, n, H, W, B](const Tensor<T>& go) {
                 Tensor<T>& gx = g->grad(x);
                 for (int b = 0; b < B; ++b) {
                   for (int r = row0; r < row0 + n; ++r) {
                     for (int c = col0; c < col0 + n; ++c) {
                       gx.data[(static_cast<size_t>(b) * H + r) * W + c] += go.data[static_cast<size_t>(b)];
                     }
                   }
                 }
               });
}

// ---------------------------------------------------------------- linear

// y = x W + b over the last dimension; W is [Cin, Cout], b is [Cout].
template <typename T>
Var<T> linear_impl(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  // A [1, 1, Cin, Cout] pointwise kernel is accepted as a [Cin, Cout] matrix.
  if (xv.shape.back() != static_cast<int>(wv.rows())) {
    throw ShapeError("linear: input " + shape_string(xv.shape) +
                     " vs weight " + shape_string(wv.shape));
  }
  std::vector<int> shape = xv.shape;
  shape.back() = wv.dim(-1);
  Tensor<T> y(shape);
  auto Y = detail::as_matrix(y);
  Y.noalias() = detail::as_matrix(xv) * detail::as_matrix(wv);
  if (b) {
    const Tensor<T>& bv = b->value();
    if (bv.size() != static_cast<size_t>(wv.dim(-1))) throw ShapeError("linear: bias size");
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.ptr(), bv.size());
  }
  Graph<T>* g = x.graph;
  const bool ng = x.needs_grad() || w.needs_grad() || (b && b->needs_grad());
  return g->op(std::move(y), ng, [g, x, w, b](const Tensor<T>& go) {
    auto G = detail::as_matrix(go);
    if (x.needs_grad()) {
      detail::as_matrix(g->grad(x)).noalias() += G * detail::as_matrix(w.value()).transpose();
    }
    if (w.needs_grad()) {
      detail::as_matrix(g->grad(w)).noalias() += detail::as_matrix(x.value()).transpose() * G;
    }
    if (b && b->needs_grad()) {
      Tensor<T>& gb = g->grad(*b);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.ptr(), gb.size()) += G.colwise().sum();
    }
  });
}

// 2-D convolution on [B, H, W, Cin] with weights [k, k, Cin, Cout] and
// symmetric zero padding.
template <typename T>
Var<T> conv2d_impl(Var<T> x, Var<T> w, std::optional<Var<T>> b, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  detail::require_rank(xv, 4, "conv2d input");
  detail::require_rank(wv, 4, "conv2d weight");
  const int B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int kh = wv.dim(0), kw = wv.dim(1), Cout = wv.dim(3);
  if (wv.dim(2) != C) {
    throw ShapeError("conv2d: input " + shape_string(xv.shape) + " vs weight " +
                     shape_string(wv.shape));
  }
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");
  const int K = kh * kw * C;
  const size_t M = static_cast<size_t>(B) * Ho * Wo;
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    // Pointwise: a plain matrix product over pixels.
    return linear_impl(x, w, b);
  }

  auto im2col = [=](const Tensor<T>& in) {
    MatR<T> cols = MatR<T>::Zero(static_cast<Eigen::Index>(M), K);
    for (int bi = 0; bi < B; ++bi) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          T* row = cols.data() + ((static_cast<size_t>(bi) * Ho + oy) * Wo + ox) * K;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const T* src = in.ptr() + ((static_cast<size_t>(bi) * H + iy) * W + ix) * C;
              std::copy(src, src + C, row + (ky * kw + kx) * C);
            }
          }
        }
      }
    }
    return cols;
  };

  MatR<T> cols = im2col(xv);
  Tensor<T> y({B, Ho, Wo, Cout});
  auto Y = detail::as_matrix(y);
  CMapR<T> Wm(wv.ptr(), K, Cout);
  Y.noalias() = cols * Wm;
  if (b) {
    const Tensor<T>& bv = b->value();
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.ptr(), Cout);
  }
  Graph<T>* g = x.graph;
  const bool ng = x.needs_grad() || w.needs_grad() || (b && b->needs_grad());
  if (!ng || !g->grad_enabled()) return g->op(std::move(y), false, nullptr);
  return g->op(std::move(y), true,
               [=, cols = std::move(cols)](const Tensor<T>& go) {
                 auto G = detail::as_matrix(go);
                 if (w.needs_grad()) {
                   Tensor<T>& gw = g->grad(w);
                   MapR<T>(gw.ptr(), K, Cout).noalias() += cols.transpose() * G;
                 }
                 if (b && b->needs_grad()) {
                   Tensor<T>& gb = g->grad(*b);
                   Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.ptr(), Cout) += G.colwise().sum();
                 }
                 if (x.needs_grad()) {
                   const Tensor<T>& wv = w.value();
                   MatR<T> dcols = G * CMapR<T>(wv.ptr(), K, Cout).transpose();
                   Tensor<T>& gx = g->grad(x);
                   for (int bi = 0; bi < B; ++bi) {
                     for (int oy = 0; oy < Ho; ++oy) {
                       for (int ox = 0; ox < Wo; ++ox) {
                         const T* row = dcols.data() + ((static_cast<size_t>(bi) * Ho + oy) * Wo + ox) * K;
                         for (int ky = 0; ky < kh; ++ky) {
                           const int iy = oy * stride - pad + ky;
                           if (iy < 0 || iy >= H) continue;
                           for (int kx = 0; kx < kw; ++kx) {
                             const int ix = ox * stride - pad + kx;
                             if (ix < 0 || ix >= W) continue;
                             T* dst = gx.ptr() + ((static_cast<size_t>(bi) * H + iy) * W + ix) * C;
                             const T* src = row + (ky * kw + kx) * C;
                             for (int c = 0; c < C; ++c) dst[c] += src[c];
                           }
                         }
                       }
                     }
                   }
                 }
               });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) { return linear_impl(x, w, std::optional<Var<T>>()); }
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) { return linear_impl(x, w, std::optional(b)); }
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int pad) {
  return conv2d_impl(x, w, std::optional<Var<T>>(), stride, pad);
}
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  return conv2d_impl(x, w, std::optional(b), stride, pad);
}

// Layer normalization over the last dimension with affine gamma/beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const Tensor<T>& xv = x.value();
  const int C = xv.shape.back();
  const size_t N = xv.rows();
  Tensor<T> y(xv.shape);
  std::vector<T> inv_std(N);
  Tensor<T> xhat(xv.shape);
  const T* gm = gamma.value().ptr();
  const T* bt = beta.value().ptr();
  for (size_t r = 0; r < N; ++r) {
    const T* in = xv.ptr() + r * C;
    T mu = T(0);
    for (int c = 0; c < C; ++c) mu += in[c];
    mu /= C;
    T var = T(0);
    for (int c = 0; c < C; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= C;
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int c = 0; c < C; ++c) {
      const T h = (in[c] - mu) * is;
      xhat.data[r * C + c] = h;
      y.data[r * C + c] = h * gm[c] + bt[c];
    }
  }
  Graph<T>* g = x.graph;
  const bool ng = detail::any_grad({x, gamma, beta});
  if (!ng || !g->grad_enabled()) return g->op(std::move(y), false, nullptr);
  return g->op(std::move(y), true,
               [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor<T>& go) {
                 const T* gm = gamma.value().ptr();
                 if (gamma.needs_grad() || beta.needs_grad()) {
                   Tensor<T>& gg = g->grad(gamma);
                   Tensor<T>& gb = g->grad(beta);
                   for (size_t r = 0; r < N; ++r) {
                     for (int c = 0; c < C; ++c) {
                       gg.data[c] += go.data[r * C + c] * xhat.data[r * C + c];
                       gb.data[c] += go.data[r * C + c];
                     }
                   }
                 }
                 if (x.needs_grad()) {
                   Tensor<T>& gx = g->grad(x);
                   for (size_t r = 0; r < N; ++r) {
                     T m1 = T(0), m2 = T(0);
                     for (int c = 0; c < C; ++c) {
                       const T d = go.data[r * C + c] * gm[c];
                       m1 += d;
                       m2 += d * xhat.data[r * C + c];
                     }
                     m1 /= C;
                     m2 /= C;
                     for (int c = 0; c < C; ++c) {
                       const T d = go.data[r * C + c] * gm[c];
                       gx.data[r * C + c] += inv_std[r] * (d - m1 - xhat.data[r * C + c] * m2);
                     }
                   }
                 }
               });
}

// ------------------------------------------------------------- attention

// Multi-head self-attention inside non-overlapping window x window tiles
// (edge tiles may be smaller). `qkv` is [B, H, W, 3C] laid out as
// [q | k | v]; `rel_bias` is [(2*window-1)^2, heads], a learned bias indexed
// by the relative offset of the two tokens. Output is [B, H, W, C].
template <typename T>
Var<T> window_attention(Var<T> qkv, Var<T> rel_bias, int heads, int window) {
  const Tensor<T>& qv = qkv.value();
  detail::require_rank(qv, 4, "window_attention");
  const int B = qv.dim(0), H = qv.dim(1), W = qv.dim(2), C3 = qv.dim(3);
  if (C3 % 3 != 0 || (C3 / 3) % heads != 0) {
    throw ShapeError("window_attention: channels not divisible by 3*heads");
  }
  const int C = C3 / 3, D = C / heads, S = 2 * window - 1;
  if (rel_bias.value().size() != static_cast<size_t>(S * S * heads)) {
    throw ShapeError("window_attention: relative bias table size");
  }
  const T sc = T(1) / std::sqrt(static_cast<T>(D));

  struct Tile {
    std::vector<size_t> tokens;   // flat token index b*H*W + y*W + x
    std::vector<int> rel;         // n*n relative-offset indices
  };
  std::vector<Tile> tiles;
  for (int b = 0; b < B; ++b) {
    for (int ty = 0; ty < H; ty += window) {
      for (int tx = 0; tx < W; tx += window) {
        Tile t;
        std::vector<std::pair<int, int>> pos;
        for (int y = ty; y < std::min(H, ty + window); ++y) {
          for (int x = tx; x < std::min(W, tx + window); ++x) {
            t.tokens.push_back((static_cast<size_t>(b) * H + y) * W + x);
            pos.emplace_back(y - ty, x - tx);
          }
        }
        const size_t n = pos.size();
        t.rel.resize(n * n);
        for (size_t i = 0; i < n; ++i) {
          for (size_t j = 0; j < n; ++j) {
            t.rel[i * n + j] = (pos[i].first - pos[j].first + window - 1) * S +
                               (pos[i].second - pos[j].second + window - 1);
          }
        }
        tiles.push_back(std::move(t));
      }
    }
  }

  Tensor<T> out({B, H, W, C});
  const T* bias = rel_bias.value().ptr();
  Graph<T>* g = qkv.graph;
  const bool keep = g->grad_enabled() && detail::any_grad({qkv, rel_bias});
  std::vector<MatR<T>> probs;  // per tile and head
  if (keep) probs.reserve(tiles.size() * heads);
  for (const Tile& t : tiles) {
    const Eigen::Index n = static_cast<Eigen::Index>(t.tokens.size());
    for (int h = 0; h < heads; ++h) {
      MatR<T> Q(n, D), K(n, D), V(n, D);
      for (Eigen::Index i = 0; i < n; ++i) {
        const T* src = qv.ptr() + t.tokens[static_cast<size_t>(i)] * C3;
        std::copy(src + h * D, src + h * D + D, Q.row(i).data());
        std::copy(src + C + h * D, src + C + h * D + D, K.row(i).data());
        std::copy(src + 2 * C + h * D, src + 2 * C + h * D + D, V.row(i).data());
      }
      MatR<T> P = (Q * K.transpose()) * sc;
      for (Eigen::Index i = 0; i < n; ++i) {
        T* row = P.row(i).data();
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
          row[j] += bias[t.rel[static_cast<size_t>(i * n + j)] * heads + h];
          mx = std::max(mx, row[j]);
        }
        T z = T(0);
        for (Eigen::Index j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (Eigen::Index j = 0; j < n; ++j) row[j] /= z;
      }
      MatR<T> O = P * V;
      for (Eigen::Index i = 0; i < n; ++i) {
        T* dst = out.ptr() + t.tokens[static_cast<size_t>(i)] * C + h * D;
        std::copy(O.row(i).data(), O.row(i).data() + D, dst);
      }
      if (keep) probs.push_back(std::move(P));
    }
  }
  if (!keep) return g->op(std::move(out), false, nullptr);
  return g->op(std::move(out), true,
               [=, tiles = std::move(tiles), probs = std::move(probs)](const Tensor<T>& go) {
                 const Tensor<T>& qv = qkv.value();
                 Tensor<T>* gq = qkv.needs_grad() ? &g->grad(qkv) : nullptr;
                 Tensor<T>* gb = rel_bias.needs_grad() ? &g->grad(rel_bias) : nullptr;
                 size_t pi = 0;
                 for (const Tile& t : tiles) {
                   const Eigen::Index n = static_cast<Eigen::Index>(t.tokens.size());
                   for (int h = 0; h < heads; ++h, ++pi) {
                     const MatR<T>& P = probs[pi];
                     MatR<T> Q(n, D), K(n, D), V(n, D), dO(n, D);
                     for (Eigen::Index i = 0; i < n; ++i) {
                       const size_t tok = t.tokens[static_cast<size_t>(i)];
                       const T* src = qv.ptr() + tok * C3;
                       std::copy(src + h * D, src + h * D + D, Q.row(i).data());
                       std::copy(src + C + h * D, src + C + h * D + D, K.row(i).data());
                       std::copy(src + 2 * C + h * D, src + 2 * C + h * D + D, V.row(i).data());
                       const T* gsrc = go.ptr() + tok * C + h * D;
                       std::copy(gsrc, gsrc + D, dO.row(i).data());
                     }
                     MatR<T> dP = dO * V.transpose();
                     MatR<T> dS(n, n);
                     for (Eigen::Index i = 0; i < n; ++i) {
                       const T dot = P.row(i).dot(dP.row(i));
                       for (Eigen::Index j = 0; j < n; ++j) {
                         dS(i, j) = P(i, j) * (dP(i, j) - dot);
                       }
                     }
                     if (gb) {
                       for (Eigen::Index i = 0; i < n; ++i) {
                         for (Eigen::Index j = 0; j < n; ++j) {
                           gb->data[static_cast<size_t>(t.rel[static_cast<size_t>(i * n + j)] * heads + h)] += dS(i, j);
                         }
                       }
                     }
                     if (gq) {
                       MatR<T> dV = P.transpose() * dO;
                       MatR<T> dQ = (dS * K) * sc;
                       MatR<T> dK = (dS.transpose() * Q) * sc;
                       for (Eigen::Index i = 0; i < n; ++i) {
                         T* dst = gq->ptr() + t.tokens[static_cast<size_t>(i)] * C3;
                         for (int d = 0; d < D; ++d) {
                           dst[h * D + d] += dQ(i, d);
                           dst[C + h * D + d] += dK(i, d);
                           dst[2 * C + h * D + d] += dV(i, d);
                         }
                       }
                     }
                   }
                 }
               });
}

// ----------------------------------------------------------- reshaping

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != bv.rank() || av.rows() != bv.rows()) {
    throw ShapeError("concat_channels: " + shape_string(av.shape) + " vs " +
                     shape_string(bv.shape));
  }
  const int Ca = av.shape.back(), Cb = bv.shape.back();
  std::vector<int> shape = av.shape;
  shape.back() = Ca + Cb;
  Tensor<T> y(shape);
  const size_t N = av.rows();
  for (size_t r = 0; r < N; ++r) {
    std::copy(av.ptr() + r * Ca, av.ptr() + (r + 1) * Ca, y.ptr() + r * (Ca + Cb));
    std::copy(bv.ptr() + r * Cb, bv.ptr() + (r + 1) * Cb, y.ptr() + r * (Ca + Cb) + Ca);
  }
  Graph<T>* g = a.graph;
  return g->op(std::move(y), detail::any_grad({a, b}),
               [g, a, b, Ca, Cb, N](const Tensor<T>& go) {
                 if (a.needs_grad()) {
                   Tensor<T>& ga = g->grad(a);
                   for (size_t r = 0; r < N; ++r)
                     for (int c = 0; c < Ca; ++c) ga.data[r * Ca + c] += go.data[r * (Ca + Cb) + c];
                 }
                 if (b.needs_grad()) {
                   Tensor<T>& gb = g->grad(b);
                   for (size_t r = 0; r < N; ++r)
                     for (int c = 0; c < Cb; ++c) gb.data[r * Cb + c] += go.data[r * (Ca + Cb) + Ca + c];
                 }
               });
}

// Selects channels by index (in the given order).
template <typename T>
Var<T> gather_channels(Var<T> x, std::vector<int> index) {
  const Tensor<T>& xv = x.value();
  const int C = xv.shape.back();
  for (int i : index) {
    if (i < 0 || i >= C) throw ShapeError("gather_channels: index out of range");
  }
  const int K = static_cast<int>(index.size());
  std::vector<int> shape = xv.shape;
  shape.back() = K;
  Tensor<T> y(shape);
  const size_t N = xv.rows();
  for (size_t r = 0; r < N; ++r)
    for (int k = 0; k < K; ++k) y.data[r * K + k] = xv.data[r * C + index[k]];
  Graph<T>* g = x.graph;
  return g->op(std::move(y), x.needs_grad(),
               [g, x, index = std::move(index), C, K, N](const Tensor<T>& go) {
                 Tensor<T>& gx = g->grad(x);
                 for (size_t r = 0; r < N; ++r)
                   for (int k = 0; k < K; ++k) gx.data[r * C + index[k]] += go.data[r * K + k];
               });
}

template <typename T>
Var<T> mean_channels(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const int C = xv.shape.back();
  std::vector<int> shape = xv.shape;
  shape.back() = 1;
  Tensor<T> y(shape);
  const size_t N = xv.rows();
  for (size_t r = 0; r < N; ++r) {
    T s = T(0);
    for (int c = 0; c < C; ++c) s += xv.data[r * C + c];
    y.data[r] = s / C;
  }
  Graph<T>* g = x.graph;
  return g->op(std::move(y), x.needs_grad(), [g, x, C, N](const Tensor<T>& go) {
    Tensor<T>& gx = g->grad(x);
    for (size_t r = 0; r < N; ++r)
      for (int c = 0; c < C; ++c) gx.data[r * C + c] += go.data[r] / C;
  });
}

// y[..., c] = x[..., c] * a[c] + b[c]
template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> a, Var<T> b) {
  const Tensor<T>& xv = x.value();
  const int C = xv.shape.back();
  if (a.value().size() != static_cast<size_t>(C) || b.value().size() != static_cast<size_t>(C)) {
    throw ShapeError("channel_affine: parameter size");
  }
  const size_t N = xv.rows();
  Tensor<T> y(xv.shape);
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  for (size_t r = 0; r < N; ++r)
    for (int c = 0; c < C; ++c) y.data[r * C + c] = xv.data[r * C + c] * av[c] + bv[c];
  Graph<T>* g = x.graph;
  return g->op(std::move(y), detail::any_grad({x, a, b}),
               [g, x, a, b, C, N](const Tensor<T>& go) {
                 const Tensor<T>& xv = x.value();
                 const T* av = a.value().ptr();
                 if (x.needs_grad()) {
                   Tensor<T>& gx = g->grad(x);
                   for (size_t r = 0; r < N; ++r)
                     for (int c = 0; c < C; ++c) gx.data[r * C + c] += go.data[r * C + c] * av[c];
                 }
                 if (a.needs_grad()) {
                   Tensor<T>& ga = g->grad(a);
                   for (size_t r = 0; r < N; ++r)
                     for (int c = 0; c < C; ++c) ga.data[c] += go.data[r * C + c] * xv.data[r * C + c];
                 }
                 if (b.needs_grad()) {
                   Tensor<T>& gb = g->grad(b);
                   for (size_t r = 0; r < N; ++r)
                     for (int c = 0; c < C; ++c) gb.data[c] += go.data[r * C + c];
                 }
               });
}

// Repeats a [..., 1] map across C channels.
template <typename T>
Var<T> broadcast_channels(Var<T> x, int C) {
  const Tensor<T>& xv = x.value();
  if (xv.shape.back() != 1) throw ShapeError("broadcast_channels: needs 1 channel");
  std::vector<int> shape = xv.shape;
  shape.back() = C;
  Tensor<T> y(shape);
  const size_t N = xv.rows();
  for (size_t r = 0; r < N; ++r)
    for (int c = 0; c < C; ++c) y.data[r * C + c] = xv.data[r];
  Graph<T>* g = x.graph;
  return g->op(std::move(y), x.needs_grad(), [g, x, C, N](const Tensor<T>& go) {
    Tensor<T>& gx = g->grad(x);
    for (size_t r = 0; r < N; ++r) {
      T s = T(0);
      for (int c = 0; c < C; ++c) s += go.data[r * C + c];
      gx.data[r] += s;
    }
  });
}

// ------------------------------------------------------------- resizing

struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;
};

// Half-pixel-centered bilinear taps (align_corners = false).
inline LinearTaps linear_taps(int in, int out) {
  LinearTaps t;
  t.lo.resize(static_cast<size_t>(out));
  t.hi.resize(static_cast<size_t>(out));
  t.w_hi.resize(static_cast<size_t>(out));
  const double s = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    t.lo[static_cast<size_t>(o)] = lo;
    t.hi[static_cast<size_t>(o)] = hi;
    t.w_hi[static_cast<size_t>(o)] = src - lo;
  }
  return t;
}

template <typename T>
Var<T> resize_bilinear(Var<T> x, int Ho, int Wo) {
  const Tensor<T>& xv = x.value();
  detail::require_rank(xv, 4, "resize_bilinear");
  const int B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (H == Ho && W == Wo) return x;
  const LinearTaps ty = linear_taps(H, Ho), tx = linear_taps(W, Wo);
  Tensor<T> y({B, Ho, Wo, C});
  auto at = [H, W](int b, int r, int c) {
    return (static_cast<size_t>(b) * H + r) * W + c;
  };
  for (int b = 0; b < B; ++b) {
    for (int oy = 0; oy < Ho; ++oy) {
      const T wy = static_cast<T>(ty.w_hi[oy]);
      for (int ox = 0; ox < Wo; ++ox) {
        const T wx = static_cast<T>(tx.w_hi[ox]);
        const T* p00 = xv.ptr() + at(b, ty.lo[oy], tx.lo[ox]) * C;
        const T* p01 = xv.ptr() + at(b, ty.lo[oy], tx.hi[ox]) * C;
        const T* p10 = xv.ptr() + at(b, ty.hi[oy], tx.lo[ox]) * C;
        const T* p11 = xv.ptr() + at(b, ty.hi[oy], tx.hi[ox]) * C;
        T* dst = y.ptr() + ((static_cast<size_t>(b) * Ho + oy) * Wo + ox) * C;
        for (int c = 0; c < C; ++c) {
          dst[c] = (T(1) - wy) * ((T(1) - wx) * p00[c] + wx * p01[c]) +
                   wy * ((T(1) - wx) * p10[c] + wx * p11[c]);
        }
      }
    }
  }
  Graph<T>* g = x.graph;
  return g->op(std::move(y), x.needs_grad(),
               [=](const Tensor<T>& go) {
                 Tensor<T>& gx = g->grad(x);
                 for (int b = 0; b < B; ++b) {
                   for (int oy = 0; oy < Ho; ++oy) {
                     const T wy = static_cast<T>(ty.w_hi[oy]);
                     for (int ox = 0; ox < Wo; ++ox) {
                       const T wx = static_cast<T>(tx.w_hi[ox]);
                       const T* src = go.ptr() + ((static_cast<size_t>(b) * Ho + oy) * Wo + ox) * C;
                       T* p00 = gx.ptr() + at(b, ty.lo[oy], tx.lo[ox]) * C;
                       T* p01 = gx.ptr() + at(b, ty.lo[oy], tx.hi[ox]) * C;
                       T* p10 = gx.ptr() + at(b, ty.hi[oy], tx.lo[ox]) * C;
                       T* p11 = gx.ptr() + at(b, ty.hi[oy], tx.hi[ox]) * C;
                       for (int c = 0; c < C; ++c) {
                         p00[c] += (T(1) - wy) * (T(1) - wx) * src[c];
                         p01[c] += (T(1) - wy) * wx * src[c];
                         p10[c] += wy * (T(1) - wx) * src[c];
                         p11[c] += wy * wx * src[c];
                       }
                     }
                   }
                 }
               });
}

// ----------------------------------------------------- Gaussian latents

// mu + exp(log_var / 2) * noise, elementwise; `noise` is a constant.
template <typename T>
Var<T> reparameterize(Var<T> mu, Var<T> log_var, const Tensor<T>& noise) {
  require_same_shape(mu.value(), log_var.value(), "reparameterize");
  require_same_shape(mu.value(), noise, "reparameterize");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = log_var.value();
  Tensor<T> y(m.shape);
  for (size_t i = 0; i < y.size(); ++i) {
    y.data[i] = m.data[i] + std::exp(lv.data[i] / T(2)) * noise.data[i];
  }
  Graph<T>* g = mu.graph;
  return g->op(std::move(y), detail::any_grad({mu, log_var}),
               [g, mu, log_var, noise](const Tensor<T>& go) {
                 g->accumulate(mu, go);
                 if (log_var.needs_grad()) {
                   const Tensor<T>& lv = log_var.value();
                   Tensor<T>& gl = g->grad(log_var);
                   for (size_t i = 0; i < go.size(); ++i) {
                     gl.data[i] += go.data[i] * T(0.5) * std::exp(lv.data[i] / T(2)) * noise.data[i];
                   }
                 }
               });
}

// Closed-form KL(N(mu, exp(log_var)) || N(prior_mu, 1)) summed over all
// elements: -1/2 sum(1 + log_var - exp(log_var) - (mu - prior_mu)^2).
template <typename T>
Var<T> gaussian_kl(Var<T> mu, Var<T> log_var, Var<T> prior_mu) {
  require_same_shape(mu.value(), log_var.value(), "gaussian_kl");
  require_same_shape(mu.value(), prior_mu.value(), "gaussian_kl");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = log_var.value();
  const Tensor<T>& pm = prior_mu.value();
  double s = 0.0;
  for (size_t i = 0; i < m.size(); ++i) {
    const double d = static_cast<double>(m.data[i]) - pm.data[i];
    s += 1.0 + lv.data[i] - std::exp(static_cast<double>(lv.data[i])) - d * d;
  }
  Graph<T>* g = mu.graph;
  return g->op(Tensor<T>({1}, static_cast<T>(-0.5 * s)),
               detail::any_grad({mu, log_var, prior_mu}),
               [g, mu, log_var, prior_mu](const Tensor<T>& go) {
                 const Tensor<T>& m = mu.value();
                 const Tensor<T>& lv = log_var.value();
                 const Tensor<T>& pm = prior_mu.value();
                 const T k = go.data[0];
                 if (mu.needs_grad()) {
                   Tensor<T>& gm = g->grad(mu);
                   for (size_t i = 0; i < m.size(); ++i) gm.data[i] += k * (m.data[i] - pm.data[i]);
                 }
                 if (prior_mu.needs_grad()) {
                   Tensor<T>& gp = g->grad(prior_mu);
                   for (size_t i = 0; i < m.size(); ++i) gp.data[i] -= k * (m.data[i] - pm.data[i]);
                 }
                 if (log_var.needs_grad()) {
                   Tensor<T>& gl = g->grad(log_var);
                   for (size_t i = 0; i < m.size(); ++i) gl.data[i] += k * T(0.5) * (std::exp(lv.data[i]) - T(1));
                 }
               });
}

}  // namespace heightlens::nn

#endif  // HEIGHTLENS_NN_OPS_HPP_
