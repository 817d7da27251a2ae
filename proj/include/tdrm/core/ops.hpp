#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdrm/core/rng.hpp"
#include "tdrm/core/session.hpp"
#include "tdrm/core/tensor.hpp"

namespace tdrm {

namespace detail {

// Odometer walk over `out`, tracking two input offsets via aligned strides.
template <typename F>
void bcast_iter(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  int64_t n = numel(out);
  int r = static_cast<int>(out.size());
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int i = r - 1; i >= 0; --i) {
      ++idx[i];
      ia += sa[i];
      ib += sb[i];
      if (idx[i] < out[i]) break;
      ia -= sa[i] * out[i];
      ib -= sb[i] * out[i];
      idx[i] = 0;
    }
  }
}

template <typename F>
void strided_iter(const Shape& out, const Shape& s, F&& f) {
  int64_t n = numel(out);
  int r = static_cast<int>(out.size());
  std::vector<int64_t> idx(r, 0);
  int64_t ii = 0;
  for (int64_t o = 0; o < n; ++o) {
    f(o, ii);
    for (int i = r - 1; i >= 0; --i) {
      ++idx[i];
      ii += s[i];
      if (idx[i] < out[i]) break;
      ii -= s[i] * out[i];
      idx[i] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise with broadcasting

template <typename S, typename FwdF, typename DaF, typename DbF>
Tensor<S> ew_binary(const Tensor<S>& a, const Tensor<S>& b, FwdF fwd, DaF dfa, DbF dfb) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  std::vector<S> val(static_cast<size_t>(numel(os)));
  const auto& av = a.value();
  const auto& bv = b.value();
  bool same = a.shape() == b.shape();
  if (same) {
    for (size_t i = 0; i < val.size(); ++i) val[i] = fwd(av[i], bv[i]);
  } else {
    Shape sa = broadcast_strides(a.shape(), os);
    Shape sb = broadcast_strides(b.shape(), os);
    detail::bcast_iter(os, sa, sb,
                       [&](int64_t o, int64_t ia, int64_t ib) { val[o] = fwd(av[ia], bv[ib]); });
  }
  Shape ash = a.shape(), bsh = b.shape();
  return make_op<S>(os, std::move(val), {a, b}, [ash, bsh, dfa, dfb](Node<S>& n) {
    const auto& g = n.grad;
    const auto& av2 = parent_value(n, 0);
    const auto& bv2 = parent_value(n, 1);
    bool wa = wants_grad(n, 0), wb = wants_grad(n, 1);
    if (ash == bsh) {
      if (wa) {
        auto& ga = parent_grad(n, 0);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += dfa(g[i], av2[i], bv2[i]);
      }
      if (wb) {
        auto& gb = parent_grad(n, 1);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += dfb(g[i], av2[i], bv2[i]);
      }
    } else {
      Shape sa = broadcast_strides(ash, n.shape);
      Shape sb = broadcast_strides(bsh, n.shape);
      auto& ga = parent_grad(n, 0);
      auto& gb = parent_grad(n, 1);
      detail::bcast_iter(n.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
        if (wa) ga[ia] += dfa(g[o], av2[ia], bv2[ib]);
        if (wb) gb[ib] += dfb(g[o], av2[ia], bv2[ib]);
      });
    }
  });
}

template <typename S, typename FwdF, typename BwdF>
Tensor<S> ew_unary(const Tensor<S>& x, FwdF fwd, BwdF bwd) {
  std::vector<S> val(static_cast<size_t>(x.size()));
  const auto& xv = x.value();
  for (size_t i = 0; i < val.size(); ++i) val[i] = fwd(xv[i]);
  return make_op<S>(x.shape(), std::move(val), {x}, [bwd](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    const auto& g = n.grad;
    const auto& xv2 = parent_value(n, 0);
    const auto& yv = n.value;
    auto& gx = parent_grad(n, 0);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += bwd(g[i], xv2[i], yv[i]);
  });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return ew_binary(
      a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return ew_binary(
      a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return ew_binary(
      a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <typename S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) {
  return ew_binary(
      a, b, [](S x, S y) { return x / y; }, [](S g, S, S y) { return g / y; },
      [](S g, S x, S y) { return -g * x / (y * y); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return ew_unary(
      x, [c](S v) { return v + c; }, [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return ew_unary(
      x, [c](S v) { return v * c; }, [c](S g, S, S) { return g * c; });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& x, S c) { return add_scalar(x, c); }
template <typename S>
Tensor<S> operator+(S c, const Tensor<S>& x) { return add_scalar(x, c); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& x, S c) { return add_scalar(x, -c); }
template <typename S>
Tensor<S> operator-(S c, const Tensor<S>& x) { return add_scalar(mul_scalar(x, S(-1)), c); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& x, S c) { return mul_scalar(x, c); }
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& x) { return mul_scalar(x, c); }
template <typename S>
Tensor<S> operator/(const Tensor<S>& x, S c) { return mul_scalar(x, S(1) / c); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& x) { return mul_scalar(x, S(-1)); }

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return std::exp(v); }, [](S g, S, S y) { return g * y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return std::log(v); }, [](S g, S v, S) { return g / v; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return std::sqrt(v); }, [](S g, S, S y) { return g / (S(2) * y); });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return v * v; }, [](S g, S v, S) { return S(2) * g * v; });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return std::tanh(v); }, [](S g, S, S y) { return g * (S(1) - y * y); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S g, S, S y) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S g, S v, S) { return v > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> elu(const Tensor<S>& x) {
  return ew_unary(
      x, [](S v) { return v > S(0) ? v : std::exp(v) - S(1); },
      [](S g, S v, S y) { return v > S(0) ? g : g * (y + S(1)); });
}

// Numerically stable ln(1 + e^x).
template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return ew_unary(
      x,
      [](S v) { return std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](S g, S v, S) { return g / (S(1) + std::exp(-v)); });
}

// Gradient passes only where x lands strictly inside the clamp interval.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return ew_unary(
      x, [lo, hi](S v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](S g, S v, S) { return (v >= lo && v <= hi) ? g : S(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.value()) acc += v;
  return make_op<S>({1}, {acc}, {x}, [](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    S g = n.grad[0];
    for (auto& v : gx) v += g;
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return sum_all(x) / static_cast<S>(x.size());
}

// Reduce the trailing dimension: [..., D] -> [...] (rank-1 input -> [1]).
template <typename S>
Tensor<S> sum_last(const Tensor<S>& x) {
  int64_t d = x.dim(-1);
  Shape os = x.rank() > 1 ? Shape(x.shape().begin(), x.shape().end() - 1) : Shape{1};
  int64_t rows = numel(os);
  std::vector<S> val(static_cast<size_t>(rows), S(0));
  const auto& xv = x.value();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) val[r] += xv[r * d + j];
  return make_op<S>(os, std::move(val), {x}, [d](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    const auto& g = n.grad;
    for (size_t r = 0; r < g.size(); ++r)
      for (int64_t j = 0; j < d; ++j) gx[r * d + j] += g[r];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape ns) {
  TDRM_CHECK(numel(ns) == x.size(),
             "reshape " + shape_str(x.shape()) + " -> " + shape_str(ns) + " changes numel");
  std::vector<S> val = x.value();
  return make_op<S>(std::move(ns), std::move(val), {x}, [](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    for (size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
  });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& axes) {
  TDRM_CHECK(static_cast<int>(axes.size()) == x.rank(), "permute: axes rank mismatch");
  Shape os(axes.size());
  Shape xs = strides_of(x.shape());
  Shape ps(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) {
    os[i] = x.shape()[axes[i]];
    ps[i] = xs[axes[i]];
  }
  std::vector<S> val(static_cast<size_t>(x.size()));
  const auto& xv = x.value();
  detail::strided_iter(os, ps, [&](int64_t o, int64_t ii) { val[o] = xv[ii]; });
  return make_op<S>(os, std::move(val), {x}, [ps](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    const auto& g = n.grad;
    detail::strided_iter(n.shape, ps, [&](int64_t o, int64_t ii) { gx[ii] += g[o]; });
  });
}

template <typename S>
Tensor<S> transpose_last2(const Tensor<S>& x) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int64_t start, int64_t len) {
  if (axis < 0) axis += x.rank();
  TDRM_CHECK(axis >= 0 && axis < x.rank(), "slice: bad axis");
  int64_t d = x.shape()[axis];
  TDRM_CHECK(start >= 0 && len > 0 && start + len <= d, "slice: range out of bounds");
  Shape os = x.shape();
  os[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  std::vector<S> val(static_cast<size_t>(numel(os)));
  const auto& xv = x.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      std::copy_n(&xv[(o * d + start + k) * inner], inner, &val[(o * len + k) * inner]);
  return make_op<S>(os, std::move(val), {x}, [d, start, len, outer, inner](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    const auto& g = n.grad;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < len; ++k) {
        const S* src = &g[(o * len + k) * inner];
        S* dst = &gx[(o * d + start + k) * inner];
        for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
  });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  TDRM_CHECK(!xs.empty(), "concat of nothing");
  int r = xs[0].rank();
  if (axis < 0) axis += r;
  TDRM_CHECK(axis >= 0 && axis < r, "concat: bad axis");
  Shape os = xs[0].shape();
  int64_t total = 0;
  std::vector<int64_t> lens;
  for (const auto& x : xs) {
    TDRM_CHECK(x.rank() == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      TDRM_CHECK(i == axis || x.shape()[i] == os[i], "concat: shape mismatch off-axis");
    lens.push_back(x.shape()[axis]);
    total += x.shape()[axis];
  }
  os[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[i];
  for (int i = axis + 1; i < r; ++i) inner *= os[i];
  std::vector<S> val(static_cast<size_t>(numel(os)));
  int64_t off = 0;
  for (size_t p = 0; p < xs.size(); ++p) {
    const auto& xv = xs[p].value();
    int64_t len = lens[p];
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(&xv[o * len * inner], len * inner, &val[(o * total + off) * inner]);
    off += len;
  }
  return make_op<S>(os, std::move(val), xs, [lens, total, outer, inner](Node<S>& n) {
    const auto& g = n.grad;
    int64_t off2 = 0;
    for (size_t p = 0; p < lens.size(); ++p) {
      int64_t len = lens[p];
      if (wants_grad(n, p)) {
        auto& gp = parent_grad(n, p);
        for (int64_t o = 0; o < outer; ++o) {
          const S* src = &g[(o * total + off2) * inner];
          S* dst = &gp[o * len * inner];
          for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
        }
      }
      off2 += len;
    }
  });
}

// Stack along a fresh leading axis.
template <typename S>
Tensor<S> stack0(const std::vector<Tensor<S>>& xs) {
  std::vector<Tensor<S>> re;
  re.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    re.push_back(reshape(x, s));
  }
  return concat(re, 0);
}

// ---------------------------------------------------------------------------
// Matrix multiply (2D x 2D, or batched 3D x 3D with equal batch), Eigen GEMM.

namespace detail {
template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  TDRM_CHECK(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
             "matmul expects 2D x 2D or 3D x 3D, got " + shape_str(a.shape()) + " x " +
                 shape_str(b.shape()));
  int64_t nb = a.rank() == 3 ? a.dim(0) : 1;
  int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), nn = b.dim(-1);
  TDRM_CHECK(k == k2 && (a.rank() == 2 || a.dim(0) == b.dim(0)),
             "matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape os = a.rank() == 3 ? Shape{nb, m, nn} : Shape{m, nn};
  std::vector<S> val(static_cast<size_t>(numel(os)));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int64_t i = 0; i < nb; ++i) {
    detail::ECMap<S> A(&av[i * m * k], m, k);
    detail::ECMap<S> B(&bv[i * k * nn], k, nn);
    detail::EMap<S> C(&val[i * m * nn], m, nn);
    C.noalias() = A * B;
  }
  return make_op<S>(os, std::move(val), {a, b}, [nb, m, k, nn](Node<S>& n) {
    const auto& g = n.grad;
    const auto& av2 = parent_value(n, 0);
    const auto& bv2 = parent_value(n, 1);
    for (int64_t i = 0; i < nb; ++i) {
      detail::ECMap<S> A(&av2[i * m * k], m, k);
      detail::ECMap<S> B(&bv2[i * k * nn], k, nn);
      detail::ECMap<S> G(&g[i * m * nn], m, nn);
      if (wants_grad(n, 0)) {
        detail::EMap<S> GA(&parent_grad(n, 0)[i * m * k], m, k);
        GA.noalias() += G * B.transpose();
      }
      if (wants_grad(n, 1)) {
        detail::EMap<S> GB(&parent_grad(n, 1)[i * k * nn], k, nn);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family over the trailing dimension.

template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x) {
  int64_t d = x.dim(-1);
  int64_t rows = x.size() / d;
  std::vector<S> val(static_cast<size_t>(x.size()));
  const auto& xv = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = &xv[r * d];
    S* out = &val[r * d];
    S m = *std::max_element(in, in + d);
    S s = 0;
    for (int64_t j = 0; j < d; ++j) {
      out[j] = std::exp(in[j] - m);
      s += out[j];
    }
    for (int64_t j = 0; j < d; ++j) out[j] /= s;
  }
  return make_op<S>(x.shape(), std::move(val), {x}, [d, rows](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    const auto& g = n.grad;
    const auto& p = n.value;
    for (int64_t r = 0; r < rows; ++r) {
      S dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += g[r * d + j] * p[r * d + j];
      for (int64_t j = 0; j < d; ++j)
        gx[r * d + j] += p[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

template <typename S>
Tensor<S> log_softmax_last(const Tensor<S>& x) {
  int64_t d = x.dim(-1);
  int64_t rows = x.size() / d;
  std::vector<S> val(static_cast<size_t>(x.size()));
  const auto& xv = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = &xv[r * d];
    S* out = &val[r * d];
    S m = *std::max_element(in, in + d);
    S s = 0;
    for (int64_t j = 0; j < d; ++j) s += std::exp(in[j] - m);
    S lse = m + std::log(s);
    for (int64_t j = 0; j < d; ++j) out[j] = in[j] - lse;
  }
  return make_op<S>(x.shape(), std::move(val), {x}, [d, rows](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gx = parent_grad(n, 0);
    const auto& g = n.grad;
    const auto& y = n.value;
    for (int64_t r = 0; r < rows; ++r) {
      S gs = 0;
      for (int64_t j = 0; j < d; ++j) gs += g[r * d + j];
      for (int64_t j = 0; j < d; ++j)
        gx[r * d + j] += g[r * d + j] - std::exp(y[r * d + j]) * gs;
    }
  });
}

// LayerNorm over the trailing dimension with learned gain/bias.
template <typename S>
Tensor<S> layer_norm_last(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                          S eps = S(1e-5)) {
  int64_t d = x.dim(-1);
  TDRM_CHECK(gain.size() == d && bias.size() == d, "layer_norm: gain/bias size mismatch");
  int64_t rows = x.size() / d;
  std::vector<S> val(static_cast<size_t>(x.size()));
  std::vector<S> inv(static_cast<size_t>(rows)), mu(static_cast<size_t>(rows));
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = &xv[r * d];
    S m = 0;
    for (int64_t j = 0; j < d; ++j) m += in[j];
    m /= static_cast<S>(d);
    S var = 0;
    for (int64_t j = 0; j < d; ++j) var += (in[j] - m) * (in[j] - m);
    var /= static_cast<S>(d);
    S iv = S(1) / std::sqrt(var + eps);
    mu[r] = m;
    inv[r] = iv;
    for (int64_t j = 0; j < d; ++j) val[r * d + j] = (in[j] - m) * iv * gv[j] + bv[j];
  }
  return make_op<S>(x.shape(), std::move(val), {x, gain, bias},
                    [d, rows, mu = std::move(mu), inv = std::move(inv)](Node<S>& n) {
    const auto& g = n.grad;
    const auto& xv2 = parent_value(n, 0);
    const auto& gv2 = parent_value(n, 1);
    for (int64_t r = 0; r < rows; ++r) {
      const S* in = &xv2[r * d];
      const S* gr = &g[r * d];
      if (wants_grad(n, 0)) {
        auto& gx = parent_grad(n, 0);
        S mean_dxh = 0, mean_dxh_xh = 0;
        for (int64_t j = 0; j < d; ++j) {
          S xh = (in[j] - mu[r]) * inv[r];
          S dxh = gr[j] * gv2[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh;
        }
        mean_dxh /= static_cast<S>(d);
        mean_dxh_xh /= static_cast<S>(d);
        for (int64_t j = 0; j < d; ++j) {
          S xh = (in[j] - mu[r]) * inv[r];
          S dxh = gr[j] * gv2[j];
          gx[r * d + j] += inv[r] * (dxh - mean_dxh - xh * mean_dxh_xh);
        }
      }
      if (wants_grad(n, 1)) {
        auto& gg = parent_grad(n, 1);
        for (int64_t j = 0; j < d; ++j)
          gg[j] += gr[j] * (in[j] - mu[r]) * inv[r];
      }
      if (wants_grad(n, 2)) {
        auto& gb = parent_grad(n, 2);
        for (int64_t j = 0; j < d; ++j) gb[j] += gr[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient-routing primitives

// Identity value, no gradient flow. Under a gradcheck session the value is
// recorded on the base pass and substituted verbatim on replay passes.
template <typename S>
Tensor<S> stop_grad(const Tensor<S>& x) {
  auto* sess = GradCheckSession<S>::current();
  if (sess && sess->replaying()) return Tensor<S>::constant(x.shape(), sess->fetch());
  std::vector<S> v = x.value();
  if (sess && sess->recording()) sess->push(v);
  return Tensor<S>::constant(x.shape(), std::move(v));
}

// Straight-through categorical sample over the trailing dimension: forward
// emits a one-hot per row, backward passes gradients through to the
// probabilities unchanged (sample + probs - stop_grad(probs)). Consumes one
// uniform per row in row order. Under a gradcheck session the sampled offset
// (one-hot minus base probabilities) is recorded and replayed, which keeps
// replay evaluations smooth in the parameters.
template <typename S>
Tensor<S> st_sample(const Tensor<S>& probs, RngStream& rng) {
  int64_t c = probs.dim(-1);
  int64_t rows = probs.size() / c;
  const auto& pv = probs.value();
  std::vector<S> val;
  auto* sess = GradCheckSession<S>::current();
  if (sess && sess->replaying()) {
    const auto& c0 = sess->fetch();
    TDRM_CHECK(c0.size() == pv.size(), "st_sample replay: site shape mismatch");
    val.resize(pv.size());
    for (size_t i = 0; i < pv.size(); ++i) val[i] = c0[i] + pv[i];
  } else {
    val.assign(pv.size(), S(0));
    for (int64_t r = 0; r < rows; ++r) {
      int64_t idx = rng.categorical(&pv[r * c], c);
      val[r * c + idx] = S(1);
    }
    if (sess && sess->recording()) {
      std::vector<S> c0(pv.size());
      for (size_t i = 0; i < pv.size(); ++i) c0[i] = val[i] - pv[i];
      sess->push(std::move(c0));
    }
  }
  return make_op<S>(probs.shape(), std::move(val), {probs}, [](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gp = parent_grad(n, 0);
    for (size_t i = 0; i < n.grad.size(); ++i) gp[i] += n.grad[i];
  });
}

// Constant one-hot rows; index -1 encodes the null action (all-zero row).
template <typename S>
Tensor<S> one_hot(const std::vector<int>& ids, int64_t classes) {
  std::vector<S> v(ids.size() * classes, S(0));
  for (size_t i = 0; i < ids.size(); ++i) {
    TDRM_CHECK(ids[i] >= -1 && ids[i] < classes, "one_hot: index out of range");
    if (ids[i] >= 0) v[i * classes + ids[i]] = S(1);
  }
  return Tensor<S>::constant({static_cast<int64_t>(ids.size()), classes}, std::move(v));
}

// ---------------------------------------------------------------------------
// Learned relative attention bias. `table` is [heads, max_lag]; lags at or
// beyond max_lag share the last entry.

// Full [heads, T, T] bias for parallel attention; future entries are zero
// (they get masked away by the causal mask anyway).
template <typename S>
Tensor<S> rel_bias_full(const Tensor<S>& table, int64_t t) {
  int64_t h = table.dim(0), l = table.dim(1);
  std::vector<S> val(static_cast<size_t>(h * t * t), S(0));
  const auto& tv = table.value();
  for (int64_t a = 0; a < h; ++a)
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j <= i; ++j)
        val[(a * t + i) * t + j] = tv[a * l + std::min(i - j, l - 1)];
  return make_op<S>({h, t, t}, std::move(val), {table}, [h, t, l](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gt = parent_grad(n, 0);
    const auto& g = n.grad;
    for (int64_t a = 0; a < h; ++a)
      for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j <= i; ++j)
          gt[a * l + std::min(i - j, l - 1)] += g[(a * t + i) * t + j];
  });
}

// Bias row [heads, 1, t_len] for an incremental query at position t_len-1
// attending keys 0..t_len-1.
template <typename S>
Tensor<S> rel_bias_row(const Tensor<S>& table, int64_t t_len) {
  int64_t h = table.dim(0), l = table.dim(1);
  std::vector<S> val(static_cast<size_t>(h * t_len));
  const auto& tv = table.value();
  for (int64_t a = 0; a < h; ++a)
    for (int64_t j = 0; j < t_len; ++j)
      val[a * t_len + j] = tv[a * l + std::min(t_len - 1 - j, l - 1)];
  return make_op<S>({h, 1, t_len}, std::move(val), {table}, [h, t_len, l](Node<S>& n) {
    if (!wants_grad(n, 0)) return;
    auto& gt = parent_grad(n, 0);
    const auto& g = n.grad;
    for (int64_t a = 0; a < h; ++a)
      for (int64_t j = 0; j < t_len; ++j)
        gt[a * l + std::min(t_len - 1 - j, l - 1)] += g[a * t_len + j];
  });
}

}  // namespace tdrm
