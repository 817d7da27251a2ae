#pragma once

#include "tdrm/core/ops.hpp"

namespace tdrm {

namespace detail {

// Patch matrix for a [C, H, W] image over a (hg x wg) position grid:
// col[(c*kh+u)*kw+v][h*wg+w] = img[c][h*s-p+u][w*s-p+v], zero outside.
template <typename S>
void im2col(const S* img, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t s,
            int64_t p, int64_t hg, int64_t wg, S* col) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t u = 0; u < kh; ++u)
      for (int64_t v = 0; v < kw; ++v) {
        S* row = col + ((ch * kh + u) * kw + v) * hg * wg;
        for (int64_t y = 0; y < hg; ++y) {
          int64_t iy = y * s - p + u;
          for (int64_t x = 0; x < wg; ++x) {
            int64_t ix = x * s - p + v;
            row[y * wg + x] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                  ? img[(ch * h + iy) * w + ix]
                                  : S(0);
          }
        }
      }
}

// Adjoint scatter of im2col: accumulates col back into the image.
template <typename S>
void col2im_add(const S* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t s,
                int64_t p, int64_t hg, int64_t wg, S* img) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t u = 0; u < kh; ++u)
      for (int64_t v = 0; v < kw; ++v) {
        const S* row = col + ((ch * kh + u) * kw + v) * hg * wg;
        for (int64_t y = 0; y < hg; ++y) {
          int64_t iy = y * s - p + u;
          if (iy < 0 || iy >= h) continue;
          for (int64_t x = 0; x < wg; ++x) {
            int64_t ix = x * s - p + v;
            if (ix >= 0 && ix < w) img[(ch * h + iy) * w + ix] += row[y * wg + x];
          }
        }
      }
}

}  // namespace detail

// x [N, Ci, H, W], w [Co, Ci, kh, kw], b [Co] -> [N, Co, Ho, Wo].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int64_t stride,
                 int64_t pad) {
  TDRM_CHECK(x.rank() == 4 && w.rank() == 4, "conv2d expects NCHW input and OIHW weight");
  int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  TDRM_CHECK(w.dim(1) == ci, "conv2d: channel mismatch");
  TDRM_CHECK((h + 2 * pad - kh) % stride == 0 && (ww + 2 * pad - kw) % stride == 0,
             "conv2d: spatial size not divisible by stride");
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (ww + 2 * pad - kw) / stride + 1;
  int64_t ckk = ci * kh * kw;
  std::vector<S> val(static_cast<size_t>(n * co * ho * wo));
  std::vector<S> col(static_cast<size_t>(ckk * ho * wo));
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  for (int64_t i = 0; i < n; ++i) {
    detail::im2col(&xv[i * ci * h * ww], ci, h, ww, kh, kw, stride, pad, ho, wo, col.data());
    detail::ECMap<S> W(wv.data(), co, ckk);
    detail::ECMap<S> C(col.data(), ckk, ho * wo);
    detail::EMap<S> Y(&val[i * co * ho * wo], co, ho * wo);
    Y.noalias() = W * C;
    for (int64_t oc = 0; oc < co; ++oc) Y.row(oc).array() += bv[oc];
  }
  return make_op<S>({n, co, ho, wo}, std::move(val), {x, w, b},
                    [n, ci, h, ww, co, kh, kw, stride, pad, ho, wo, ckk](Node<S>& n_) {
    const auto& g = n_.grad;
    const auto& xv2 = parent_value(n_, 0);
    const auto& wv2 = parent_value(n_, 1);
    std::vector<S> col(static_cast<size_t>(ckk * ho * wo));
    std::vector<S> dcol(static_cast<size_t>(ckk * ho * wo));
    for (int64_t i = 0; i < n; ++i) {
      detail::ECMap<S> G(&g[i * co * ho * wo], co, ho * wo);
      if (wants_grad(n_, 1)) {
        detail::im2col(&xv2[i * ci * h * ww], ci, h, ww, kh, kw, stride, pad, ho, wo, col.data());
        detail::ECMap<S> C(col.data(), ckk, ho * wo);
        detail::EMap<S> GW(parent_grad(n_, 1).data(), co, ckk);
        GW.noalias() += G * C.transpose();
      }
      if (wants_grad(n_, 0)) {
        detail::ECMap<S> W(wv2.data(), co, ckk);
        detail::EMap<S> DC(dcol.data(), ckk, ho * wo);
        DC.noalias() = W.transpose() * G;
        detail::col2im_add(dcol.data(), ci, h, ww, kh, kw, stride, pad, ho, wo,
                           &parent_grad(n_, 0)[i * ci * h * ww]);
      }
      if (wants_grad(n_, 2)) {
        auto& gb = parent_grad(n_, 2);
        for (int64_t oc = 0; oc < co; ++oc) gb[oc] += G.row(oc).sum();
      }
    }
  });
}

// x [N, Ci, H, W], w [Ci, Co, kh, kw], b [Co] -> [N, Co, Ho, Wo]
// with Ho = (H-1)*stride + kh - 2*pad.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           int64_t stride, int64_t pad) {
  TDRM_CHECK(x.rank() == 4 && w.rank() == 4, "conv_transpose2d expects NCHW input");
  int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  TDRM_CHECK(w.dim(0) == ci, "conv_transpose2d: channel mismatch");
  int64_t co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h - 1) * stride + kh - 2 * pad;
  int64_t wo = (ww - 1) * stride + kw - 2 * pad;
  TDRM_CHECK(ho > 0 && wo > 0, "conv_transpose2d: empty output");
  int64_t ckk = co * kh * kw;
  std::vector<S> val(static_cast<size_t>(n * co * ho * wo), S(0));
  std::vector<S> col(static_cast<size_t>(ckk * h * ww));
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  for (int64_t i = 0; i < n; ++i) {
    detail::ECMap<S> W(wv.data(), ci, ckk);
    detail::ECMap<S> X(&xv[i * ci * h * ww], ci, h * ww);
    detail::EMap<S> C(col.data(), ckk, h * ww);
    C.noalias() = W.transpose() * X;
    S* out = &val[i * co * ho * wo];
    detail::col2im_add(col.data(), co, ho, wo, kh, kw, stride, pad, h, ww, out);
    for (int64_t oc = 0; oc < co; ++oc)
      for (int64_t j = 0; j < ho * wo; ++j) out[oc * ho * wo + j] += bv[oc];
  }
  return make_op<S>({n, co, ho, wo}, std::move(val), {x, w, b},
                    [n, ci, h, ww, co, kh, kw, stride, pad, ho, wo, ckk](Node<S>& n_) {
    const auto& g = n_.grad;
    const auto& xv2 = parent_value(n_, 0);
    const auto& wv2 = parent_value(n_, 1);
    std::vector<S> gcol(static_cast<size_t>(ckk * h * ww));
    for (int64_t i = 0; i < n; ++i) {
      detail::im2col(&g[i * co * ho * wo], co, ho, wo, kh, kw, stride, pad, h, ww, gcol.data());
      detail::ECMap<S> GC(gcol.data(), ckk, h * ww);
      if (wants_grad(n_, 0)) {
        detail::ECMap<S> W(wv2.data(), ci, ckk);
        detail::EMap<S> GX(&parent_grad(n_, 0)[i * ci * h * ww], ci, h * ww);
        GX.noalias() += W * GC;
      }
      if (wants_grad(n_, 1)) {
        detail::ECMap<S> X(&xv2[i * ci * h * ww], ci, h * ww);
        detail::EMap<S> GW(parent_grad(n_, 1).data(), ci, ckk);
        GW.noalias() += X * GC.transpose();
      }
      if (wants_grad(n_, 2)) {
        auto& gb = parent_grad(n_, 2);
        const S* gi = &g[i * co * ho * wo];
        for (int64_t oc = 0; oc < co; ++oc)
          for (int64_t j = 0; j < ho * wo; ++j) gb[oc] += gi[oc * ho * wo + j];
      }
    }
  });
}

}  // namespace tdrm
