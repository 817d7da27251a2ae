#pragma once

#include "tdrm/core/ops_conv.hpp"
#include "tdrm/nn/linear.hpp"

namespace tdrm {

namespace detail {
inline int64_t halvings_to_4(int64_t hw) {
  TDRM_CHECK(hw >= 8 && (hw & (hw - 1)) == 0, "image side must be a power of two >= 8");
  int64_t n = 0;
  while (hw > 4) {
    hw /= 2;
    ++n;
  }
  return n;
}
}  // namespace detail

template <typename S>
struct Conv2dLayer {
  Tensor<S> w, b;
  int64_t stride = 2, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParamSet<S>& ps, const std::string& name, int64_t ci, int64_t co, int64_t k,
              const RngStream& init) {
    w = ps.create(name + ".w", {co, ci, k, k},
                  xavier_uniform<S>(init, name + ".w", ci * k * k, co * k * k, co * ci * k * k));
    b = ps.create(name + ".b", {co}, std::vector<S>(static_cast<size_t>(co), S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename S>
struct ConvTranspose2dLayer {
  Tensor<S> w, b;
  int64_t stride = 2, pad = 1;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(ParamSet<S>& ps, const std::string& name, int64_t ci, int64_t co, int64_t k,
                       const RngStream& init) {
    w = ps.create(name + ".w", {ci, co, k, k},
                  xavier_uniform<S>(init, name + ".w", ci * k * k, co * k * k, ci * co * k * k));
    b = ps.create(name + ".b", {co}, std::vector<S>(static_cast<size_t>(co), S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv_transpose2d(x, w, b, stride, pad); }
};

// [N, H, W, 3] float images in [0, 1] -> [N, embed]. Kernel-4 stride-2
// halvings down to 4x4, channel count doubling from base_depth, then a linear
// projection. Input is centered by -0.5 before the first convolution.
template <typename S>
struct ImageEncoder {
  int64_t hw = 0, embed = 0;
  std::vector<Conv2dLayer<S>> convs;
  Linear<S> proj;

  ImageEncoder() = default;
  ImageEncoder(ParamSet<S>& ps, const std::string& name, int64_t hw_, int64_t base_depth,
               int64_t embed_, const RngStream& init)
      : hw(hw_), embed(embed_) {
    int64_t n = detail::halvings_to_4(hw);
    int64_t ci = 3;
    for (int64_t i = 0; i < n; ++i) {
      int64_t co = base_depth << i;
      convs.emplace_back(ps, name + ".conv" + std::to_string(i), ci, co, 4, init);
      ci = co;
    }
    proj = Linear<S>(ps, name + ".proj", ci * 16, embed, init);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    TDRM_CHECK(x.rank() == 4 && x.dim(1) == hw && x.dim(2) == hw && x.dim(3) == 3,
               "ImageEncoder: expected [N," + std::to_string(hw) + "," + std::to_string(hw) +
                   ",3], got " + shape_str(x.shape()));
    Tensor<S> h = add_scalar(permute(x, {0, 3, 1, 2}), S(-0.5));
    for (const auto& c : convs) h = elu(c(h));
    return proj(reshape(h, {x.dim(0), h.size() / x.dim(0)}));
  }
};

// [N, F] features -> [N, H, W, 3] image means (offset +0.5 so the initial
// output sits at mid-gray). Mirrors ImageEncoder's geometry.
template <typename S>
struct ImageDecoder {
  int64_t hw = 0, feat = 0;
  Linear<S> proj;
  std::vector<ConvTranspose2dLayer<S>> deconvs;

  ImageDecoder() = default;
  ImageDecoder(ParamSet<S>& ps, const std::string& name, int64_t feat_, int64_t base_depth,
               int64_t hw_, const RngStream& init)
      : hw(hw_), feat(feat_) {
    int64_t n = detail::halvings_to_4(hw);
    int64_t ch = base_depth << (n - 1);
    proj = Linear<S>(ps, name + ".proj", feat, ch * 16, init);
    for (int64_t i = 0; i < n; ++i) {
      int64_t co = i + 1 == n ? 3 : (ch >> (i + 1));
      deconvs.emplace_back(ps, name + ".deconv" + std::to_string(i), ch >> i, co, 4, init);
    }
  }

  Tensor<S> operator()(const Tensor<S>& f) const {
    TDRM_CHECK(f.rank() == 2 && f.dim(1) == feat, "ImageDecoder: bad feature shape");
    int64_t ch = deconvs.front().w.dim(0);
    Tensor<S> h = reshape(proj(f), {f.dim(0), ch, 4, 4});
    for (size_t i = 0; i + 1 < deconvs.size(); ++i) h = elu(deconvs[i](h));
    Tensor<S> img = add_scalar(deconvs.back()(h), S(0.5));
    return permute(img, {0, 2, 3, 1});
  }
};

}  // namespace tdrm
