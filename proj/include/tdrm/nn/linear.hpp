#pragma once

#include "tdrm/core/ops.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"

namespace tdrm {

// Initializers draw from a child stream keyed by the parameter name, so the
// values do not depend on construction order elsewhere in the model.
template <typename S>
std::vector<S> xavier_uniform(const RngStream& root, const std::string& name, int64_t fan_in,
                              int64_t fan_out, int64_t n) {
  RngStream r = root.child(name);
  S bound = std::sqrt(S(6) / static_cast<S>(fan_in + fan_out));
  std::vector<S> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<S>(2.0 * r.uniform() - 1.0) * bound;
  return v;
}

template <typename S>
std::vector<S> normal_init(const RngStream& root, const std::string& name, int64_t n, S scale) {
  RngStream r = root.child(name);
  std::vector<S> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<S>(r.normal()) * scale;
  return v;
}

// Affine map over the trailing dimension; accepts [N, in] or [B, T, in].
template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out] if biased
  int64_t in = 0, out = 0;
  bool biased = true;

  Linear() = default;
  Linear(ParamSet<S>& ps, const std::string& name, int64_t in_, int64_t out_,
         const RngStream& init, bool bias = true)
      : in(in_), out(out_), biased(bias) {
    w = ps.create(name + ".w", {in, out}, xavier_uniform<S>(init, name + ".w", in, out, in * out));
    if (bias) b = ps.create(name + ".b", {out}, std::vector<S>(static_cast<size_t>(out), S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    TDRM_CHECK(x.dim(-1) == in, "Linear: trailing dim " + shape_str(x.shape()) +
                                    " does not match in=" + std::to_string(in));
    Shape os = x.shape();
    os.back() = out;
    Tensor<S> flat = x.rank() == 2 ? x : reshape(x, {x.size() / in, in});
    Tensor<S> y = matmul(flat, w);
    if (biased) y = y + b;
    return x.rank() == 2 ? y : reshape(y, os);
  }
};

// Dense stack with ELU between layers; the final layer is linear.
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(ParamSet<S>& ps, const std::string& name, int64_t in, int64_t hidden, int64_t depth,
      int64_t out, const RngStream& init) {
    TDRM_CHECK(depth >= 1, "Mlp: depth must be >= 1");
    int64_t d = in;
    for (int64_t i = 0; i + 1 < depth; ++i) {
      layers.emplace_back(ps, name + "." + std::to_string(i), d, hidden, init);
      d = hidden;
    }
    layers.emplace_back(ps, name + "." + std::to_string(depth - 1), d, out, init);
  }

  Tensor<S> operator()(Tensor<S> x) const {
    for (size_t i = 0; i + 1 < layers.size(); ++i) x = elu(layers[i](x));
    return layers.back()(x);
  }
};

template <typename S>
struct LayerNorm {
  Tensor<S> gain, bias;
  S eps = S(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamSet<S>& ps, const std::string& name, int64_t d) {
    gain = ps.create(name + ".gain", {d}, std::vector<S>(static_cast<size_t>(d), S(1)));
    bias = ps.create(name + ".bias", {d}, std::vector<S>(static_cast<size_t>(d), S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm_last(x, gain, bias, eps); }
};

}  // namespace tdrm
