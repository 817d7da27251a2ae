#pragma once

#include "tdrm/nn/linear.hpp"

namespace tdrm {

enum class GatingMode { kNone, kIdentityMapReordering, kGruGate };
enum class PositionalMode { kLearnedAbsolute, kRelative };

struct TransformerSpec {
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t d_model = 64;
  int64_t d_ff = 128;
  int64_t t_max = 100;
  GatingMode gating = GatingMode::kIdentityMapReordering;
  PositionalMode positional = PositionalMode::kLearnedAbsolute;
  bool concat_layer_outputs = false;
};

// Residual gate in the GRU style: out = (1 - z) * x + z * hcand, where the
// update gate carries a bias that keeps the block near the identity at init.
template <typename S>
struct GruGate {
  Linear<S> y3, x2, xg;
  Tensor<S> bg;
  int64_t d = 0;

  GruGate() = default;
  GruGate(ParamSet<S>& ps, const std::string& name, int64_t d_, const RngStream& init) : d(d_) {
    y3 = Linear<S>(ps, name + ".y3", d, 3 * d, init, false);
    x2 = Linear<S>(ps, name + ".x2", d, 2 * d, init, false);
    xg = Linear<S>(ps, name + ".xg", d, d, init, false);
    bg = ps.create(name + ".bg", {d}, std::vector<S>(static_cast<size_t>(d), S(2)));
  }

  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& y) const {
    Tensor<S> yg = y3(y);
    Tensor<S> xp = x2(x);
    Tensor<S> r = sigmoid(slice(yg, -1, 0, d) + slice(xp, -1, 0, d));
    Tensor<S> z = sigmoid(slice(yg, -1, d, d) + slice(xp, -1, d, d) - bg);
    Tensor<S> h = tanh(slice(yg, -1, 2 * d, d) + xg(r * x));
    return (S(1) - z) * x + z * h;
  }
};

// Pre-norm causal transformer over embedded tokens [B, T, d_model].
//
// Block variants: plain pre-norm residual, identity-map reordering (ReLU on
// the sublayer before the residual add), or a GRU-style gate replacing the
// residual add. Positions are either a learned absolute table (capacity
// t_max; longer sequences are a contract violation) or a learned per-head
// relative bias on attention logits with lag clamped at t_max - 1 (no length
// limit). With concat_layer_outputs the per-block outputs are concatenated
// into [B, T, n_layers * d_model]; otherwise the last block's output passes
// through a final layer norm.
//
// Incremental decoding keeps per-layer key/value tensors in a Cache; extend()
// reproduces forward() column-for-column, and the cached tensors stay on the
// tape, so imagination rollouts remain differentiable.
template <typename S>
class CausalTransformer {
 public:
  struct Layer {
    LayerNorm<S> ln1, ln2;
    Linear<S> q, k, v, o, ff1, ff2;
    GruGate<S> gate1, gate2;
  };

  struct Cache {
    std::vector<Tensor<S>> k, v;  // per layer [B, heads, len, dh]
    int64_t batch = 0;
    int64_t len = 0;
  };

  CausalTransformer() = default;
  CausalTransformer(const TransformerSpec& spec, ParamSet<S>& ps, const std::string& prefix,
                    const RngStream& init)
      : spec_(spec) {
    TDRM_CHECK(spec.d_model % spec.n_heads == 0, "d_model must divide by n_heads");
    for (int64_t l = 0; l < spec.n_layers; ++l) {
      std::string nm = prefix + ".block" + std::to_string(l);
      Layer layer;
      layer.ln1 = LayerNorm<S>(ps, nm + ".ln1", spec.d_model);
      layer.ln2 = LayerNorm<S>(ps, nm + ".ln2", spec.d_model);
      layer.q = Linear<S>(ps, nm + ".q", spec.d_model, spec.d_model, init);
      // A key-side bias shifts every score of a query equally and cancels in
      // the softmax; leaving it out keeps every parameter live.
      layer.k = Linear<S>(ps, nm + ".k", spec.d_model, spec.d_model, init, false);
      layer.v = Linear<S>(ps, nm + ".v", spec.d_model, spec.d_model, init);
      layer.o = Linear<S>(ps, nm + ".o", spec.d_model, spec.d_model, init);
      layer.ff1 = Linear<S>(ps, nm + ".ff1", spec.d_model, spec.d_ff, init);
      layer.ff2 = Linear<S>(ps, nm + ".ff2", spec.d_ff, spec.d_model, init);
      if (spec.gating == GatingMode::kGruGate) {
        layer.gate1 = GruGate<S>(ps, nm + ".gate1", spec.d_model, init);
        layer.gate2 = GruGate<S>(ps, nm + ".gate2", spec.d_model, init);
      }
      layers_.push_back(std::move(layer));
    }
    if (spec.positional == PositionalMode::kLearnedAbsolute) {
      pos_table_ = ps.create(prefix + ".pos", {spec.t_max, spec.d_model},
                             normal_init<S>(init, prefix + ".pos",
                                            spec.t_max * spec.d_model, S(0.02)));
    } else {
      rel_table_ = ps.create(
          prefix + ".rel", {spec.n_heads, spec.t_max},
          std::vector<S>(static_cast<size_t>(spec.n_heads * spec.t_max), S(0)));
    }
    if (!spec.concat_layer_outputs) final_ln_ = LayerNorm<S>(ps, prefix + ".ln_out", spec.d_model);
  }

  const TransformerSpec& spec() const { return spec_; }
  int64_t out_dim() const {
    return spec_.concat_layer_outputs ? spec_.n_layers * spec_.d_model : spec_.d_model;
  }

  // Parallel pass over a full token sequence.
  Tensor<S> forward(const Tensor<S>& tokens) const {
    TDRM_CHECK(tokens.rank() == 3 && tokens.dim(2) == spec_.d_model,
               "transformer: tokens must be [B,T,d_model]");
    int64_t t = tokens.dim(1);
    if (spec_.positional == PositionalMode::kLearnedAbsolute)
      TDRM_CHECK(t <= spec_.t_max, "sequence length " + std::to_string(t) +
                                       " exceeds positional capacity " +
                                       std::to_string(spec_.t_max));
    Tensor<S> x = tokens;
    if (spec_.positional == PositionalMode::kLearnedAbsolute)
      x = x + slice(pos_table_, 0, 0, t);
    Tensor<S> mask = causal_mask(t);
    std::vector<Tensor<S>> outs;
    for (const auto& layer : layers_) {
      x = apply_block(layer, x, [&](const Tensor<S>& xin) { return attn_full(layer, xin, mask); });
      x = apply_block(layer, x, [&](const Tensor<S>& xin) { return ff(layer, xin); },
                      /*second=*/true);
      outs.push_back(x);
    }
    return finish(outs);
  }

  Cache make_cache(int64_t batch) const {
    Cache c;
    c.batch = batch;
    c.len = 0;
    c.k.resize(layers_.size());
    c.v.resize(layers_.size());
    return c;
  }

  // Appends one token column [B, 1, d_model]; returns the output column.
  Tensor<S> extend(Cache& cache, const Tensor<S>& token) const {
    TDRM_CHECK(token.rank() == 3 && token.dim(1) == 1 && token.dim(2) == spec_.d_model,
               "extend: token must be [B,1,d_model]");
    TDRM_CHECK(cache.batch == token.dim(0), "extend: batch mismatch with cache");
    if (spec_.positional == PositionalMode::kLearnedAbsolute)
      TDRM_CHECK(cache.len < spec_.t_max, "context exceeds positional capacity " +
                                              std::to_string(spec_.t_max));
    Tensor<S> x = token;
    if (spec_.positional == PositionalMode::kLearnedAbsolute)
      x = x + slice(pos_table_, 0, cache.len, 1);
    std::vector<Tensor<S>> outs;
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      x = apply_block(layer, x,
                      [&](const Tensor<S>& xin) { return attn_step(layer, cache, l, xin); });
      x = apply_block(layer, x, [&](const Tensor<S>& xin) { return ff(layer, xin); },
                      /*second=*/true);
      outs.push_back(x);
    }
    ++cache.len;
    return finish(outs);
  }

  // Drops the oldest `drop` positions (relative positions only; absolute
  // positions would shift under the window). Cached keys/values at deeper
  // layers keep whatever influence the dropped prefix had on them; only the
  // attention window shrinks.
  void truncate_front(Cache& cache, int64_t drop) const {
    TDRM_CHECK(spec_.positional == PositionalMode::kRelative,
               "context truncation requires relative positions");
    TDRM_CHECK(drop >= 0 && drop < cache.len, "truncate_front: bad drop count");
    if (drop == 0) return;
    for (size_t l = 0; l < layers_.size(); ++l) {
      cache.k[l] = slice(cache.k[l], 2, drop, cache.len - drop);
      cache.v[l] = slice(cache.v[l], 2, drop, cache.len - drop);
    }
    cache.len -= drop;
  }

 private:
  static Tensor<S> causal_mask(int64_t t) {
    std::vector<S> m(static_cast<size_t>(t * t), S(0));
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = i + 1; j < t; ++j) m[i * t + j] = S(-1e9);
    return Tensor<S>::constant({t, t}, std::move(m));
  }

  template <typename F>
  Tensor<S> apply_block(const Layer& layer, const Tensor<S>& x, F&& sublayer,
                        bool second = false) const {
    Tensor<S> y = sublayer(second ? layer.ln2(x) : layer.ln1(x));
    switch (spec_.gating) {
      case GatingMode::kNone:
        return x + y;
      case GatingMode::kIdentityMapReordering:
        return x + relu(y);
      case GatingMode::kGruGate:
        return (second ? layer.gate2 : layer.gate1)(x, relu(y));
    }
    contract_fail("unreachable gating mode");
  }

  Tensor<S> ff(const Layer& layer, const Tensor<S>& x) const {
    return layer.ff2(relu(layer.ff1(x)));
  }

  // [B, T, D] -> [B*heads, T, dh]
  Tensor<S> split_heads(const Tensor<S>& x) const {
    int64_t b = x.dim(0), t = x.dim(1);
    int64_t h = spec_.n_heads, dh = spec_.d_model / h;
    return reshape(permute(reshape(x, {b, t, h, dh}), {0, 2, 1, 3}), {b * h, t, dh});
  }

  Tensor<S> merge_heads(const Tensor<S>& x, int64_t b) const {
    int64_t h = spec_.n_heads, dh = spec_.d_model / h;
    int64_t t = x.dim(1);
    return reshape(permute(reshape(x, {b, h, t, dh}), {0, 2, 1, 3}), {b, t, spec_.d_model});
  }

  Tensor<S> attn_full(const Layer& layer, const Tensor<S>& x, const Tensor<S>& mask) const {
    int64_t b = x.dim(0), t = x.dim(1);
    int64_t dh = spec_.d_model / spec_.n_heads;
    Tensor<S> q = split_heads(layer.q(x));
    Tensor<S> k = split_heads(layer.k(x));
    Tensor<S> v = split_heads(layer.v(x));
    Tensor<S> scores =
        mul_scalar(matmul(q, transpose_last2(k)), S(1) / std::sqrt(static_cast<S>(dh)));
    scores = scores + mask;
    if (spec_.positional == PositionalMode::kRelative) {
      Tensor<S> bias = rel_bias_full(rel_table_, t);  // [heads, T, T]
      scores = reshape(reshape(scores, {b, spec_.n_heads, t, t}) + bias,
                       {b * spec_.n_heads, t, t});
    }
    Tensor<S> w = softmax_last(scores);
    return layer.o(merge_heads(matmul(w, v), b));
  }

  Tensor<S> attn_step(const Layer& layer, Cache& cache, size_t l, const Tensor<S>& x) const {
    int64_t b = x.dim(0);
    int64_t h = spec_.n_heads, dh = spec_.d_model / h;
    Tensor<S> q = split_heads(layer.q(x));                            // [BH,1,dh]
    Tensor<S> kn = reshape(split_heads(layer.k(x)), {b, h, 1, dh});
    Tensor<S> vn = reshape(split_heads(layer.v(x)), {b, h, 1, dh});
    cache.k[l] = cache.len == 0 ? kn : concat<S>({cache.k[l], kn}, 2);
    cache.v[l] = cache.len == 0 ? vn : concat<S>({cache.v[l], vn}, 2);
    int64_t t = cache.len + 1;
    Tensor<S> kk = reshape(cache.k[l], {b * h, t, dh});
    Tensor<S> vv = reshape(cache.v[l], {b * h, t, dh});
    Tensor<S> scores =
        mul_scalar(matmul(q, transpose_last2(kk)), S(1) / std::sqrt(static_cast<S>(dh)));
    if (spec_.positional == PositionalMode::kRelative) {
      Tensor<S> bias = rel_bias_row(rel_table_, t);  // [heads, 1, t]
      scores = reshape(reshape(scores, {b, h, 1, t}) + bias, {b * h, 1, t});
    }
    Tensor<S> w = softmax_last(scores);
    return layer.o(merge_heads(matmul(w, vv), b));
  }

  Tensor<S> finish(const std::vector<Tensor<S>>& outs) const {
    if (spec_.concat_layer_outputs) return concat(outs, -1);
    return final_ln_(outs.back());
  }

  TransformerSpec spec_;
  std::vector<Layer> layers_;
  Tensor<S> pos_table_, rel_table_;
  LayerNorm<S> final_ln_;
};

}  // namespace tdrm
