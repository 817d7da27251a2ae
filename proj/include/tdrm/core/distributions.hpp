#pragma once

#include "tdrm/core/ops.hpp"

namespace tdrm {

// Probabilities are clamped to [kProbEps, 1] before any log.
inline constexpr double kProbEps = 1e-8;

template <typename S>
Tensor<S> clamp_probs(const Tensor<S>& p) {
  return clamp(p, static_cast<S>(kProbEps), S(1));
}

// Row-wise softmax over the trailing (class) dimension; the leading structure
// (batch, groups) is preserved. Non-finite logits are a numeric-domain error.
template <typename S>
Tensor<S> softmax_groups(const Tensor<S>& logits) {
  for (S v : logits.value())
    TDRM_CHECK_FINITE(std::isfinite(v), "softmax_groups: non-finite logit");
  return softmax_last(logits);
}

// KL(q || p) summed over the class dimension and over groups. Inputs are
// probability tensors shaped [..., G, C]; the result drops both trailing dims
// (a bare [G, C] input yields a scalar).
template <typename S>
Tensor<S> kl_categorical(const Tensor<S>& q, const Tensor<S>& p) {
  TDRM_CHECK(q.shape() == p.shape(), "kl_categorical: shape mismatch " + shape_str(q.shape()) +
                                         " vs " + shape_str(p.shape()));
  TDRM_CHECK(q.rank() >= 2, "kl_categorical expects [..., groups, classes]");
  Tensor<S> cq = clamp_probs(q);
  Tensor<S> cp = clamp_probs(p);
  Tensor<S> per_class = q * (log(cq) - log(cp));
  return sum_last(sum_last(per_class));
}

// KL balancing: beta * KL(sg(q) || p) + (1 - beta) * KL(q || sg(p)).
// The value equals kl_categorical(q, p); only the gradient routing differs.
template <typename S>
Tensor<S> kl_balanced(const Tensor<S>& q, const Tensor<S>& p, S beta) {
  TDRM_CHECK(beta >= S(0) && beta <= S(1), "kl_balanced: beta outside [0, 1]");
  Tensor<S> prior_side = kl_categorical(stop_grad(q), p);
  Tensor<S> posterior_side = kl_categorical(q, stop_grad(p));
  return mul_scalar(prior_side, beta) + mul_scalar(posterior_side, S(1) - beta);
}

// Entropy over the trailing dimension: -sum p log p, shape [..., C] -> [...].
template <typename S>
Tensor<S> cat_entropy(const Tensor<S>& probs) {
  Tensor<S> cp = clamp_probs(probs);
  return -sum_last(probs * log(cp));
}

// Bernoulli negative log-likelihood from logits: softplus(l) - l * target.
template <typename S>
Tensor<S> bernoulli_nll(const Tensor<S>& logits, const Tensor<S>& targets) {
  return softplus(logits) - logits * targets;
}

// Unit-variance Gaussian negative log-likelihood up to an additive constant,
// elementwise: 0.5 * (pred - target)^2.
template <typename S>
Tensor<S> half_sq_err(const Tensor<S>& pred, const Tensor<S>& target) {
  return mul_scalar(square(pred - target), S(0.5));
}

}  // namespace tdrm
