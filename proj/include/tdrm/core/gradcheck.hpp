#pragma once

#include <cmath>
#include <functional>

#include "tdrm/core/params.hpp"
#include "tdrm/core/session.hpp"
#include "tdrm/core/tensor.hpp"

namespace tdrm {

template <typename S>
struct GradCheckResult {
  S max_rel_err = S(0);
  std::string worst_param;
  int64_t worst_index = -1;
  S worst_analytic = S(0);
  S worst_numeric = S(0);
  bool finite = true;
  std::string message;

  bool ok(S tol) const { return finite && max_rel_err <= tol; }
};

// Central-difference check of the reverse pass over every trainable parameter.
//
// `f` must rebuild the objective from scratch on each call (resetting any RNG
// it owns), so that replay evaluations visit the same stochastic sites in the
// same order; see GradCheckSession for how those sites are frozen. The error
// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), maximized over
// parameter elements. Non-finite objective values abort with the offending
// parameter named in the result.
template <typename S>
GradCheckResult<S> finite_diff_check(const std::function<Tensor<S>()>& f, ParamSet<S>& params,
                                     S epsilon) {
  GradCheckResult<S> res;
  GradCheckSession<S> sess;
  typename GradCheckSession<S>::Scope scope(&sess);

  sess.begin_record();
  Tensor<S> loss = f();
  TDRM_CHECK(loss.size() == 1, "finite_diff_check: objective must be scalar");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    res.finite = false;
    res.message = "objective non-finite at the base point";
    return res;
  }
  int64_t epoch = loss.backward();

  struct Checked {
    std::string name;
    Tensor<S> tensor;
    std::vector<S> analytic;
  };
  std::vector<Checked> checked;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    std::vector<S> g(static_cast<size_t>(e.tensor.size()), S(0));
    if (e.tensor.grad_fresh(epoch)) g = e.tensor.grad();
    checked.push_back({e.name, e.tensor, std::move(g)});
  }

  auto eval = [&]() -> S {
    NoGradGuard ng;
    sess.begin_replay();
    return f().item();
  };

  for (auto& c : checked) {
    auto& v = c.tensor.raw_value();
    for (size_t i = 0; i < v.size(); ++i) {
      S orig = v[i];
      v[i] = orig + epsilon;
      S lp = eval();
      v[i] = orig - epsilon;
      S lm = eval();
      v[i] = orig;
      if (!std::isfinite(static_cast<double>(lp)) || !std::isfinite(static_cast<double>(lm))) {
        res.finite = false;
        res.message = "objective non-finite while perturbing " + c.name;
        res.worst_param = c.name;
        res.worst_index = static_cast<int64_t>(i);
        return res;
      }
      S numeric = (lp - lm) / (S(2) * epsilon);
      S analytic = c.analytic[i];
      S denom = std::max({std::abs(analytic), std::abs(numeric), static_cast<S>(1e-8)});
      S rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = c.name;
        res.worst_index = static_cast<int64_t>(i);
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace tdrm
