#pragma once

#include "tdrm/nn/linear.hpp"

namespace tdrm {

// Classic gated recurrent cell:
//   r = sig(Wr x + Ur h), u = sig(Wu x + Uu h), n = tanh(Wn x + r * (Un h)),
//   h' = u * h + (1 - u) * n.
// Input-side projection carries the bias; gates are chunked from one matmul.
template <typename S>
struct GruCell {
  Linear<S> x2h, h2h;
  int64_t hidden = 0;

  GruCell() = default;
  GruCell(ParamSet<S>& ps, const std::string& name, int64_t in, int64_t hidden_,
          const RngStream& init)
      : hidden(hidden_) {
    x2h = Linear<S>(ps, name + ".x2h", in, 3 * hidden, init, true);
    h2h = Linear<S>(ps, name + ".h2h", hidden, 3 * hidden, init, false);
  }

  Tensor<S> operator()(const Tensor<S>& h, const Tensor<S>& x) const {
    TDRM_CHECK(h.dim(-1) == hidden, "GruCell: bad hidden size");
    Tensor<S> xg = x2h(x);
    Tensor<S> hg = h2h(h);
    Tensor<S> r = sigmoid(slice(xg, -1, 0, hidden) + slice(hg, -1, 0, hidden));
    Tensor<S> u = sigmoid(slice(xg, -1, hidden, hidden) + slice(hg, -1, hidden, hidden));
    Tensor<S> n = tanh(slice(xg, -1, 2 * hidden, hidden) + r * slice(hg, -1, 2 * hidden, hidden));
    return u * h + (S(1) - u) * n;
  }
};

}  // namespace tdrm
