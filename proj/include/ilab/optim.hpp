#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ilab/errors.hpp"
#include "ilab/tensor.hpp"

namespace ilab {

/// Bias-corrected Adam with optional linear warmup (lr scaled by
/// step/warmup while step <= warmup).
template <class S>
struct AdamStateT {
  std::vector<TensorT<S>> m;
  std::vector<TensorT<S>> v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t warmup = 0;

  static AdamStateT init(const std::vector<TensorT<S>*>& params, double lr,
                         std::int64_t warmup = 0) {
    AdamStateT st;
    st.lr = lr;
    st.warmup = warmup;
    for (auto* p : params) {
      st.m.push_back(TensorT<S>::zeros(p->shape));
      st.v.push_back(TensorT<S>::zeros(p->shape));
    }
    return st;
  }
};

using AdamState = AdamStateT<double>;

template <class S>
void adam_step(const std::vector<TensorT<S>*>& params,
               const std::vector<const TensorT<S>*>& grads, AdamStateT<S>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DimError("adam_step: parameter/gradient count mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  double lr = state.lr;
  if (state.warmup > 0 && state.step <= state.warmup)
    lr *= t / static_cast<double>(state.warmup);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    if (!p.same_shape(g)) throw DimError("adam_step: shape mismatch");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = static_cast<double>(g.data[j]);
      const double mj = state.beta1 * static_cast<double>(m.data[j]) + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * static_cast<double>(v.data[j]) + (1.0 - state.beta2) * gj * gj;
      m.data[j] = static_cast<S>(mj);
      v.data[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p.data[j] = static_cast<S>(static_cast<double>(p.data[j]) -
                                 lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace ilab
