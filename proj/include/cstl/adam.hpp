#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cstl/param_set.hpp"

namespace cstl {

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;  // first moment, parallel to ParamSet order
  std::vector<Tensor<T>> v;  // second moment
  std::int64_t step = 0;

  static AdamState zeros_like(const ParamSet<T>& ps) {
    AdamState st;
    st.m.reserve(ps.size());
    st.v.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      st.m.emplace_back(ps[i].value.shape());
      st.v.emplace_back(ps[i].value.shape());
    }
    return st;
  }
};

// Standard Adam update with bias correction, applied from the accumulated
// gradients; frozen parameters are left untouched.
template <typename T>
void adam_step(ParamSet<T>& ps, AdamState<T>& st, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8)) {
  if (st.m.size() != ps.size() || st.v.size() != ps.size()) {
    throw std::invalid_argument("adam_step: state size mismatch");
  }
  ++st.step;
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(st.step));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(st.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (!p.trainable) continue;
    if (!st.m[i].same_shape(p.value)) {
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
    }
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    const std::int64_t n = p.value.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
      v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace cstl
