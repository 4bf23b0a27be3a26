#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

#include "cstl/gemm.hpp"
#include "cstl/param_set.hpp"
#include "cstl/tensor.hpp"

namespace cstl {

// Final embedding: one independent FC per body part, mapping the
// concatenated temporal/salient features to C_e channels.
struct OutputConfig {
  int parts = 32;
  int in_dim = 0;
  int embed_dim = 256;
};

inline std::string output_param_name(int part, const char* which) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "out.part%02d.%s", part, which);
  return buf;
}

template <typename T>
void output_init(ParamSet<T>& ps, const OutputConfig& cfg, Rng& rng) {
  for (int k = 0; k < cfg.parts; ++k) {
    ps.add(output_param_name(k, "w"),
           uniform_init<T>({cfg.in_dim, cfg.embed_dim}, cfg.in_dim, rng));
    ps.add(output_param_name(k, "b"), Tensor<T>({cfg.embed_dim}));
  }
}

// x[B,K,in_dim] -> F_O[B,K,C_e]
template <typename T>
Tensor<T> output_forward(const Tensor<T>& x, const ParamSet<T>& ps,
                         const OutputConfig& cfg) {
  if (x.rank() != 3 || x.extent(1) != cfg.parts || x.extent(2) != cfg.in_dim) {
    throw std::invalid_argument("output_forward: expected [B," +
                                std::to_string(cfg.parts) + "," +
                                std::to_string(cfg.in_dim) + "], got " +
                                shape_str(x.shape()));
  }
  const int batch = x.extent(0);
  Tensor<T> y({batch, cfg.parts, cfg.embed_dim});
  for (int k = 0; k < cfg.parts; ++k) {
    const auto& w = ps.value(output_param_name(k, "w"));
    const auto& b = ps.value(output_param_name(k, "b"));
    gemm_nn(batch, cfg.embed_dim, cfg.in_dim,
            x.data() + static_cast<std::int64_t>(k) * cfg.in_dim,
            cfg.parts * cfg.in_dim, w.data(), cfg.embed_dim,
            y.data() + static_cast<std::int64_t>(k) * cfg.embed_dim,
            cfg.parts * cfg.embed_dim);
    for (int bi = 0; bi < batch; ++bi) {
      T* row = y.data() +
               (static_cast<std::int64_t>(bi) * cfg.parts + k) * cfg.embed_dim;
      for (int c = 0; c < cfg.embed_dim; ++c) row[c] += b.data()[c];
    }
  }
  return y;
}

template <typename T>
void output_backward(const Tensor<T>& x, const Tensor<T>& dy, ParamSet<T>& ps,
                     const OutputConfig& cfg, Tensor<T>& dx) {
  const int batch = x.extent(0);
  for (int k = 0; k < cfg.parts; ++k) {
    const auto& w = ps.value(output_param_name(k, "w"));
    auto& dw = ps.grad(output_param_name(k, "w"));
    auto& db = ps.grad(output_param_name(k, "b"));
    gemm_nt(batch, cfg.in_dim, cfg.embed_dim,
            dy.data() + static_cast<std::int64_t>(k) * cfg.embed_dim,
            cfg.parts * cfg.embed_dim, w.data(), cfg.embed_dim,
            dx.data() + static_cast<std::int64_t>(k) * cfg.in_dim,
            cfg.parts * cfg.in_dim, true);
    gemm_tn(cfg.in_dim, cfg.embed_dim, batch,
            x.data() + static_cast<std::int64_t>(k) * cfg.in_dim,
            cfg.parts * cfg.in_dim,
            dy.data() + static_cast<std::int64_t>(k) * cfg.embed_dim,
            cfg.parts * cfg.embed_dim, dw.data(), cfg.embed_dim, true);
    for (int bi = 0; bi < batch; ++bi) {
      const T* row = dy.data() +
                     (static_cast<std::int64_t>(bi) * cfg.parts + k) * cfg.embed_dim;
      for (int c = 0; c < cfg.embed_dim; ++c) db.data()[c] += row[c];
    }
  }
}

}  // namespace cstl
