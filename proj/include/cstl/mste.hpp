#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "cstl/kernels.hpp"
#include "cstl/param_set.hpp"

namespace cstl {

// Multi-scale temporal extraction over the part-pooled features P[B,N,C,K].
// Frame scale is P itself; short-term is two serial temporal convolutions
// (receptive fields 3 and 5, summed); long-term is a sigmoid-gated weighted
// mean over all frames, broadcast back to every frame.
struct MsteConfig {
  bool frame = true;
  bool short_term = true;
  bool long_term = true;
  int bottleneck_ratio = 16;

  int num_scales() const {
    return (frame ? 1 : 0) + (short_term ? 1 : 0) + (long_term ? 1 : 0);
  }
};

template <typename T>
struct MultiScale {
  Tensor<T> frame;       // empty when the scale is disabled
  Tensor<T> short_term;
  Tensor<T> long_term;

  // Enabled scales in fixed frame/short/long order.
  std::vector<const Tensor<T>*> enabled() const {
    std::vector<const Tensor<T>*> out;
    if (!frame.empty()) out.push_back(&frame);
    if (!short_term.empty()) out.push_back(&short_term);
    if (!long_term.empty()) out.push_back(&long_term);
    return out;
  }
};

template <typename T>
void mste_init(ParamSet<T>& ps, int channels, const MsteConfig& cfg, Rng& rng) {
  if (cfg.num_scales() == 0) {
    throw std::invalid_argument("mste: at least one scale must be enabled");
  }
  if (cfg.short_term) {
    ps.add("mste.short.conv1.w",
           uniform_init<T>({channels, channels, 3}, channels * 3, rng));
    ps.add("mste.short.conv1.b", Tensor<T>({channels}));
    ps.add("mste.short.conv2.w",
           uniform_init<T>({channels, channels, 3}, channels * 3, rng));
    ps.add("mste.short.conv2.b", Tensor<T>({channels}));
  }
  if (cfg.long_term) {
    const int mid = std::max(1, channels / cfg.bottleneck_ratio);
    ps.add("mste.long.fc1.w", uniform_init<T>({channels, mid}, channels, rng));
    ps.add("mste.long.fc1.b", Tensor<T>({mid}));
    ps.add("mste.long.fc2.w", uniform_init<T>({mid, channels}, mid, rng));
    ps.add("mste.long.fc2.b", Tensor<T>({channels}));
  }
}

template <typename T>
struct MsteCache {
  // short-term chain, in [B,K,C,N] layout
  Tensor<T> p_bkcn, y1;
  // long-term chain
  Tensor<T> p_bnkc, h1, r1, z2, gate;      // gate[B,N,C,K]
  Tensor<T> den, tl0;                      // [B,C,K]
  Tensor<T> p;                             // the input P[B,N,C,K]
};

template <typename T>
MultiScale<T> mste_forward(const Tensor<T>& p, const ParamSet<T>& ps,
                           const MsteConfig& cfg, MsteCache<T>* cache = nullptr) {
  if (p.rank() != 4) {
    throw std::invalid_argument("mste: input must be [B,N,C,K]");
  }
  const int batch = p.extent(0), frames = p.extent(1), c = p.extent(2),
            parts = p.extent(3);
  if (frames < 1) throw std::invalid_argument("mste: empty frame axis");

  MultiScale<T> out;
  if (cfg.frame) out.frame = p;

  if (cfg.short_term) {
    auto p_bkcn = permute(p, {0, 3, 2, 1});
    auto y1 = conv1d_temporal(p_bkcn, ps.value("mste.short.conv1.w"),
                              ps.value("mste.short.conv1.b"));
    auto y2 = conv1d_temporal(y1, ps.value("mste.short.conv2.w"),
                              ps.value("mste.short.conv2.b"));
    Tensor<T> ts_bkcn(y1.shape());
    for (std::int64_t i = 0; i < y1.numel(); ++i) {
      ts_bkcn.data()[i] = y1.data()[i] + y2.data()[i];
    }
    out.short_term = permute(ts_bkcn, {0, 3, 2, 1});
    if (cache) {
      cache->p_bkcn = std::move(p_bkcn);
      cache->y1 = std::move(y1);
    }
  }

  if (cfg.long_term) {
    auto p_bnkc = permute(p, {0, 1, 3, 2});
    auto h1 = linear(p_bnkc, ps.value("mste.long.fc1.w"),
                     ps.value("mste.long.fc1.b"));
    auto r1 = activation(h1, Act::kRelu);
    auto z2 = linear(r1, ps.value("mste.long.fc2.w"),
                     ps.value("mste.long.fc2.b"));
    auto s_bnkc = activation(z2, Act::kSigmoid);
    auto gate = permute(s_bnkc, {0, 1, 3, 2});  // [B,N,C,K]

    Tensor<T> num({batch, c, parts});
    Tensor<T> den({batch, c, parts});
    const std::int64_t plane = static_cast<std::int64_t>(c) * parts;
    for (int b = 0; b < batch; ++b) {
      T* nd = num.data() + b * plane;
      T* dd = den.data() + b * plane;
      // ascending frame order keeps the reduction deterministic
      for (int n = 0; n < frames; ++n) {
        const T* pg = gate.data() + (static_cast<std::int64_t>(b) * frames + n) * plane;
        const T* pv = p.data() + (static_cast<std::int64_t>(b) * frames + n) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          nd[i] += pg[i] * pv[i];
          dd[i] += pg[i];
        }
      }
    }
    Tensor<T> tl0({batch, c, parts});
    for (std::int64_t i = 0; i < tl0.numel(); ++i) {
      tl0.data()[i] = num.data()[i] / den.data()[i];
    }
    Tensor<T> tl({batch, frames, c, parts});
    for (int b = 0; b < batch; ++b) {
      const T* src = tl0.data() + b * plane;
      for (int n = 0; n < frames; ++n) {
        T* dst = tl.data() + (static_cast<std::int64_t>(b) * frames + n) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i];
      }
    }
    out.long_term = std::move(tl);
    if (cache) {
      cache->p_bnkc = std::move(p_bnkc);
      cache->h1 = std::move(h1);
      cache->r1 = std::move(r1);
      cache->z2 = std::move(z2);
      cache->gate = std::move(gate);
      cache->den = std::move(den);
      cache->tl0 = std::move(tl0);
    }
  }

  if (cache) cache->p = p;
  return out;
}

// d_frame / d_short / d_long may be empty tensors when that scale received
// no gradient. Accumulates into dp.
template <typename T>
void mste_backward(const MsteCache<T>& cache, const Tensor<T>& d_frame,
                   const Tensor<T>& d_short, const Tensor<T>& d_long,
                   const MsteConfig& cfg, ParamSet<T>& ps, Tensor<T>& dp) {
  const Tensor<T>& p = cache.p;
  const int batch = p.extent(0), frames = p.extent(1), c = p.extent(2),
            parts = p.extent(3);

  if (cfg.frame && !d_frame.empty()) {
    for (std::int64_t i = 0; i < dp.numel(); ++i) {
      dp.data()[i] += d_frame.data()[i];
    }
  }

  if (cfg.short_term && !d_short.empty()) {
    auto d_bkcn = permute(d_short, {0, 3, 2, 1});
    // ts = y1 + y2, y2 = conv2(y1), y1 = conv1(p')
    Tensor<T> dy1(cache.y1.shape());
    for (std::int64_t i = 0; i < dy1.numel(); ++i) {
      dy1.data()[i] = d_bkcn.data()[i];
    }
    conv1d_temporal_backward(cache.y1, ps.value("mste.short.conv2.w"), d_bkcn,
                             &dy1, &ps.grad("mste.short.conv2.w"),
                             &ps.grad("mste.short.conv2.b"));
    Tensor<T> dp_bkcn(cache.p_bkcn.shape());
    conv1d_temporal_backward(cache.p_bkcn, ps.value("mste.short.conv1.w"), dy1,
                             &dp_bkcn, &ps.grad("mste.short.conv1.w"),
                             &ps.grad("mste.short.conv1.b"));
    auto dp_add = permute(dp_bkcn, {0, 3, 2, 1});
    for (std::int64_t i = 0; i < dp.numel(); ++i) {
      dp.data()[i] += dp_add.data()[i];
    }
  }

  if (cfg.long_term && !d_long.empty()) {
    const std::int64_t plane = static_cast<std::int64_t>(c) * parts;
    // G = sum over frames of the broadcast gradient
    Tensor<T> g({batch, c, parts});
    for (int b = 0; b < batch; ++b) {
      T* gd = g.data() + b * plane;
      for (int n = 0; n < frames; ++n) {
        const T* src =
            d_long.data() + (static_cast<std::int64_t>(b) * frames + n) * plane;
        for (std::int64_t i = 0; i < plane; ++i) gd[i] += src[i];
      }
    }
    // tl0 = num/den: d num = G/den, d den = -G*tl0/den
    Tensor<T> d_gate({batch, frames, c, parts});
    for (int b = 0; b < batch; ++b) {
      const T* gd = g.data() + b * plane;
      const T* dd = cache.den.data() + b * plane;
      const T* t0 = cache.tl0.data() + b * plane;
      for (int n = 0; n < frames; ++n) {
        const std::int64_t off = (static_cast<std::int64_t>(b) * frames + n) * plane;
        const T* pv = p.data() + off;
        const T* sv = cache.gate.data() + off;
        T* dgn = d_gate.data() + off;
        T* dpn = dp.data() + off;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T coeff = gd[i] / dd[i];
          dpn[i] += coeff * sv[i];
          dgn[i] = coeff * (pv[i] - t0[i]);
        }
      }
    }
    // gate = sigmoid(z2) in [B,N,K,C] layout
    auto d_s_bnkc = permute(d_gate, {0, 1, 3, 2});
    auto s_bnkc = permute(cache.gate, {0, 1, 3, 2});
    Tensor<T> dz2(cache.z2.shape());
    activation_backward(cache.z2, s_bnkc, d_s_bnkc, Act::kSigmoid, dz2);
    Tensor<T> dr1(cache.r1.shape());
    linear_backward(cache.r1, ps.value("mste.long.fc2.w"), dz2, &dr1,
                    &ps.grad("mste.long.fc2.w"), &ps.grad("mste.long.fc2.b"));
    Tensor<T> dh1(cache.h1.shape());
    activation_backward(cache.h1, cache.r1, dr1, Act::kRelu, dh1);
    Tensor<T> dp_bnkc(cache.p_bnkc.shape());
    linear_backward(cache.p_bnkc, ps.value("mste.long.fc1.w"), dh1, &dp_bnkc,
                    &ps.grad("mste.long.fc1.w"), &ps.grad("mste.long.fc1.b"));
    auto dp_add = permute(dp_bnkc, {0, 1, 3, 2});
    for (std::int64_t i = 0; i < dp.numel(); ++i) {
      dp.data()[i] += dp_add.data()[i];
    }
  }
}

}  // namespace cstl
