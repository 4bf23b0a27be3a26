#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/gemm.hpp"
#include "cstl/kernels.hpp"
#include "cstl/param_set.hpp"

namespace cstl {

enum class LocalVariant { kMax, kFc, kAttention };

inline LocalVariant parse_local_variant(const std::string& s) {
  if (s == "max") return LocalVariant::kMax;
  if (s == "fc") return LocalVariant::kFc;
  if (s == "attention") return LocalVariant::kAttention;
  throw std::invalid_argument("unknown local variant: " + s);
}

inline const char* local_variant_name(LocalVariant v) {
  switch (v) {
    case LocalVariant::kMax: return "max";
    case LocalVariant::kFc: return "fc";
    case LocalVariant::kAttention: return "attention";
  }
  return "?";
}

// Adaptive temporal aggregation: per-frame fusion of the temporal scales
// (max / fc / attention variants), conditional position encoding via a
// depth-wise temporal convolution, one transformer block across the frame
// axis, and a temporal max pool down to F_T[B,K,C].
struct AtaConfig {
  LocalVariant local = LocalVariant::kFc;
  int heads = 4;
  int bottleneck_ratio = 16;  // attention-variant gate subnet
};

template <typename T>
void ata_init(ParamSet<T>& ps, int channels, int num_scales,
              const AtaConfig& cfg, Rng& rng) {
  if (cfg.heads < 1 || channels % cfg.heads != 0) {
    throw std::invalid_argument("ata: head count " + std::to_string(cfg.heads) +
                                " must divide channels " +
                                std::to_string(channels));
  }
  const int mc = num_scales * channels;
  if (cfg.local == LocalVariant::kFc) {
    ps.add("ata.local.fc.w", uniform_init<T>({mc, channels}, mc, rng));
    ps.add("ata.local.fc.b", Tensor<T>({channels}));
  } else if (cfg.local == LocalVariant::kAttention) {
    const int mid = std::max(1, mc / cfg.bottleneck_ratio);
    ps.add("ata.local.att.fc1.w", uniform_init<T>({mc, mid}, mc, rng));
    ps.add("ata.local.att.fc1.b", Tensor<T>({mid}));
    ps.add("ata.local.att.fc2.w", uniform_init<T>({mid, mc}, mid, rng));
    ps.add("ata.local.att.fc2.b", Tensor<T>({mc}));
  }
  ps.add("ata.pe.w", uniform_init<T>({channels, 3}, 3, rng));
  const int d = channels / cfg.heads;
  ps.add("ata.attn.wq", uniform_init<T>({cfg.heads, channels, d}, channels, rng));
  ps.add("ata.attn.wk", uniform_init<T>({cfg.heads, channels, d}, channels, rng));
  ps.add("ata.attn.wv", uniform_init<T>({cfg.heads, channels, d}, channels, rng));
  ps.add("ata.attn.ln1.gamma", Tensor<T>::full({channels}, T(1)));
  ps.add("ata.attn.ln1.beta", Tensor<T>({channels}));
  ps.add("ata.ffn.fc1.w", uniform_init<T>({channels, 2 * channels}, channels, rng));
  ps.add("ata.ffn.fc1.b", Tensor<T>({2 * channels}));
  ps.add("ata.ffn.fc2.w", uniform_init<T>({2 * channels, channels}, 2 * channels, rng));
  ps.add("ata.ffn.fc2.b", Tensor<T>({channels}));
  ps.add("ata.attn.ln2.gamma", Tensor<T>::full({channels}, T(1)));
  ps.add("ata.attn.ln2.beta", Tensor<T>({channels}));
}

// ---------------------------------------------------------------------------
// Local relation modeling. All variants map the enabled scales, each
// [B,N,C,K], to one fused tensor of the same shape.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> local_max(const std::vector<const Tensor<T>*>& scales) {
  if (scales.empty()) throw std::invalid_argument("local_max: no scales");
  Tensor<T> out = *scales[0];
  for (std::size_t s = 1; s < scales.size(); ++s) {
    const T* src = scales[s]->data();
    T* dst = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      if (src[i] > dst[i]) dst[i] = src[i];
    }
  }
  return out;
}

// Ties route the gradient to the earliest scale, matching the forward scan.
template <typename T>
void local_max_backward(const std::vector<const Tensor<T>*>& scales,
                        const Tensor<T>& dy,
                        const std::vector<Tensor<T>*>& dscales) {
  const std::int64_t n = dy.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    T best = scales[0]->data()[i];
    for (std::size_t s = 1; s < scales.size(); ++s) {
      if (scales[s]->data()[i] > best) {
        best = scales[s]->data()[i];
        arg = s;
      }
    }
    dscales[arg]->data()[i] += dy.data()[i];
  }
}

template <typename T>
struct LocalFcCache {
  Tensor<T> cat_bnkc;  // [B,N,K,mC], the FC input
};

template <typename T>
Tensor<T> local_fc(const std::vector<const Tensor<T>*>& scales,
                   const ParamSet<T>& ps, LocalFcCache<T>* cache = nullptr) {
  auto cat = concat(scales, 2);                 // [B,N,mC,K]
  auto cat_bnkc = permute(cat, {0, 1, 3, 2});   // channels last
  auto y = linear(cat_bnkc, ps.value("ata.local.fc.w"), ps.value("ata.local.fc.b"));
  auto out = permute(y, {0, 1, 3, 2});
  if (cache) cache->cat_bnkc = std::move(cat_bnkc);
  return out;
}

template <typename T>
void local_fc_backward(const LocalFcCache<T>& cache, const Tensor<T>& dy,
                       ParamSet<T>& ps, const std::vector<Tensor<T>*>& dscales) {
  auto dy_bnkc = permute(dy, {0, 1, 3, 2});
  Tensor<T> dcat_bnkc(cache.cat_bnkc.shape());
  linear_backward(cache.cat_bnkc, ps.value("ata.local.fc.w"), dy_bnkc,
                  &dcat_bnkc, &ps.grad("ata.local.fc.w"),
                  &ps.grad("ata.local.fc.b"));
  auto dcat = permute(dcat_bnkc, {0, 1, 3, 2});
  concat_backward(dcat, 2, dscales);
}

template <typename T>
struct LocalAttentionCache {
  std::vector<Tensor<T>> cumulative;  // prefix sums of the scales
  Tensor<T> cat_bnkc, h1, r1, z2, gates;  // gates[B,N,K,mC] in (0,1)
};

// Cumulative information flow followed by per-scale sigmoid gates learned
// from the concatenated context.
template <typename T>
Tensor<T> local_attention(const std::vector<const Tensor<T>*>& scales,
                          const ParamSet<T>& ps,
                          LocalAttentionCache<T>* cache = nullptr) {
  const std::size_t m = scales.size();
  std::vector<Tensor<T>> cumulative;
  cumulative.reserve(m);
  cumulative.push_back(*scales[0]);
  for (std::size_t s = 1; s < m; ++s) {
    Tensor<T> c = cumulative.back();
    const T* src = scales[s]->data();
    for (std::int64_t i = 0; i < c.numel(); ++i) c.data()[i] += src[i];
    cumulative.push_back(std::move(c));
  }
  std::vector<const Tensor<T>*> cum_ptrs;
  for (const auto& c : cumulative) cum_ptrs.push_back(&c);

  auto cat = concat(cum_ptrs, 2);
  auto cat_bnkc = permute(cat, {0, 1, 3, 2});  // [B,N,K,mC]
  auto h1 = linear(cat_bnkc, ps.value("ata.local.att.fc1.w"),
                   ps.value("ata.local.att.fc1.b"));
  auto r1 = activation(h1, Act::kRelu);
  auto z2 = linear(r1, ps.value("ata.local.att.fc2.w"),
                   ps.value("ata.local.att.fc2.b"));
  auto gates = activation(z2, Act::kSigmoid);

  const int batch = cat.extent(0), frames = cat.extent(1), parts = cat.extent(3);
  const int channels = cumulative[0].extent(2);
  Tensor<T> out({batch, frames, channels, parts});
  for (int b = 0; b < batch; ++b)
    for (int n = 0; n < frames; ++n)
      for (int k = 0; k < parts; ++k)
        for (int c = 0; c < channels; ++c) {
          T acc = T(0);
          for (std::size_t s = 0; s < m; ++s) {
            acc += cumulative[s](b, n, c, k) *
                   gates(b, n, k, static_cast<int>(s) * channels + c);
          }
          out(b, n, c, k) = acc;
        }
  if (cache) {
    cache->cumulative = std::move(cumulative);
    cache->cat_bnkc = std::move(cat_bnkc);
    cache->h1 = std::move(h1);
    cache->r1 = std::move(r1);
    cache->z2 = std::move(z2);
    cache->gates = std::move(gates);
  }
  return out;
}

template <typename T>
void local_attention_backward(const LocalAttentionCache<T>& cache,
                              const Tensor<T>& dy, ParamSet<T>& ps,
                              const std::vector<Tensor<T>*>& dscales) {
  const std::size_t m = cache.cumulative.size();
  const int batch = dy.extent(0), frames = dy.extent(1),
            channels = dy.extent(2), parts = dy.extent(3);

  std::vector<Tensor<T>> dcum;
  for (std::size_t s = 0; s < m; ++s) dcum.emplace_back(dy.shape());
  Tensor<T> dgates(cache.gates.shape());
  for (int b = 0; b < batch; ++b)
    for (int n = 0; n < frames; ++n)
      for (int k = 0; k < parts; ++k)
        for (int c = 0; c < channels; ++c) {
          const T g = dy(b, n, c, k);
          for (std::size_t s = 0; s < m; ++s) {
            const int gc = static_cast<int>(s) * channels + c;
            dcum[s](b, n, c, k) += g * cache.gates(b, n, k, gc);
            dgates(b, n, k, gc) += g * cache.cumulative[s](b, n, c, k);
          }
        }

  // gate subnet chain
  Tensor<T> dz2(cache.z2.shape());
  activation_backward(cache.z2, cache.gates, dgates, Act::kSigmoid, dz2);
  Tensor<T> dr1(cache.r1.shape());
  linear_backward(cache.r1, ps.value("ata.local.att.fc2.w"), dz2, &dr1,
                  &ps.grad("ata.local.att.fc2.w"),
                  &ps.grad("ata.local.att.fc2.b"));
  Tensor<T> dh1(cache.h1.shape());
  activation_backward(cache.h1, cache.r1, dr1, Act::kRelu, dh1);
  Tensor<T> dcat_bnkc(cache.cat_bnkc.shape());
  linear_backward(cache.cat_bnkc, ps.value("ata.local.att.fc1.w"), dh1,
                  &dcat_bnkc, &ps.grad("ata.local.att.fc1.w"),
                  &ps.grad("ata.local.att.fc1.b"));
  auto dcat = permute(dcat_bnkc, {0, 1, 3, 2});
  std::vector<Tensor<T>> dcum_from_gate;
  for (std::size_t s = 0; s < m; ++s) dcum_from_gate.emplace_back(dy.shape());
  std::vector<Tensor<T>*> slots;
  for (auto& t : dcum_from_gate) slots.push_back(&t);
  concat_backward(dcat, 2, slots);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::int64_t i = 0; i < dcum[s].numel(); ++i) {
      dcum[s].data()[i] += dcum_from_gate[s].data()[i];
    }
  }

  // cumulative[i] = sum of scales[0..i]  =>  dscale[j] = sum_{i>=j} dcum[i]
  for (std::size_t s = m; s-- > 0;) {
    if (s + 1 < m) {
      for (std::int64_t i = 0; i < dcum[s].numel(); ++i) {
        dcum[s].data()[i] += dcum[s + 1].data()[i];
      }
    }
    for (std::int64_t i = 0; i < dcum[s].numel(); ++i) {
      dscales[s]->data()[i] += dcum[s].data()[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Conditional position encoding: residual depth-wise temporal convolution.
// t_al[B,N,C,K] -> t_tran[B,K,N,C]
// ---------------------------------------------------------------------------

template <typename T>
struct CondPeCache {
  Tensor<T> x_bkcn;
};

template <typename T>
Tensor<T> conditional_pe(const Tensor<T>& t_al, const ParamSet<T>& ps,
                         CondPeCache<T>* cache = nullptr) {
  auto x_bkcn = permute(t_al, {0, 3, 2, 1});  // [B,K,C,N]
  auto pe = dwconv1d_temporal(x_bkcn, ps.value("ata.pe.w"));
  for (std::int64_t i = 0; i < pe.numel(); ++i) {
    pe.data()[i] += x_bkcn.data()[i];
  }
  auto out = permute(pe, {0, 1, 3, 2});  // [B,K,N,C]
  if (cache) cache->x_bkcn = std::move(x_bkcn);
  return out;
}

template <typename T>
void conditional_pe_backward(const CondPeCache<T>& cache, const Tensor<T>& dy,
                             ParamSet<T>& ps, Tensor<T>& d_t_al) {
  auto d_bkcn = permute(dy, {0, 1, 3, 2});
  Tensor<T> dx(cache.x_bkcn.shape());
  for (std::int64_t i = 0; i < dx.numel(); ++i) {
    dx.data()[i] = d_bkcn.data()[i];  // residual branch
  }
  dwconv1d_temporal_backward(cache.x_bkcn, ps.value("ata.pe.w"), d_bkcn, &dx,
                             &ps.grad("ata.pe.w"));
  auto d_add = permute(dx, {0, 3, 2, 1});
  for (std::int64_t i = 0; i < d_t_al.numel(); ++i) {
    d_t_al.data()[i] += d_add.data()[i];
  }
}

// ---------------------------------------------------------------------------
// Transformer block over the frame axis, per part. Queries/keys/values are
// built per head from shared input t_tran[B,K,N,C]; attention logits are
// scaled by 1/sqrt(C).
// ---------------------------------------------------------------------------

template <typename T>
struct TransformerCache {
  Tensor<T> t_tran;
  Tensor<T> q, k, v;   // [B,K,H,N,D]
  Tensor<T> attn;      // softmaxed, [B,H,K,N,N]
  Tensor<T> res1, t_a, f1, r, res2;
  LayerNormCache<T> ln1, ln2;
};

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& t_tran, const ParamSet<T>& ps,
                            int heads, TransformerCache<T>* cache = nullptr) {
  const int batch = t_tran.extent(0), parts = t_tran.extent(1),
            frames = t_tran.extent(2), channels = t_tran.extent(3);
  if (channels % heads != 0) {
    throw std::invalid_argument("transformer_block: heads must divide C");
  }
  const int d = channels / heads;
  const auto& wq = ps.value("ata.attn.wq");
  const auto& wk = ps.value("ata.attn.wk");
  const auto& wv = ps.value("ata.attn.wv");

  Tensor<T> q({batch, parts, heads, frames, d});
  Tensor<T> k({batch, parts, heads, frames, d});
  Tensor<T> v({batch, parts, heads, frames, d});
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  parallel_for(0, groups, [&](std::int64_t g) {
    const T* s = t_tran.data() + g * frames * channels;
    for (int h = 0; h < heads; ++h) {
      const std::int64_t head_off = (g * heads + h) * frames * d;
      gemm_nn(frames, d, channels, s, channels,
              wq.data() + static_cast<std::int64_t>(h) * channels * d, d,
              q.data() + head_off, d);
      gemm_nn(frames, d, channels, s, channels,
              wk.data() + static_cast<std::int64_t>(h) * channels * d, d,
              k.data() + head_off, d);
      gemm_nn(frames, d, channels, s, channels,
              wv.data() + static_cast<std::int64_t>(h) * channels * d, d,
              v.data() + head_off, d);
    }
  });

  // logits, scaled by 1/sqrt(C), then row softmax
  Tensor<T> attn({batch, heads, parts, frames, frames});
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  parallel_for(0, groups, [&](std::int64_t g) {
    const int b = static_cast<int>(g) / parts;
    const int p = static_cast<int>(g) % parts;
    for (int h = 0; h < heads; ++h) {
      const std::int64_t head_off = (g * heads + h) * frames * d;
      T* a = attn.data() +
             ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * frames * frames;
      gemm_nt(frames, frames, d, q.data() + head_off, d, k.data() + head_off,
              d, a, frames);
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(frames) * frames; ++i) {
        a[i] *= scale;
      }
    }
  });
  attn = softmax(attn, 4);

  // per-head context, heads recombined by channel concatenation
  Tensor<T> res1({batch, parts, frames, channels});
  parallel_for(0, groups, [&](std::int64_t g) {
    const int b = static_cast<int>(g) / parts;
    const int p = static_cast<int>(g) % parts;
    std::vector<T> ctx(static_cast<std::size_t>(frames) * d);
    T* out = res1.data() + g * frames * channels;
    const T* in = t_tran.data() + g * frames * channels;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(frames) * channels; ++i) {
      out[i] = in[i];  // shortcut
    }
    for (int h = 0; h < heads; ++h) {
      const std::int64_t head_off = (g * heads + h) * frames * d;
      const T* a = attn.data() +
                   ((static_cast<std::int64_t>(b) * heads + h) * parts + p) *
                       frames * frames;
      gemm_nn(frames, d, frames, a, frames, v.data() + head_off, d, ctx.data(), d);
      for (int n = 0; n < frames; ++n) {
        for (int dd = 0; dd < d; ++dd) {
          out[static_cast<std::int64_t>(n) * channels + h * d + dd] +=
              ctx[static_cast<std::size_t>(n) * d + dd];
        }
      }
    }
  });

  LayerNormCache<T> ln1;
  auto t_a = layer_norm(res1, ps.value("ata.attn.ln1.gamma"),
                        ps.value("ata.attn.ln1.beta"), static_cast<T>(1e-5), &ln1);
  auto f1 = linear(t_a, ps.value("ata.ffn.fc1.w"), ps.value("ata.ffn.fc1.b"));
  auto r = activation(f1, Act::kRelu);
  auto f2 = linear(r, ps.value("ata.ffn.fc2.w"), ps.value("ata.ffn.fc2.b"));
  Tensor<T> res2(f2.shape());
  for (std::int64_t i = 0; i < f2.numel(); ++i) {
    res2.data()[i] = f2.data()[i] + t_a.data()[i];
  }
  LayerNormCache<T> ln2;
  auto t_ag = layer_norm(res2, ps.value("ata.attn.ln2.gamma"),
                         ps.value("ata.attn.ln2.beta"), static_cast<T>(1e-5), &ln2);
  if (cache) {
    cache->t_tran = t_tran;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = attn;
    cache->res1 = std::move(res1);
    cache->t_a = std::move(t_a);
    cache->f1 = std::move(f1);
    cache->r = std::move(r);
    cache->res2 = std::move(res2);
    cache->ln1 = std::move(ln1);
    cache->ln2 = std::move(ln2);
  }
  return t_ag;
}

template <typename T>
void transformer_block_backward(const TransformerCache<T>& cache,
                                const Tensor<T>& d_t_ag, ParamSet<T>& ps,
                                int heads, Tensor<T>& d_t_tran) {
  const int batch = cache.t_tran.extent(0), parts = cache.t_tran.extent(1),
            frames = cache.t_tran.extent(2), channels = cache.t_tran.extent(3);
  const int d = channels / heads;

  Tensor<T> dres2(cache.res2.shape());
  layer_norm_backward(cache.res2, ps.value("ata.attn.ln2.gamma"), cache.ln2,
                      d_t_ag, &dres2, &ps.grad("ata.attn.ln2.gamma"),
                      &ps.grad("ata.attn.ln2.beta"));
  Tensor<T> dt_a = dres2;  // residual
  Tensor<T> dr(cache.r.shape());
  linear_backward(cache.r, ps.value("ata.ffn.fc2.w"), dres2, &dr,
                  &ps.grad("ata.ffn.fc2.w"), &ps.grad("ata.ffn.fc2.b"));
  Tensor<T> df1(cache.f1.shape());
  activation_backward(cache.f1, cache.r, dr, Act::kRelu, df1);
  linear_backward(cache.t_a, ps.value("ata.ffn.fc1.w"), df1, &dt_a,
                  &ps.grad("ata.ffn.fc1.w"), &ps.grad("ata.ffn.fc1.b"));

  Tensor<T> dres1(cache.res1.shape());
  layer_norm_backward(cache.res1, ps.value("ata.attn.ln1.gamma"), cache.ln1,
                      dt_a, &dres1, &ps.grad("ata.attn.ln1.gamma"),
                      &ps.grad("ata.attn.ln1.beta"));

  // shortcut branch
  for (std::int64_t i = 0; i < dres1.numel(); ++i) {
    d_t_tran.data()[i] += dres1.data()[i];
  }

  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  const auto& wq = ps.value("ata.attn.wq");
  const auto& wk = ps.value("ata.attn.wk");
  const auto& wv = ps.value("ata.attn.wv");
  auto& dwq = ps.grad("ata.attn.wq");
  auto& dwk = ps.grad("ata.attn.wk");
  auto& dwv = ps.grad("ata.attn.wv");

  std::vector<T> dctx(static_cast<std::size_t>(frames) * d);
  std::vector<T> da(static_cast<std::size_t>(frames) * frames);
  std::vector<T> dlogits(da.size());
  std::vector<T> dq(dctx.size()), dk(dctx.size()), dv(dctx.size());
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  for (std::int64_t g = 0; g < groups; ++g) {
    const int b = static_cast<int>(g) / parts;
    const int p = static_cast<int>(g) % parts;
    const T* s = cache.t_tran.data() + g * frames * channels;
    const T* dout = dres1.data() + g * frames * channels;
    T* ds = d_t_tran.data() + g * frames * channels;
    for (int h = 0; h < heads; ++h) {
      const std::int64_t head_off = (g * heads + h) * frames * d;
      const T* a = cache.attn.data() +
                   ((static_cast<std::int64_t>(b) * heads + h) * parts + p) *
                       frames * frames;
      // slice the head's gradient out of the channel concat
      for (int n = 0; n < frames; ++n) {
        for (int dd = 0; dd < d; ++dd) {
          dctx[static_cast<std::size_t>(n) * d + dd] =
              dout[static_cast<std::int64_t>(n) * channels + h * d + dd];
        }
      }
      // dA = dctx V^T ; dV = A^T dctx
      gemm_nt(frames, frames, d, dctx.data(), d, cache.v.data() + head_off, d,
              da.data(), frames);
      gemm_tn(frames, d, frames, a, frames, dctx.data(), d, dv.data(), d);
      // softmax rows, then the 1/sqrt(C) logits scale
      for (int n = 0; n < frames; ++n) {
        const T* arow = a + static_cast<std::int64_t>(n) * frames;
        const T* grow = da.data() + static_cast<std::int64_t>(n) * frames;
        T dot = T(0);
        for (int m2 = 0; m2 < frames; ++m2) dot += arow[m2] * grow[m2];
        T* lrow = dlogits.data() + static_cast<std::int64_t>(n) * frames;
        for (int m2 = 0; m2 < frames; ++m2) {
          lrow[m2] = arow[m2] * (grow[m2] - dot) * scale;
        }
      }
      // dQ = dlogits K ; dK = dlogits^T Q
      gemm_nn(frames, d, frames, dlogits.data(), frames,
              cache.k.data() + head_off, d, dq.data(), d);
      gemm_tn(frames, d, frames, dlogits.data(), frames,
              cache.q.data() + head_off, d, dk.data(), d);
      // project back to the shared input and the head weights
      const std::int64_t w_off = static_cast<std::int64_t>(h) * channels * d;
      gemm_nt(frames, channels, d, dq.data(), d, wq.data() + w_off, d, ds,
              channels, true);
      gemm_nt(frames, channels, d, dk.data(), d, wk.data() + w_off, d, ds,
              channels, true);
      gemm_nt(frames, channels, d, dv.data(), d, wv.data() + w_off, d, ds,
              channels, true);
      gemm_tn(channels, d, frames, s, channels, dq.data(), d,
              dwq.data() + w_off, d, true);
      gemm_tn(channels, d, frames, s, channels, dk.data(), d,
              dwk.data() + w_off, d, true);
      gemm_tn(channels, d, frames, s, channels, dv.data(), d,
              dwv.data() + w_off, d, true);
    }
  }
}

// ---------------------------------------------------------------------------
// Temporal max pool: F_T[b,k,c] = max_n t_ag[b,k,n,c].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> temporal_max_pool(const Tensor<T>& t_ag) {
  const int batch = t_ag.extent(0), parts = t_ag.extent(1),
            frames = t_ag.extent(2), channels = t_ag.extent(3);
  Tensor<T> out({batch, parts, channels});
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  for (std::int64_t g = 0; g < groups; ++g) {
    const T* src = t_ag.data() + g * frames * channels;
    T* dst = out.data() + g * channels;
    for (int c = 0; c < channels; ++c) dst[c] = src[c];
    for (int n = 1; n < frames; ++n) {
      const T* row = src + static_cast<std::int64_t>(n) * channels;
      for (int c = 0; c < channels; ++c) {
        if (row[c] > dst[c]) dst[c] = row[c];
      }
    }
  }
  return out;
}

template <typename T>
void temporal_max_pool_backward(const Tensor<T>& t_ag, const Tensor<T>& df_t,
                                Tensor<T>& d_t_ag) {
  const int parts = t_ag.extent(1), frames = t_ag.extent(2),
            channels = t_ag.extent(3);
  const std::int64_t groups = static_cast<std::int64_t>(t_ag.extent(0)) * parts;
  for (std::int64_t g = 0; g < groups; ++g) {
    const T* src = t_ag.data() + g * frames * channels;
    const T* gv = df_t.data() + g * channels;
    T* dst = d_t_ag.data() + g * frames * channels;
    for (int c = 0; c < channels; ++c) {
      int arg = 0;
      T best = src[c];
      for (int n = 1; n < frames; ++n) {
        const T v = src[static_cast<std::int64_t>(n) * channels + c];
        if (v > best) {
          best = v;
          arg = n;
        }
      }
      dst[static_cast<std::int64_t>(arg) * channels + c] += gv[c];
    }
  }
}

// ---------------------------------------------------------------------------
// Full ATA pass.
// ---------------------------------------------------------------------------

template <typename T>
struct AtaCache {
  LocalFcCache<T> fc;
  LocalAttentionCache<T> att;
  std::vector<Tensor<T>> scale_copies;  // kept for the max variant backward
  Tensor<T> t_al;
  CondPeCache<T> pe;
  Tensor<T> t_tran;
  TransformerCache<T> tr;
  Tensor<T> t_ag;
};

template <typename T>
Tensor<T> ata_forward(const std::vector<const Tensor<T>*>& scales,
                      const ParamSet<T>& ps, const AtaConfig& cfg,
                      AtaCache<T>& cache) {
  switch (cfg.local) {
    case LocalVariant::kMax: {
      cache.scale_copies.clear();
      for (const auto* s : scales) cache.scale_copies.push_back(*s);
      cache.t_al = local_max(scales);
      break;
    }
    case LocalVariant::kFc:
      cache.t_al = local_fc(scales, ps, &cache.fc);
      break;
    case LocalVariant::kAttention:
      cache.t_al = local_attention(scales, ps, &cache.att);
      break;
  }
  cache.t_tran = conditional_pe(cache.t_al, ps, &cache.pe);
  cache.t_ag = transformer_block(cache.t_tran, ps, cfg.heads, &cache.tr);
  return temporal_max_pool(cache.t_ag);
}

template <typename T>
void ata_backward(const AtaCache<T>& cache, const Tensor<T>& df_t,
                  ParamSet<T>& ps, const AtaConfig& cfg,
                  const std::vector<Tensor<T>*>& dscales) {
  Tensor<T> d_t_ag(cache.t_ag.shape());
  temporal_max_pool_backward(cache.t_ag, df_t, d_t_ag);
  Tensor<T> d_t_tran(cache.t_tran.shape());
  transformer_block_backward(cache.tr, d_t_ag, ps, cfg.heads, d_t_tran);
  Tensor<T> d_t_al(cache.t_al.shape());
  conditional_pe_backward(cache.pe, d_t_tran, ps, d_t_al);
  switch (cfg.local) {
    case LocalVariant::kMax: {
      std::vector<const Tensor<T>*> ptrs;
      for (const auto& s : cache.scale_copies) ptrs.push_back(&s);
      local_max_backward(ptrs, d_t_al, dscales);
      break;
    }
    case LocalVariant::kFc:
      local_fc_backward(cache.fc, d_t_al, ps, dscales);
      break;
    case LocalVariant::kAttention:
      local_attention_backward(cache.att, d_t_al, ps, dscales);
      break;
  }
}

}  // namespace cstl
