#pragma once

#include <stdexcept>
#include <vector>

#include "cstl/gemm.hpp"
#include "cstl/kernels.hpp"
#include "cstl/param_set.hpp"

namespace cstl {

// Salient spatial feature learning. Raw (unscaled, unsoftmaxed) multi-head
// attention over a fused multi-scale input yields per-frame part scores;
// score-weighted features are supervised with identity logits while the
// top-scoring frame of every part is hard-copied and recombined.
struct SsflConfig {
  int heads = 4;
  int num_classes = 0;  // training identities C_t
};

template <typename T>
void ssfl_init(ParamSet<T>& ps, int channels, int num_scales,
               const SsflConfig& cfg, Rng& rng) {
  if (cfg.heads < 1 || channels % cfg.heads != 0) {
    throw std::invalid_argument("ssfl: head count must divide channels");
  }
  if (cfg.num_classes < 2) {
    throw std::invalid_argument("ssfl: need at least 2 training classes");
  }
  const int mc = num_scales * channels;
  const int d = channels / cfg.heads;
  ps.add("ssfl.fuse.w", uniform_init<T>({mc, channels}, mc, rng));
  ps.add("ssfl.fuse.b", Tensor<T>({channels}));
  ps.add("ssfl.wq", uniform_init<T>({cfg.heads, channels, d}, channels, rng));
  ps.add("ssfl.wk", uniform_init<T>({cfg.heads, channels, d}, channels, rng));
  ps.add("ssfl.cls.w", uniform_init<T>({channels, cfg.num_classes}, channels, rng));
  ps.add("ssfl.cls.b", Tensor<T>({cfg.num_classes}));
}

// ---------------------------------------------------------------------------
// fuse_scales: concat the enabled scales on the channel axis, FC down to C.
// ---------------------------------------------------------------------------

template <typename T>
struct FuseScalesCache {
  Tensor<T> cat_bnkc;
};

template <typename T>
Tensor<T> fuse_scales(const std::vector<const Tensor<T>*>& scales,
                      const ParamSet<T>& ps, FuseScalesCache<T>* cache = nullptr) {
  auto cat = concat(scales, 2);
  auto cat_bnkc = permute(cat, {0, 1, 3, 2});
  auto y = linear(cat_bnkc, ps.value("ssfl.fuse.w"), ps.value("ssfl.fuse.b"));
  auto out = permute(y, {0, 1, 3, 2});  // [B,N,C,K]
  if (cache) cache->cat_bnkc = std::move(cat_bnkc);
  return out;
}

template <typename T>
void fuse_scales_backward(const FuseScalesCache<T>& cache, const Tensor<T>& dy,
                          ParamSet<T>& ps,
                          const std::vector<Tensor<T>*>& dscales) {
  auto dy_bnkc = permute(dy, {0, 1, 3, 2});
  Tensor<T> dcat_bnkc(cache.cat_bnkc.shape());
  linear_backward(cache.cat_bnkc, ps.value("ssfl.fuse.w"), dy_bnkc, &dcat_bnkc,
                  &ps.grad("ssfl.fuse.w"), &ps.grad("ssfl.fuse.b"));
  auto dcat = permute(dcat_bnkc, {0, 1, 3, 2});
  concat_backward(dcat, 2, dscales);
}

// ---------------------------------------------------------------------------
// part_scores: raw attention (no scale, no softmax), squeezed over the
// first frame index. scores[b,h,k,n] = sum_m <q_m, k_n>; x = argmax_n.
// ---------------------------------------------------------------------------

template <typename T>
struct PartScores {
  Tensor<T> scores;        // [B,H,K,N]
  std::vector<int> argmax;  // [B*H*K], frame index per (b,h,k)
};

template <typename T>
struct PartScoresCache {
  Tensor<T> s_bknc;  // [B,K,N,C]
  Tensor<T> q, k;    // [B,K,H,N,D]
};

template <typename T>
PartScores<T> part_scores(const Tensor<T>& s_in, const ParamSet<T>& ps,
                          int heads, PartScoresCache<T>* cache = nullptr) {
  const int batch = s_in.extent(0), frames = s_in.extent(1),
            channels = s_in.extent(2), parts = s_in.extent(3);
  const int d = channels / heads;
  auto s_bknc = permute(s_in, {0, 3, 1, 2});  // [B,K,N,C]

  const auto& wq = ps.value("ssfl.wq");
  const auto& wk = ps.value("ssfl.wk");
  Tensor<T> q({batch, parts, heads, frames, d});
  Tensor<T> k({batch, parts, heads, frames, d});
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  parallel_for(0, groups, [&](std::int64_t g) {
    const T* s = s_bknc.data() + g * frames * channels;
    for (int h = 0; h < heads; ++h) {
      const std::int64_t head_off = (g * heads + h) * frames * d;
      gemm_nn(frames, d, channels, s, channels,
              wq.data() + static_cast<std::int64_t>(h) * channels * d, d,
              q.data() + head_off, d);
      gemm_nn(frames, d, channels, s, channels,
              wk.data() + static_cast<std::int64_t>(h) * channels * d, d,
              k.data() + head_off, d);
    }
  });

  PartScores<T> out;
  out.scores = Tensor<T>({batch, heads, parts, frames});
  out.argmax.assign(static_cast<std::size_t>(batch) * heads * parts, 0);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < parts; ++p) {
      for (int h = 0; h < heads; ++h) {
        const std::int64_t head_off =
            ((static_cast<std::int64_t>(b) * parts + p) * heads + h) * frames * d;
        const T* qp = q.data() + head_off;
        const T* kp = k.data() + head_off;
        // qsum_d = sum over frames of q; score_n = <qsum, k_n>
        std::vector<T> qsum(static_cast<std::size_t>(d), T(0));
        for (int n = 0; n < frames; ++n) {
          for (int dd = 0; dd < d; ++dd) {
            qsum[static_cast<std::size_t>(dd)] +=
                qp[static_cast<std::int64_t>(n) * d + dd];
          }
        }
        T* srow = out.scores.data() +
                  ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * frames;
        int arg = 0;
        for (int n = 0; n < frames; ++n) {
          T s = T(0);
          for (int dd = 0; dd < d; ++dd) {
            s += qsum[static_cast<std::size_t>(dd)] *
                 kp[static_cast<std::int64_t>(n) * d + dd];
          }
          srow[n] = s;
          if (s > srow[arg]) arg = n;
        }
        out.argmax[(static_cast<std::size_t>(b) * heads + h) * parts + p] = arg;
      }
    }
  }
  if (cache) {
    cache->s_bknc = std::move(s_bknc);
    cache->q = std::move(q);
    cache->k = std::move(k);
  }
  return out;
}

// d_scores -> gradients of s_in and the private wq/wk. Selection indices are
// constants and receive no gradient.
template <typename T>
void part_scores_backward(const PartScoresCache<T>& cache,
                          const Tensor<T>& d_scores, ParamSet<T>& ps,
                          int heads, Tensor<T>& d_s_in) {
  const int batch = cache.s_bknc.extent(0), parts = cache.s_bknc.extent(1),
            frames = cache.s_bknc.extent(2), channels = cache.s_bknc.extent(3);
  const int d = channels / heads;
  const auto& wq = ps.value("ssfl.wq");
  const auto& wk = ps.value("ssfl.wk");
  auto& dwq = ps.grad("ssfl.wq");
  auto& dwk = ps.grad("ssfl.wk");

  Tensor<T> d_s_bknc(cache.s_bknc.shape());
  std::vector<T> dq(static_cast<std::size_t>(frames) * d);
  std::vector<T> dk(dq.size());
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < parts; ++p) {
      const std::int64_t g = static_cast<std::int64_t>(b) * parts + p;
      const T* s = cache.s_bknc.data() + g * frames * channels;
      T* ds = d_s_bknc.data() + g * frames * channels;
      for (int h = 0; h < heads; ++h) {
        const std::int64_t head_off = (g * heads + h) * frames * d;
        const T* qp = cache.q.data() + head_off;
        const T* kp = cache.k.data() + head_off;
        const T* grow = d_scores.data() +
                        ((static_cast<std::int64_t>(b) * heads + h) * parts + p) *
                            frames;
        // scores_n = <qsum, k_n> with qsum = sum_m q_m:
        //   dq_m = sum_n grow_n k_n   (same for every m)
        //   dk_n = grow_n * qsum
        std::vector<T> gk(static_cast<std::size_t>(d), T(0));
        std::vector<T> qsum(static_cast<std::size_t>(d), T(0));
        for (int n = 0; n < frames; ++n) {
          for (int dd = 0; dd < d; ++dd) {
            gk[static_cast<std::size_t>(dd)] +=
                grow[n] * kp[static_cast<std::int64_t>(n) * d + dd];
            qsum[static_cast<std::size_t>(dd)] +=
                qp[static_cast<std::int64_t>(n) * d + dd];
          }
        }
        for (int n = 0; n < frames; ++n) {
          for (int dd = 0; dd < d; ++dd) {
            dq[static_cast<std::size_t>(n) * d + dd] = gk[static_cast<std::size_t>(dd)];
            dk[static_cast<std::size_t>(n) * d + dd] =
                grow[n] * qsum[static_cast<std::size_t>(dd)];
          }
        }
        const std::int64_t w_off = static_cast<std::int64_t>(h) * channels * d;
        gemm_nt(frames, channels, d, dq.data(), d, wq.data() + w_off, d, ds,
                channels, true);
        gemm_nt(frames, channels, d, dk.data(), d, wk.data() + w_off, d, ds,
                channels, true);
        gemm_tn(channels, d, frames, s, channels, dq.data(), d,
                dwq.data() + w_off, d, true);
        gemm_tn(channels, d, frames, s, channels, dk.data(), d,
                dwk.data() + w_off, d, true);
      }
    }
  }
  auto d_add = permute(d_s_bknc, {0, 2, 3, 1});  // back to [B,N,C,K]
  for (std::int64_t i = 0; i < d_s_in.numel(); ++i) {
    d_s_in.data()[i] += d_add.data()[i];
  }
}

// ---------------------------------------------------------------------------
// weighted_feature: F_w[b,h,k,c] = sum_n T_f[b,n,c,k] * scores[b,h,k,n].
// No normalization of the scores.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> weighted_feature(const Tensor<T>& t_f, const Tensor<T>& scores) {
  const int batch = t_f.extent(0), frames = t_f.extent(1),
            channels = t_f.extent(2), parts = t_f.extent(3);
  const int heads = scores.extent(1);
  Tensor<T> out({batch, heads, parts, channels});
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < parts; ++p) {
        const T* srow =
            scores.data() +
            ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * frames;
        T* orow = out.data() +
                  ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * channels;
        for (int n = 0; n < frames; ++n) {
          const T w = srow[n];
          const T* f = t_f.data() +
                       (static_cast<std::int64_t>(b) * frames + n) * channels * parts;
          for (int c = 0; c < channels; ++c) {
            orow[c] += w * f[static_cast<std::int64_t>(c) * parts + p];
          }
        }
      }
  return out;
}

template <typename T>
void weighted_feature_backward(const Tensor<T>& t_f, const Tensor<T>& scores,
                               const Tensor<T>& d_fw, Tensor<T>& d_t_f,
                               Tensor<T>& d_scores) {
  const int batch = t_f.extent(0), frames = t_f.extent(1),
            channels = t_f.extent(2), parts = t_f.extent(3);
  const int heads = scores.extent(1);
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < parts; ++p) {
        const T* srow =
            scores.data() +
            ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * frames;
        const T* grow =
            d_fw.data() +
            ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * channels;
        T* dsrow = d_scores.data() +
                   ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * frames;
        for (int n = 0; n < frames; ++n) {
          const std::int64_t f_off =
              (static_cast<std::int64_t>(b) * frames + n) * channels * parts;
          const T* f = t_f.data() + f_off;
          T* df = d_t_f.data() + f_off;
          const T w = srow[n];
          T dot = T(0);
          for (int c = 0; c < channels; ++c) {
            const std::int64_t at = static_cast<std::int64_t>(c) * parts + p;
            dot += grow[c] * f[at];
            df[at] += w * grow[c];
          }
          dsrow[n] += dot;
        }
      }
}

// ---------------------------------------------------------------------------
// recombine: hard gather of the top-scoring frame per (head, part).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> recombine(const Tensor<T>& t_f, const PartScores<T>& sel) {
  const int batch = t_f.extent(0), frames = t_f.extent(1),
            channels = t_f.extent(2), parts = t_f.extent(3);
  const int heads = sel.scores.extent(1);
  Tensor<T> out({batch, heads, parts, channels});
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < parts; ++p) {
        const int n = sel.argmax[(static_cast<std::size_t>(b) * heads + h) * parts + p];
        if (n < 0 || n >= frames) {
          throw std::logic_error("recombine: selection index out of range");
        }
        const T* f = t_f.data() +
                     (static_cast<std::int64_t>(b) * frames + n) * channels * parts;
        T* orow = out.data() +
                  ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * channels;
        for (int c = 0; c < channels; ++c) {
          orow[c] = f[static_cast<std::int64_t>(c) * parts + p];
        }
      }
  return out;
}

// Gradient flows only into the gathered coordinates of T_f.
template <typename T>
void recombine_backward(const Tensor<T>& t_f, const PartScores<T>& sel,
                        const Tensor<T>& d_fr, Tensor<T>& d_t_f) {
  const int frames = t_f.extent(1), channels = t_f.extent(2),
            parts = t_f.extent(3);
  const int batch = t_f.extent(0);
  const int heads = sel.scores.extent(1);
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < parts; ++p) {
        const int n = sel.argmax[(static_cast<std::size_t>(b) * heads + h) * parts + p];
        const T* grow = d_fr.data() +
                        ((static_cast<std::int64_t>(b) * heads + h) * parts + p) *
                            channels;
        T* df = d_t_f.data() +
                (static_cast<std::int64_t>(b) * frames + n) * channels * parts;
        for (int c = 0; c < channels; ++c) {
          df[static_cast<std::int64_t>(c) * parts + p] += grow[c];
        }
      }
}

// ---------------------------------------------------------------------------
// fuse_salient: sum each of F_r and F_w over heads, concat on channels.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fuse_salient(const Tensor<T>& f_r, const Tensor<T>& f_w) {
  const int batch = f_r.extent(0), heads = f_r.extent(1), parts = f_r.extent(2),
            channels = f_r.extent(3);
  Tensor<T> out({batch, parts, 2 * channels});
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < parts; ++p) {
      T* orow = out.data() +
                (static_cast<std::int64_t>(b) * parts + p) * 2 * channels;
      for (int h = 0; h < heads; ++h) {
        const std::int64_t off =
            ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * channels;
        const T* rrow = f_r.data() + off;
        const T* wrow = f_w.data() + off;
        for (int c = 0; c < channels; ++c) {
          orow[c] += rrow[c];
          orow[channels + c] += wrow[c];
        }
      }
    }
  return out;
}

template <typename T>
void fuse_salient_backward(const Tensor<T>& d_fs, int heads, Tensor<T>& d_fr,
                           Tensor<T>& d_fw) {
  const int batch = d_fr.extent(0), parts = d_fr.extent(2),
            channels = d_fr.extent(3);
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < parts; ++p) {
      const T* grow = d_fs.data() +
                      (static_cast<std::int64_t>(b) * parts + p) * 2 * channels;
      for (int h = 0; h < heads; ++h) {
        const std::int64_t off =
            ((static_cast<std::int64_t>(b) * heads + h) * parts + p) * channels;
        T* drr = d_fr.data() + off;
        T* dwr = d_fw.data() + off;
        for (int c = 0; c < channels; ++c) {
          drr[c] += grow[c];
          dwr[c] += grow[channels + c];
        }
      }
    }
}

// ---------------------------------------------------------------------------
// classify_logits: shared FC C -> C_t over all (sample, head, part) rows.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> classify_logits(const Tensor<T>& f_w, const ParamSet<T>& ps) {
  return linear(f_w, ps.value("ssfl.cls.w"), ps.value("ssfl.cls.b"));
}

template <typename T>
void classify_logits_backward(const Tensor<T>& f_w, const Tensor<T>& d_logits,
                              ParamSet<T>& ps, Tensor<T>& d_fw) {
  linear_backward(f_w, ps.value("ssfl.cls.w"), d_logits, &d_fw,
                  &ps.grad("ssfl.cls.w"), &ps.grad("ssfl.cls.b"));
}

// ---------------------------------------------------------------------------
// Full SSFL pass.
// ---------------------------------------------------------------------------

template <typename T>
struct SsflCache {
  FuseScalesCache<T> fuse;
  Tensor<T> s_in;
  PartScoresCache<T> scores_cache;
  PartScores<T> sel;
  Tensor<T> t_f;  // the frame-scale input the gathers read from
  Tensor<T> f_w, f_r;
};

template <typename T>
struct SsflOut {
  Tensor<T> f_s;      // [B,K,2C]
  Tensor<T> logits;   // [B,H,K,C_t]
};

template <typename T>
SsflOut<T> ssfl_forward(const std::vector<const Tensor<T>*>& scales,
                        const Tensor<T>& t_f, const ParamSet<T>& ps,
                        const SsflConfig& cfg, SsflCache<T>& cache) {
  cache.t_f = t_f;
  cache.s_in = fuse_scales(scales, ps, &cache.fuse);
  cache.sel = part_scores(cache.s_in, ps, cfg.heads, &cache.scores_cache);
  cache.f_w = weighted_feature(t_f, cache.sel.scores);
  cache.f_r = recombine(t_f, cache.sel);
  SsflOut<T> out;
  out.logits = classify_logits(cache.f_w, ps);
  out.f_s = fuse_salient(cache.f_r, cache.f_w);
  return out;
}

// dscales: gradient slots for the fused scales; d_t_f accumulates the
// frame-scale gradient from both the weighted and the recombined path.
template <typename T>
void ssfl_backward(const SsflCache<T>& cache, const Tensor<T>& d_fs,
                   const Tensor<T>& d_logits, ParamSet<T>& ps,
                   const SsflConfig& cfg,
                   const std::vector<Tensor<T>*>& dscales, Tensor<T>& d_t_f) {
  Tensor<T> d_fr(cache.f_r.shape());
  Tensor<T> d_fw(cache.f_w.shape());
  fuse_salient_backward(d_fs, cfg.heads, d_fr, d_fw);
  if (!d_logits.empty()) {
    classify_logits_backward(cache.f_w, d_logits, ps, d_fw);
  }
  recombine_backward(cache.t_f, cache.sel, d_fr, d_t_f);
  Tensor<T> d_scores(cache.sel.scores.shape());
  weighted_feature_backward(cache.t_f, cache.sel.scores, d_fw, d_t_f, d_scores);
  Tensor<T> d_s_in(cache.s_in.shape());
  part_scores_backward(cache.scores_cache, d_scores, ps, cfg.heads, d_s_in);
  fuse_scales_backward(cache.fuse, d_s_in, ps, dscales);
}

}  // namespace cstl
