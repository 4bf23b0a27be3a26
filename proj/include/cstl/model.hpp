#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/ata.hpp"
#include "cstl/backbone.hpp"
#include "cstl/losses.hpp"
#include "cstl/mste.hpp"
#include "cstl/output_head.hpp"
#include "cstl/param_set.hpp"
#include "cstl/ssfl.hpp"

namespace cstl {

// Whole-network configuration. The baseline variant keeps only the
// backbone, part pooling, a temporal max and the per-part output FC.
struct ModelConfig {
  BackboneConfig backbone;
  int parts = 32;
  int heads = 4;
  int embed_dim = 256;
  int num_classes = 0;
  LocalVariant local = LocalVariant::kFc;
  bool scale_frame = true;
  bool scale_short = true;
  bool scale_long = true;
  bool baseline = false;
  int bottleneck_ratio = 16;

  int channels() const { return backbone.out_channels(); }

  MsteConfig mste() const {
    MsteConfig m;
    m.frame = scale_frame;
    m.short_term = scale_short;
    m.long_term = scale_long;
    m.bottleneck_ratio = bottleneck_ratio;
    return m;
  }
  AtaConfig ata() const {
    AtaConfig a;
    a.local = local;
    a.heads = heads;
    a.bottleneck_ratio = bottleneck_ratio;
    return a;
  }
  SsflConfig ssfl() const {
    SsflConfig s;
    s.heads = heads;
    s.num_classes = num_classes;
    return s;
  }
  OutputConfig output() const {
    OutputConfig o;
    o.parts = parts;
    o.in_dim = baseline ? channels() : 3 * channels();
    o.embed_dim = embed_dim;
    return o;
  }

  void validate() const {
    if (parts < 1 || backbone.out_h() % parts != 0) {
      throw std::invalid_argument("model: parts must divide feature height " +
                                  std::to_string(backbone.out_h()));
    }
    if (!baseline && (channels() % heads != 0)) {
      throw std::invalid_argument("model: heads must divide channels");
    }
    if (!baseline && !scale_frame && !scale_short && !scale_long) {
      throw std::invalid_argument("model: no temporal scale enabled");
    }
  }
};

template <typename T>
struct ModelLosses {
  T total = T(0);
  T tri = T(0);
  T ce = T(0);
};

// The assembled network. Parameters live in a ParamSet keyed by module
// path; forward_loss caches activations for one backward pass.
template <typename T>
class CstlModel {
 public:
  CstlModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x1717));
    backbone_init(params_, cfg_.backbone, rng);
    if (!cfg_.baseline) {
      mste_init(params_, cfg_.channels(), cfg_.mste(), rng);
      ata_init(params_, cfg_.channels(), cfg_.mste().num_scales(), cfg_.ata(), rng);
      ssfl_init(params_, cfg_.channels(), cfg_.mste().num_scales(), cfg_.ssfl(), rng);
    }
    output_init(params_, cfg_.output(), rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // Inference embedding; no caches survive the call.
  Tensor<T> embed(const Tensor<T>& clips) {
    Caches scratch;
    Tensor<T> logits;
    return pipeline(clips, scratch, &logits);
  }

  ModelLosses<T> forward_loss(const Tensor<T>& clips,
                              const std::vector<int>& labels, T margin) {
    labels_ = labels;
    margin_ = margin;
    Tensor<T> logits;
    f_o_ = pipeline(clips, caches_, &logits);
    logits_ = std::move(logits);

    ModelLosses<T> out;
    out.tri = batch_all_triplet(f_o_, labels_, margin_, &triplet_cache_);
    if (!cfg_.baseline) {
      out.ce = cross_entropy(logits_, labels_, &ce_cache_);
    }
    out.total = total_loss(out.ce, out.tri);
    return out;
  }

  // Accumulates parameter gradients for the last forward_loss call.
  void backward() {
    Tensor<T> d_fo(f_o_.shape());
    batch_all_triplet_backward(f_o_, labels_, triplet_cache_, d_fo);

    const auto out_cfg = cfg_.output();
    Tensor<T> dx({f_o_.extent(0), cfg_.parts, out_cfg.in_dim});
    output_backward(caches_.head_in, d_fo, params_, out_cfg, dx);

    Tensor<T> dP(caches_.p.shape());
    if (cfg_.baseline) {
      // dx is [B,K,C]; undo temporal max then part pooling
      baseline_pool_backward(dx, dP);
    } else {
      Tensor<T> d_ft({dx.extent(0), cfg_.parts, cfg_.channels()});
      Tensor<T> d_fs({dx.extent(0), cfg_.parts, 2 * cfg_.channels()});
      concat_backward(dx, 2, {&d_ft, &d_fs});

      Tensor<T> d_logits(logits_.shape());
      cross_entropy_backward(ce_cache_, labels_, d_logits);

      auto scales = caches_.msf.enabled();
      std::vector<Tensor<T>> dscales;
      dscales.reserve(scales.size());
      for (const auto* s : scales) dscales.emplace_back(s->shape());
      std::vector<Tensor<T>*> dscale_ptrs;
      for (auto& t : dscales) dscale_ptrs.push_back(&t);

      ssfl_backward(caches_.ssfl, d_fs, d_logits, params_, cfg_.ssfl(),
                    dscale_ptrs, dP);
      ata_backward(caches_.ata, d_ft, params_, cfg_.ata(), dscale_ptrs);

      const auto mcfg = cfg_.mste();
      std::size_t slot = 0;
      Tensor<T> d_frame, d_short, d_long;
      if (mcfg.frame) d_frame = std::move(dscales[slot++]);
      if (mcfg.short_term) d_short = std::move(dscales[slot++]);
      if (mcfg.long_term) d_long = std::move(dscales[slot++]);
      mste_backward(caches_.mste, d_frame, d_short, d_long, mcfg, params_, dP);
    }

    Tensor<T> d_feat(caches_.feat.shape());
    part_pool_backward(caches_.feat, cfg_.parts, dP, d_feat);
    backbone_backward(d_feat, caches_.bb, params_, cfg_.backbone);
  }

  // Intermediates exposed for structural tests.
  const Tensor<T>& last_attention() const { return caches_.ata.tr.attn; }
  const PartScores<T>& last_selection() const { return caches_.ssfl.sel; }
  const MultiScale<T>& last_scales() const { return caches_.msf; }
  const Tensor<T>& last_embedding() const { return f_o_; }
  const Tensor<T>& last_logits() const { return logits_; }

 private:
  struct Caches {
    BackboneCache<T> bb;
    Tensor<T> feat;    // [B,N,C,H',W']
    Tensor<T> p;       // [B,N,C,K]
    MsteCache<T> mste;
    MultiScale<T> msf;
    AtaCache<T> ata;
    SsflCache<T> ssfl;
    Tensor<T> head_in;  // [B,K,in_dim]
  };

  Tensor<T> pipeline(const Tensor<T>& clips, Caches& c, Tensor<T>* logits) {
    c.feat = backbone_forward(clips, params_, cfg_.backbone, &c.bb);
    c.p = part_pool(c.feat, cfg_.parts);
    if (cfg_.baseline) {
      c.head_in = baseline_pool(c.p);
      *logits = Tensor<T>();
    } else {
      c.msf = mste_forward(c.p, params_, cfg_.mste(), &c.mste);
      auto scales = c.msf.enabled();
      Tensor<T> f_t = ata_forward(scales, params_, cfg_.ata(), c.ata);
      auto ssfl_out = ssfl_forward(scales, c.p, params_, cfg_.ssfl(), c.ssfl);
      *logits = std::move(ssfl_out.logits);
      c.head_in = concat<T>({&f_t, &ssfl_out.f_s}, 2);
    }
    return output_forward(c.head_in, params_, cfg_.output());
  }

  // Baseline temporal aggregation: per-part max over frames.
  Tensor<T> baseline_pool(const Tensor<T>& p) const {
    const int batch = p.extent(0), frames = p.extent(1), channels = p.extent(2),
              parts = p.extent(3);
    Tensor<T> out({batch, parts, channels});
    for (int b = 0; b < batch; ++b)
      for (int k = 0; k < parts; ++k)
        for (int ch = 0; ch < channels; ++ch) {
          T best = p(b, 0, ch, k);
          for (int n = 1; n < frames; ++n) {
            best = std::max(best, p(b, n, ch, k));
          }
          out(b, k, ch) = best;
        }
    return out;
  }

  void baseline_pool_backward(const Tensor<T>& dx, Tensor<T>& dP) const {
    const auto& p = caches_.p;
    const int batch = p.extent(0), frames = p.extent(1), channels = p.extent(2),
              parts = p.extent(3);
    for (int b = 0; b < batch; ++b)
      for (int k = 0; k < parts; ++k)
        for (int ch = 0; ch < channels; ++ch) {
          int arg = 0;
          T best = p(b, 0, ch, k);
          for (int n = 1; n < frames; ++n) {
            if (p(b, n, ch, k) > best) {
              best = p(b, n, ch, k);
              arg = n;
            }
          }
          dP(b, arg, ch, k) += dx(b, k, ch);
        }
  }

  ModelConfig cfg_;
  ParamSet<T> params_;
  Caches caches_;
  Tensor<T> f_o_, logits_;
  std::vector<int> labels_;
  T margin_ = T(0);
  TripletCache<T> triplet_cache_;
  CrossEntropyCache<T> ce_cache_;
};

}  // namespace cstl
