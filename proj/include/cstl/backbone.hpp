#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/kernels.hpp"
#include "cstl/param_set.hpp"

namespace cstl {

// 4-layer silhouette CNN: conv-conv-pool-conv-conv, 3x3 kernels, pad 1,
// leaky ReLU after every conv. Channel profile and input resolution are
// configurable; the full profile is {32,64,128,128} at 64x44.
struct BackboneConfig {
  std::vector<int> channels{32, 64, 128, 128};
  int in_h = 64;
  int in_w = 44;

  int out_channels() const { return channels.back(); }
  int out_h() const { return in_h / 2; }
  int out_w() const { return in_w / 2; }
};

inline BackboneConfig toy_backbone(int in_h = 64, int in_w = 44) {
  BackboneConfig cfg;
  cfg.channels = {8, 16, 32, 32};
  cfg.in_h = in_h;
  cfg.in_w = in_w;
  return cfg;
}

template <typename T>
void backbone_init(ParamSet<T>& ps, const BackboneConfig& cfg, Rng& rng) {
  if (cfg.channels.size() != 4) {
    throw std::invalid_argument("backbone: channel profile must have 4 layers");
  }
  if (cfg.in_h % 2 != 0 || cfg.in_w % 2 != 0) {
    throw std::invalid_argument("backbone: resolution must be even");
  }
  int cin = 1;
  for (int layer = 0; layer < 4; ++layer) {
    const int cout = cfg.channels[static_cast<std::size_t>(layer)];
    const std::string base = "backbone.conv" + std::to_string(layer + 1);
    ps.add(base + ".w", uniform_init<T>({cout, cin, 3, 3}, cin * 9, rng));
    ps.add(base + ".b", Tensor<T>({cout}));
    cin = cout;
  }
}

template <typename T>
struct BackboneCache {
  Tensor<T> x;  // frames folded into the batch axis: [B*N,1,H,W]
  Tensor<T> z1, a1, z2, a2, p2, z3, a3, z4;
};

// clips[B,N,1,H,W] -> feature [B,N,C,H/2,W/2]. Frames are independent:
// the frame axis is folded into the batch for the 2D stack.
template <typename T>
Tensor<T> backbone_forward(const Tensor<T>& clips, const ParamSet<T>& ps,
                           const BackboneConfig& cfg,
                           BackboneCache<T>* cache = nullptr) {
  if (clips.rank() != 5 || clips.extent(2) != 1) {
    throw std::invalid_argument("backbone: input must be [B,N,1,H,W]");
  }
  if (clips.extent(3) != cfg.in_h || clips.extent(4) != cfg.in_w) {
    throw std::invalid_argument(
        "backbone: unsupported resolution " + std::to_string(clips.extent(3)) +
        "x" + std::to_string(clips.extent(4)) + ", configured for " +
        std::to_string(cfg.in_h) + "x" + std::to_string(cfg.in_w));
  }
  const int batch = clips.extent(0), frames = clips.extent(1);
  auto x = clips.reshaped({batch * frames, 1, cfg.in_h, cfg.in_w});

  auto z1 = conv2d(x, ps.value("backbone.conv1.w"), ps.value("backbone.conv1.b"), 1, 1);
  auto a1 = activation(z1, Act::kLeakyRelu);
  auto z2 = conv2d(a1, ps.value("backbone.conv2.w"), ps.value("backbone.conv2.b"), 1, 1);
  auto a2 = activation(z2, Act::kLeakyRelu);
  auto p2 = max_pool2d(a2, 2, 2);
  auto z3 = conv2d(p2, ps.value("backbone.conv3.w"), ps.value("backbone.conv3.b"), 1, 1);
  auto a3 = activation(z3, Act::kLeakyRelu);
  auto z4 = conv2d(a3, ps.value("backbone.conv4.w"), ps.value("backbone.conv4.b"), 1, 1);
  auto a4 = activation(z4, Act::kLeakyRelu);

  auto out = a4.reshaped(
      {batch, frames, cfg.out_channels(), cfg.out_h(), cfg.out_w()});
  if (cache) {
    cache->x = std::move(x);
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
    cache->p2 = std::move(p2);
    cache->z3 = std::move(z3);
    cache->a3 = std::move(a3);
    cache->z4 = std::move(z4);
  }
  return out;
}

template <typename T>
void backbone_backward(const Tensor<T>& d_feat, const BackboneCache<T>& cache,
                       ParamSet<T>& ps, const BackboneConfig& cfg,
                       Tensor<T>* d_clips = nullptr) {
  const int folded = cache.x.extent(0);
  auto dy = d_feat.reshaped({folded, cfg.out_channels(), cfg.out_h(), cfg.out_w()});

  Tensor<T> dz4(cache.z4.shape());
  activation_backward(cache.z4, cache.z4, dy, Act::kLeakyRelu, dz4);

  Tensor<T> da3(cache.a3.shape());
  conv2d_backward(cache.a3, ps.value("backbone.conv4.w"), 1, 1, dz4, &da3,
                  &ps.grad("backbone.conv4.w"), &ps.grad("backbone.conv4.b"));
  Tensor<T> dz3(cache.z3.shape());
  activation_backward(cache.z3, cache.z3, da3, Act::kLeakyRelu, dz3);

  Tensor<T> dp2(cache.p2.shape());
  conv2d_backward(cache.p2, ps.value("backbone.conv3.w"), 1, 1, dz3, &dp2,
                  &ps.grad("backbone.conv3.w"), &ps.grad("backbone.conv3.b"));

  Tensor<T> da2(cache.a2.shape());
  max_pool2d_backward(cache.a2, dp2, da2);
  Tensor<T> dz2(cache.z2.shape());
  activation_backward(cache.z2, cache.z2, da2, Act::kLeakyRelu, dz2);

  Tensor<T> da1(cache.a1.shape());
  conv2d_backward(cache.a1, ps.value("backbone.conv2.w"), 1, 1, dz2, &da1,
                  &ps.grad("backbone.conv2.w"), &ps.grad("backbone.conv2.b"));
  Tensor<T> dz1(cache.z1.shape());
  activation_backward(cache.z1, cache.z1, da1, Act::kLeakyRelu, dz1);

  if (d_clips) {
    auto dx = Tensor<T>(cache.x.shape());
    conv2d_backward(cache.x, ps.value("backbone.conv1.w"), 1, 1, dz1, &dx,
                    &ps.grad("backbone.conv1.w"), &ps.grad("backbone.conv1.b"));
    const T* src = dx.data();
    T* dst = d_clips->data();
    for (std::int64_t i = 0; i < dx.numel(); ++i) dst[i] += src[i];
  } else {
    conv2d_backward(cache.x, ps.value("backbone.conv1.w"), 1, 1, dz1, nullptr,
                    &ps.grad("backbone.conv1.w"), &ps.grad("backbone.conv1.b"));
  }
}

// Vertical part pooling: K contiguous horizontal strips of the feature map,
// each reduced per channel to GMP(strip) + GAP(strip).
// feat[B,N,C,H,W] -> P[B,N,C,K]
template <typename T>
Tensor<T> part_pool(const Tensor<T>& feat, int parts) {
  if (feat.rank() != 5) {
    throw std::invalid_argument("part_pool: input must be [B,N,C,H,W]");
  }
  const int h = feat.extent(3);
  if (parts < 1 || h % parts != 0) {
    throw std::invalid_argument("part_pool: K=" + std::to_string(parts) +
                                " does not divide feature height " +
                                std::to_string(h));
  }
  const int batch = feat.extent(0), frames = feat.extent(1),
            c = feat.extent(2), w = feat.extent(4);
  const int strip = h / parts;
  Tensor<T> out({batch, frames, c, parts});

  const std::int64_t planes = static_cast<std::int64_t>(batch) * frames * c;
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = feat.data() + p * h * w;
    T* dst = out.data() + p * parts;
    for (int k = 0; k < parts; ++k) {
      const T* s = src + static_cast<std::int64_t>(k) * strip * w;
      T best = s[0];
      T sum = T(0);
      for (int i = 0; i < strip * w; ++i) {
        if (s[i] > best) best = s[i];
        sum += s[i];
      }
      dst[k] = best + sum / static_cast<T>(strip * w);
    }
  });
  return out;
}

template <typename T>
void part_pool_backward(const Tensor<T>& feat, int parts, const Tensor<T>& dP,
                        Tensor<T>& d_feat) {
  const int h = feat.extent(3), w = feat.extent(4);
  const int strip = h / parts;
  const std::int64_t planes =
      static_cast<std::int64_t>(feat.extent(0)) * feat.extent(1) * feat.extent(2);
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = feat.data() + p * h * w;
    const T* g = dP.data() + p * parts;
    T* dst = d_feat.data() + p * h * w;
    for (int k = 0; k < parts; ++k) {
      const std::int64_t base = static_cast<std::int64_t>(k) * strip * w;
      int arg = 0;
      T best = src[base];
      for (int i = 1; i < strip * w; ++i) {
        if (src[base + i] > best) {
          best = src[base + i];
          arg = i;
        }
      }
      const T gk = g[k];
      dst[base + arg] += gk;
      const T mean_share = gk / static_cast<T>(strip * w);
      for (int i = 0; i < strip * w; ++i) dst[base + i] += mean_share;
    }
  });
}

}  // namespace cstl
