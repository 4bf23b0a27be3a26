#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "cstl/ata.hpp"
#include "cstl/backbone.hpp"
#include "cstl/grad_check.hpp"
#include "cstl/losses.hpp"
#include "cstl/model.hpp"
#include "cstl/mste.hpp"
#include "cstl/output_head.hpp"
#include "cstl/ssfl.hpp"

namespace cstl {

struct GradCheckCase {
  std::string module;
  std::string name;
  double limit = 1e-5;
  double max_rel_error = 0.0;
  bool ok = false;
  std::string detail;
  double seconds = 0.0;
};

namespace gradcheck_detail {

template <typename T>
Tensor<T> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  }
  return t;
}

inline double wsum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += y.data()[i] * w.data()[i];
  return s;
}

}  // namespace gradcheck_detail

// Finite-difference verification of every differentiable operation plus the
// assembled pipeline, all in double precision on fixed small fixtures.
inline std::vector<GradCheckCase> run_gradcheck_suite(
    const std::string& module_filter = "") {
  using gradcheck_detail::rand_tensor;
  using gradcheck_detail::wsum;
  std::vector<GradCheckCase> results;

  auto run = [&](const std::string& module, const std::string& name,
                 double limit, const std::function<GradCheckReport()>& fn) {
    if (!module_filter.empty() && module_filter != module) return;
    GradCheckCase c;
    c.module = module;
    c.name = name;
    c.limit = limit;
    const auto start = std::chrono::steady_clock::now();
    const auto report = fn();
    c.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start)
                    .count();
    c.max_rel_error = report.max_rel_error;
    c.ok = report.ok && report.max_rel_error <= limit;
    c.detail = report.ok ? report.worst_param : report.message;
    results.push_back(std::move(c));
  };

  run("numkernel", "conv2d", 1e-5, [] {
    Rng rng(4);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({2, 2, 6, 4}, rng));
    ps.add("w", rand_tensor<double>({3, 2, 3, 3}, rng));
    ps.add("b", rand_tensor<double>({3}, rng));
    auto probe = rand_tensor<double>({2, 3, 6, 4}, rng);
    return grad_check(
        ps,
        [&] { return wsum(conv2d(ps.value("x"), ps.value("w"), ps.value("b"), 1, 1), probe); },
        [&] {
          ps.zero_grads();
          conv2d_backward(ps.value("x"), ps.value("w"), 1, 1, probe,
                          &ps.grad("x"), &ps.grad("w"), &ps.grad("b"));
        });
  });

  run("numkernel", "max_pool2d", 1e-5, [] {
    Rng rng(6);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({2, 2, 6, 4}, rng));
    auto probe = rand_tensor<double>({2, 2, 3, 2}, rng);
    return grad_check(
        ps, [&] { return wsum(max_pool2d(ps.value("x"), 2, 2), probe); },
        [&] {
          ps.zero_grads();
          max_pool2d_backward(ps.value("x"), probe, ps.grad("x"));
        });
  });

  run("numkernel", "conv1d_temporal", 1e-5, [] {
    Rng rng(10);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({1, 2, 3, 5}, rng));
    ps.add("w", rand_tensor<double>({2, 3, 3}, rng));
    ps.add("b", rand_tensor<double>({2}, rng));
    auto probe = rand_tensor<double>({1, 2, 2, 5}, rng);
    return grad_check(
        ps,
        [&] {
          return wsum(conv1d_temporal(ps.value("x"), ps.value("w"), ps.value("b")), probe);
        },
        [&] {
          ps.zero_grads();
          conv1d_temporal_backward(ps.value("x"), ps.value("w"), probe,
                                   &ps.grad("x"), &ps.grad("w"), &ps.grad("b"));
        });
  });

  run("numkernel", "dwconv1d_temporal", 1e-5, [] {
    Rng rng(14);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({1, 2, 3, 5}, rng));
    ps.add("w", rand_tensor<double>({3, 3}, rng));
    auto probe = rand_tensor<double>({1, 2, 3, 5}, rng);
    return grad_check(
        ps,
        [&] { return wsum(dwconv1d_temporal(ps.value("x"), ps.value("w")), probe); },
        [&] {
          ps.zero_grads();
          dwconv1d_temporal_backward(ps.value("x"), ps.value("w"), probe,
                                     &ps.grad("x"), &ps.grad("w"));
        });
  });

  run("numkernel", "linear", 1e-5, [] {
    Rng rng(18);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({3, 2, 4}, rng));
    ps.add("w", rand_tensor<double>({4, 3}, rng));
    ps.add("b", rand_tensor<double>({3}, rng));
    auto probe = rand_tensor<double>({3, 2, 3}, rng);
    return grad_check(
        ps,
        [&] { return wsum(linear(ps.value("x"), ps.value("w"), ps.value("b")), probe); },
        [&] {
          ps.zero_grads();
          linear_backward(ps.value("x"), ps.value("w"), probe, &ps.grad("x"),
                          &ps.grad("w"), &ps.grad("b"));
        });
  });

  run("numkernel", "softmax", 1e-5, [] {
    Rng rng(21);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({3, 4}, rng));
    auto probe = rand_tensor<double>({3, 4}, rng);
    return grad_check(
        ps, [&] { return wsum(softmax(ps.value("x"), 1), probe); },
        [&] {
          ps.zero_grads();
          auto y = softmax(ps.value("x"), 1);
          softmax_backward(y, probe, 1, ps.grad("x"));
        });
  });

  run("numkernel", "layer_norm", 1e-5, [] {
    Rng rng(24);
    ParamSet<double> ps;
    ps.add("x", rand_tensor<double>({3, 5}, rng));
    ps.add("gamma", rand_tensor<double>({5}, rng, 0.5, 1.5));
    ps.add("beta", rand_tensor<double>({5}, rng));
    auto probe = rand_tensor<double>({3, 5}, rng);
    return grad_check(
        ps,
        [&] {
          return wsum(layer_norm(ps.value("x"), ps.value("gamma"),
                                 ps.value("beta"), 1e-5),
                      probe);
        },
        [&] {
          ps.zero_grads();
          LayerNormCache<double> cache;
          layer_norm(ps.value("x"), ps.value("gamma"), ps.value("beta"), 1e-5,
                     &cache);
          layer_norm_backward(ps.value("x"), ps.value("gamma"), cache, probe,
                              &ps.grad("x"), &ps.grad("gamma"), &ps.grad("beta"));
        });
  });

  for (auto [kind, label] : {std::pair{Act::kLeakyRelu, "leaky_relu"},
                             std::pair{Act::kRelu, "relu"},
                             std::pair{Act::kSigmoid, "sigmoid"}}) {
    run("numkernel", std::string("activation_") + label, 1e-5, [kind] {
      Rng rng(27);
      ParamSet<double> ps;
      auto x = rand_tensor<double>({24}, rng);
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.01;
      }
      ps.add("x", x);
      auto probe = rand_tensor<double>({24}, rng);
      return grad_check(
          ps, [&] { return wsum(activation(ps.value("x"), kind), probe); },
          [&] {
            ps.zero_grads();
            auto y = activation(ps.value("x"), kind);
            activation_backward(ps.value("x"), y, probe, kind, ps.grad("x"));
          });
    });
  }

  run("backbone", "backbone_forward", 1e-5, [] {
    BackboneConfig cfg;
    cfg.channels = {2, 3, 4, 4};
    cfg.in_h = 8;
    cfg.in_w = 6;
    ParamSet<double> ps;
    Rng rng(5);
    backbone_init(ps, cfg, rng);
    auto clips = rand_tensor<double>({1, 2, 1, 8, 6}, rng);
    auto probe = rand_tensor<double>({1, 2, 4, 4, 3}, rng);
    return grad_check(
        ps, [&] { return wsum(backbone_forward(clips, ps, cfg), probe); },
        [&] {
          ps.zero_grads();
          BackboneCache<double> cache;
          backbone_forward(clips, ps, cfg, &cache);
          backbone_backward(probe, cache, ps, cfg);
        });
  });

  run("backbone", "part_pool", 1e-5, [] {
    Rng rng(10);
    ParamSet<double> ps;
    ps.add("feat", rand_tensor<double>({1, 2, 2, 4, 3}, rng));
    auto probe = rand_tensor<double>({1, 2, 2, 2}, rng);
    return grad_check(
        ps, [&] { return wsum(part_pool(ps.value("feat"), 2), probe); },
        [&] {
          ps.zero_grads();
          part_pool_backward(ps.value("feat"), 2, probe, ps.grad("feat"));
        });
  });

  run("mste", "short_and_long_term", 1e-5, [] {
    MsteConfig cfg;
    ParamSet<double> ps;
    Rng rng(22);
    mste_init(ps, 6, cfg, rng);
    ps.add("p", rand_tensor<double>({1, 4, 6, 2}, rng));
    auto probe_f = rand_tensor<double>({1, 4, 6, 2}, rng);
    auto probe_s = rand_tensor<double>({1, 4, 6, 2}, rng);
    auto probe_l = rand_tensor<double>({1, 4, 6, 2}, rng);
    return grad_check(
        ps,
        [&] {
          auto msf = mste_forward(ps.value("p"), ps, cfg);
          return wsum(msf.frame, probe_f) + wsum(msf.short_term, probe_s) +
                 wsum(msf.long_term, probe_l);
        },
        [&] {
          ps.zero_grads();
          MsteCache<double> cache;
          mste_forward(ps.value("p"), ps, cfg, &cache);
          mste_backward(cache, probe_f, probe_s, probe_l, cfg, ps, ps.grad("p"));
        });
  });

  for (auto [variant, label] : {std::pair{LocalVariant::kMax, "local_max"},
                                std::pair{LocalVariant::kFc, "local_fc"},
                                std::pair{LocalVariant::kAttention,
                                          "local_attention"}}) {
    run("ata", std::string("full_ata_") + label, 1e-5, [variant] {
      AtaConfig cfg;
      cfg.heads = 2;
      cfg.local = variant;
      ParamSet<double> ps;
      Rng rng(21);
      ata_init(ps, 8, 3, cfg, rng);
      ps.add("s0", rand_tensor<double>({1, 3, 8, 2}, rng));
      ps.add("s1", rand_tensor<double>({1, 3, 8, 2}, rng));
      ps.add("s2", rand_tensor<double>({1, 3, 8, 2}, rng));
      auto probe = rand_tensor<double>({1, 2, 8}, rng);
      return grad_check(
          ps,
          [&] {
            AtaCache<double> cache;
            std::vector<const Tensor<double>*> scales{
                &ps.value("s0"), &ps.value("s1"), &ps.value("s2")};
            return wsum(ata_forward(scales, ps, cfg, cache), probe);
          },
          [&] {
            ps.zero_grads();
            AtaCache<double> cache;
            std::vector<const Tensor<double>*> scales{
                &ps.value("s0"), &ps.value("s1"), &ps.value("s2")};
            ata_forward(scales, ps, cfg, cache);
            std::vector<Tensor<double>*> dscales{&ps.grad("s0"), &ps.grad("s1"),
                                                 &ps.grad("s2")};
            ata_backward(cache, probe, ps, cfg, dscales);
          });
    });
  }

  run("ssfl", "full_ssfl", 1e-5, [] {
    SsflConfig cfg;
    cfg.heads = 2;
    cfg.num_classes = 4;
    ParamSet<double> ps;
    Rng rng(26);
    ssfl_init(ps, 8, 3, cfg, rng);
    ps.add("s0", rand_tensor<double>({1, 3, 8, 2}, rng));
    ps.add("s1", rand_tensor<double>({1, 3, 8, 2}, rng));
    ps.add("s2", rand_tensor<double>({1, 3, 8, 2}, rng));
    auto probe_fs = rand_tensor<double>({1, 2, 16}, rng);
    auto probe_lg = rand_tensor<double>({1, 2, 2, 4}, rng);
    return grad_check(
        ps,
        [&] {
          SsflCache<double> cache;
          std::vector<const Tensor<double>*> scales{
              &ps.value("s0"), &ps.value("s1"), &ps.value("s2")};
          auto out = ssfl_forward(scales, ps.value("s0"), ps, cfg, cache);
          return wsum(out.f_s, probe_fs) + wsum(out.logits, probe_lg);
        },
        [&] {
          ps.zero_grads();
          SsflCache<double> cache;
          std::vector<const Tensor<double>*> scales{
              &ps.value("s0"), &ps.value("s1"), &ps.value("s2")};
          ssfl_forward(scales, ps.value("s0"), ps, cfg, cache);
          std::vector<Tensor<double>*> dscales{&ps.grad("s0"), &ps.grad("s1"),
                                               &ps.grad("s2")};
          ssfl_backward(cache, probe_fs, probe_lg, ps, cfg, dscales,
                        ps.grad("s0"));
        });
  });

  run("output", "per_part_fc", 1e-5, [] {
    OutputConfig cfg{2, 4, 3};
    ParamSet<double> ps;
    Rng rng(6);
    output_init(ps, cfg, rng);
    ps.add("x", rand_tensor<double>({2, 2, 4}, rng));
    auto probe = rand_tensor<double>({2, 2, 3}, rng);
    return grad_check(
        ps, [&] { return wsum(output_forward(ps.value("x"), ps, cfg), probe); },
        [&] {
          ps.zero_grads();
          output_backward(ps.value("x"), probe, ps, cfg, ps.grad("x"));
        });
  });

  run("losses", "batch_all_triplet", 1e-5, [] {
    Rng rng(9);
    ParamSet<double> ps;
    ps.add("f", rand_tensor<double>({4, 2, 3}, rng));
    std::vector<int> y{0, 0, 1, 1};
    return grad_check(
        ps, [&] { return batch_all_triplet(ps.value("f"), y, 0.2); },
        [&] {
          ps.zero_grads();
          TripletCache<double> cache;
          batch_all_triplet(ps.value("f"), y, 0.2, &cache);
          batch_all_triplet_backward(ps.value("f"), y, cache, ps.grad("f"));
        });
  });

  run("losses", "cross_entropy", 1e-5, [] {
    Rng rng(12);
    ParamSet<double> ps;
    ps.add("logits", rand_tensor<double>({2, 2, 2, 4}, rng));
    std::vector<int> y{1, 3};
    return grad_check(
        ps, [&] { return cross_entropy(ps.value("logits"), y); },
        [&] {
          ps.zero_grads();
          CrossEntropyCache<double> cache;
          cross_entropy(ps.value("logits"), y, &cache);
          cross_entropy_backward(cache, y, ps.grad("logits"));
        });
  });

  // Whole network, at the reference toy shapes B=4, N=6, K=4, C=8,
  // two heads, four classes.
  run("pipeline", "full_network_total_loss", 1e-4, [] {
    ModelConfig cfg;
    cfg.backbone.channels = {2, 4, 8, 8};
    cfg.backbone.in_h = 16;
    cfg.backbone.in_w = 12;
    cfg.parts = 4;
    cfg.heads = 2;
    cfg.embed_dim = 8;
    cfg.num_classes = 4;
    CstlModel<double> model(cfg, 25);
    Rng rng(1025);
    auto clips = rand_tensor<double>({4, 6, 1, 16, 12}, rng, 0.0, 1.0);
    std::vector<int> labels{0, 0, 1, 1};
    return grad_check(
        model.params(),
        [&] { return model.forward_loss(clips, labels, 0.2).total; },
        [&] {
          model.params().zero_grads();
          model.forward_loss(clips, labels, 0.2);
          model.backward();
        });
  });

  return results;
}

}  // namespace cstl
