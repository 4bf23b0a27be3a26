#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cstl/grad_check.hpp"
#include "cstl/losses.hpp"
#include "cstl/model.hpp"
#include "cstl/output_head.hpp"
#include "test_util.hpp"

using cstl::CrossEntropyCache;
using cstl::OutputConfig;
using cstl::ParamSet;
using cstl::Rng;
using cstl::Tensor;
using cstl::TripletCache;
using cstl::testutil::max_abs_diff;
using cstl::testutil::random_tensor;
using cstl::testutil::weighted_sum;

TEST(OutputHead, ZeroInputsZeroBiasGiveZeroEmbedding) {
  OutputConfig cfg{2, 6, 4};
  ParamSet<double> ps;
  Rng rng(1);
  output_init(ps, cfg, rng);
  Tensor<double> x({3, 2, 6});
  auto y = output_forward(x, ps, cfg);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(OutputHead, PartWeightsAreIndependent) {
  OutputConfig cfg{2, 6, 4};
  ParamSet<double> ps;
  Rng rng(2);
  output_init(ps, cfg, rng);
  Rng rng2(3);
  auto x = random_tensor<double>({3, 2, 6}, rng2);
  auto y1 = output_forward(x, ps, cfg);
  ps.at("out.part00.w").value(0, 0) += 0.5;  // perturb part 0 only
  auto y2 = output_forward(x, ps, cfg);
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(y1(b, 1, c), y2(b, 1, c));
    }
  EXPECT_GT(max_abs_diff(y1, y2), 0.0);
}

TEST(OutputHead, MatchesPerPartMatmulOracle) {
  OutputConfig cfg{3, 5, 4};
  ParamSet<double> ps;
  Rng rng(4);
  output_init(ps, cfg, rng);
  auto x = random_tensor<double>({2, 3, 5}, rng);
  auto y = output_forward(x, ps, cfg);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 3; ++k) {
      const auto& w = ps.value(cstl::output_param_name(k, "w"));
      const auto& bias = ps.value(cstl::output_param_name(k, "b"));
      for (int c = 0; c < 4; ++c) {
        double s = bias(c);
        for (int i = 0; i < 5; ++i) s += x(b, k, i) * w(i, c);
        EXPECT_NEAR(y(b, k, c), s, 1e-12);
      }
    }
}

TEST(OutputHead, RejectsPartMismatch) {
  OutputConfig cfg{4, 5, 4};
  ParamSet<double> ps;
  Rng rng(5);
  output_init(ps, cfg, rng);
  Tensor<double> x({2, 3, 5});
  EXPECT_THROW(output_forward(x, ps, cfg), std::invalid_argument);
}

TEST(OutputHead, GradientMatchesFiniteDifferencesAndPartsStayLocal) {
  OutputConfig cfg{2, 4, 3};
  ParamSet<double> ps;
  Rng rng(6);
  output_init(ps, cfg, rng);
  ps.add("x", random_tensor<double>({2, 2, 4}, rng));
  auto probe = random_tensor<double>({2, 2, 3}, rng);
  auto loss = [&] {
    return weighted_sum(output_forward(ps.value("x"), ps, cfg), probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    output_backward(ps.value("x"), probe, ps, cfg, ps.grad("x"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;

  // gradient of part 0's embedding w.r.t. part 1 weights is zero
  ps.zero_grads();
  Tensor<double> only_part0(probe.shape());
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) only_part0(b, 0, c) = 1.0;
  output_backward(ps.value("x"), only_part0, ps, cfg, ps.grad("x"));
  const auto& dw1 = ps.grad("out.part01.w");
  for (std::int64_t i = 0; i < dw1.numel(); ++i) EXPECT_EQ(dw1.data()[i], 0.0);
}

// ---------------------------------------------------------------------------

TEST(BatchAllTriplet, WellSeparatedClassesGiveZero) {
  Tensor<double> f({4, 1, 2});
  // two tight clusters far apart
  f(0, 0, 0) = 0.0;
  f(1, 0, 0) = 0.01;
  f(2, 0, 0) = 100.0;
  f(3, 0, 0) = 100.01;
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(cstl::batch_all_triplet(f, y, 0.2), 0.0);
}

TEST(BatchAllTriplet, IdenticalEmbeddingsGiveMargin) {
  auto f = Tensor<double>::full({4, 2, 3}, 1.0);
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(cstl::batch_all_triplet(f, y, 0.2), 0.2);
}

TEST(BatchAllTriplet, MatchesExhaustiveEnumeration) {
  Rng rng(7);
  auto f = random_tensor<double>({4, 1, 3}, rng);
  std::vector<int> y{0, 0, 1, 1};
  const double margin = 0.2;
  const double loss = cstl::batch_all_triplet(f, y, margin);

  auto dist = [&](int i, int j) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = f(i, 0, c) - f(j, 0, c);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double sum = 0.0;
  int cnt = 0;
  for (int a = 0; a < 4; ++a)
    for (int p = 0; p < 4; ++p) {
      if (p == a || y[p] != y[a]) continue;
      for (int n = 0; n < 4; ++n) {
        if (y[n] == y[a]) continue;
        const double term = margin + dist(a, p) - dist(a, n);
        if (term > 0) {
          sum += term;
          ++cnt;
        }
      }
    }
  EXPECT_NEAR(loss, cnt ? sum / cnt : 0.0, 1e-6);
}

TEST(BatchAllTriplet, RejectsDegenerateBatches) {
  Tensor<double> f({3, 1, 2});
  EXPECT_THROW(cstl::batch_all_triplet(f, {0, 0, 0}, 0.2),
               std::invalid_argument);
  EXPECT_THROW(cstl::batch_all_triplet(f, {0, 1, 2}, 0.2),
               std::invalid_argument);
}

TEST(BatchAllTriplet, InvariantUnderRigidTransform) {
  Rng rng(8);
  auto f = random_tensor<double>({6, 1, 2}, rng);
  std::vector<int> y{0, 0, 1, 1, 2, 2};
  const double before = cstl::batch_all_triplet(f, y, 0.2);
  // rotate by 0.7 rad and translate
  Tensor<double> g(f.shape());
  const double ct = std::cos(0.7), st = std::sin(0.7);
  for (int i = 0; i < 6; ++i) {
    g(i, 0, 0) = ct * f(i, 0, 0) - st * f(i, 0, 1) + 3.5;
    g(i, 0, 1) = st * f(i, 0, 0) + ct * f(i, 0, 1) - 1.25;
  }
  const double after = cstl::batch_all_triplet(g, y, 0.2);
  EXPECT_NEAR(before, after, 1e-9);
}

TEST(BatchAllTriplet, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  ParamSet<double> ps;
  ps.add("f", random_tensor<double>({4, 2, 3}, rng));
  std::vector<int> y{0, 0, 1, 1};
  auto loss = [&] { return cstl::batch_all_triplet(ps.value("f"), y, 0.2); };
  auto grad = [&] {
    ps.zero_grads();
    TripletCache<double> cache;
    cstl::batch_all_triplet(ps.value("f"), y, 0.2, &cache);
    cstl::batch_all_triplet_backward(ps.value("f"), y, cache, ps.grad("f"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

// ---------------------------------------------------------------------------

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Tensor<double> logits({2, 1, 1, 3});
  logits(0, 0, 0, 0) = 20.0;
  logits(1, 0, 0, 1) = 20.0;
  const double loss = cstl::cross_entropy(logits, std::vector<int>{0, 1});
  EXPECT_NEAR(loss, 0.0, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  Tensor<double> logits({2, 1, 3, 10});
  const double loss = cstl::cross_entropy(logits, std::vector<int>{3, 7});
  // per-term loss is ln 10; summed over heads (1), averaged over batch/parts
  EXPECT_NEAR(loss, std::log(10.0), 1e-9);
}

TEST(CrossEntropy, MatchesSoftmaxNllOracle) {
  Rng rng(10);
  auto logits = random_tensor<double>({2, 2, 3, 4}, rng);
  std::vector<int> y{2, 0};
  const double loss = cstl::cross_entropy(logits, y);
  double expect = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int h = 0; h < 2; ++h)
      for (int k = 0; k < 3; ++k) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) sum += std::exp(logits(b, h, k, c));
        expect += -std::log(std::exp(logits(b, h, k, y[static_cast<std::size_t>(b)])) / sum);
      }
  expect /= 2 * 3;
  EXPECT_NEAR(loss, expect, 1e-7);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  Tensor<double> logits({1, 1, 1, 3});
  EXPECT_THROW(cstl::cross_entropy(logits, std::vector<int>{3}),
               std::invalid_argument);
}

TEST(CrossEntropy, StrictlyDecreasesWhenCorrectLogitGrows) {
  Rng rng(11);
  auto logits = random_tensor<double>({1, 1, 1, 5}, rng);
  std::vector<int> y{2};
  const double before = cstl::cross_entropy(logits, y);
  logits(0, 0, 0, 2) += 0.5;
  const double after = cstl::cross_entropy(logits, y);
  EXPECT_LT(after, before);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  ParamSet<double> ps;
  ps.add("logits", random_tensor<double>({2, 2, 2, 4}, rng));
  std::vector<int> y{1, 3};
  auto loss = [&] { return cstl::cross_entropy(ps.value("logits"), y); };
  auto grad = [&] {
    ps.zero_grads();
    CrossEntropyCache<double> cache;
    cstl::cross_entropy(ps.value("logits"), y, &cache);
    cstl::cross_entropy_backward(cache, y, ps.grad("logits"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-7);
}

TEST(TotalLoss, IsPlainSum) {
  EXPECT_EQ(cstl::total_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(cstl::total_loss(1.5, 0.25), 1.75);
  Rng rng(13);
  for (int i = 0; i < 8; ++i) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    EXPECT_EQ(cstl::total_loss(a, b), a + b);
  }
}

// ---------------------------------------------------------------------------
// Whole-pipeline composition.
// ---------------------------------------------------------------------------

namespace {

cstl::ModelConfig tiny_config() {
  cstl::ModelConfig cfg;
  cfg.backbone.channels = {2, 4, 8, 8};
  cfg.backbone.in_h = 16;
  cfg.backbone.in_w = 12;
  cfg.parts = 4;
  cfg.heads = 2;
  cfg.embed_dim = 8;
  cfg.num_classes = 4;
  return cfg;
}

}  // namespace

TEST(Model, ForwardShapesAndDeterminism) {
  auto cfg = tiny_config();
  cstl::CstlModel<float> model(cfg, 42);
  Rng rng(14);
  auto clips = random_tensor<float>({2, 3, 1, 16, 12}, rng, 0.0, 1.0);
  auto e1 = model.embed(clips);
  auto e2 = model.embed(clips);
  ASSERT_EQ(e1.shape(), (std::vector<int>{2, 4, 8}));
  for (std::int64_t i = 0; i < e1.numel(); ++i) {
    EXPECT_EQ(e1.data()[i], e2.data()[i]);
  }
}

TEST(Model, AttentionTensorShapeContract) {
  auto cfg = tiny_config();
  cstl::CstlModel<double> model(cfg, 7);
  Rng rng(15);
  auto clips = random_tensor<double>({4, 5, 1, 16, 12}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 0, 1, 1};
  model.forward_loss(clips, labels, 0.2);
  EXPECT_EQ(model.last_attention().shape(),
            (std::vector<int>{4, cfg.heads, cfg.parts, 5, 5}));
}

TEST(Model, BaselineVariantRuns) {
  auto cfg = tiny_config();
  cfg.baseline = true;
  cstl::CstlModel<double> model(cfg, 9);
  Rng rng(16);
  auto clips = random_tensor<double>({4, 3, 1, 16, 12}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 0, 1, 1};
  auto losses = model.forward_loss(clips, labels, 0.2);
  EXPECT_EQ(losses.ce, 0.0);
  EXPECT_GT(losses.tri, 0.0);
  model.params().zero_grads();
  model.backward();
}

TEST(Model, ScaleSubsetVariantsRun) {
  for (int mask = 1; mask < 8; ++mask) {
    auto cfg = tiny_config();
    cfg.scale_frame = mask & 1;
    cfg.scale_short = mask & 2;
    cfg.scale_long = mask & 4;
    cstl::CstlModel<double> model(cfg, 11);
    Rng rng(17);
    auto clips = random_tensor<double>({4, 3, 1, 16, 12}, rng, 0.0, 1.0);
    std::vector<int> labels{0, 0, 1, 1};
    auto losses = model.forward_loss(clips, labels, 0.2);
    EXPECT_TRUE(std::isfinite(losses.total)) << mask;
    model.params().zero_grads();
    model.backward();
  }
}

TEST(Model, FullPipelineGradientMatchesFiniteDifferences) {
  // Probe data is pinned to a fixture whose activations sit away from the
  // max-pool and hinge kinks, where central differences are valid.
  auto cfg = tiny_config();
  cstl::CstlModel<double> model(cfg, 25);
  Rng rng(1025);
  auto clips = random_tensor<double>({4, 6, 1, 16, 12}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 0, 1, 1};

  auto loss = [&] { return model.forward_loss(clips, labels, 0.2).total; };
  auto grad = [&] {
    model.params().zero_grads();
    model.forward_loss(clips, labels, 0.2);
    model.backward();
  };
  auto report = cstl::grad_check(model.params(), loss, grad);
  ASSERT_TRUE(report.ok) << report.message;
  EXPECT_LT(report.max_rel_error, 1e-4)
      << report.worst_param << "[" << report.worst_index << "]";
}
