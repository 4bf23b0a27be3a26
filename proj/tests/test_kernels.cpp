#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cstl/grad_check.hpp"
#include "cstl/kernels.hpp"
#include "cstl/param_set.hpp"
#include "cstl/rng.hpp"
#include "cstl/tensor.hpp"
#include "test_util.hpp"

using cstl::Act;
using cstl::ParamSet;
using cstl::Rng;
using cstl::Tensor;
using cstl::testutil::max_abs_diff;
using cstl::testutil::random_tensor;
using cstl::testutil::weighted_sum;

namespace {

// Nested-loop reference convolution, independent of the im2col path.
Tensor<double> conv2d_reference(const Tensor<double>& x,
                                const Tensor<double>& w,
                                const Tensor<double>& b, int pad, int stride) {
  const int batch = x.extent(0), cin = x.extent(1), h = x.extent(2),
            wd = x.extent(3);
  const int cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> y({batch, cout, ho, wo});
  for (int bi = 0; bi < batch; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double s = b.empty() ? 0.0 : b(co);
          for (int ci = 0; ci < cin; ++ci)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int si = i * stride + ki - pad;
                const int sj = j * stride + kj - pad;
                if (si >= 0 && si < h && sj >= 0 && sj < wd) {
                  s += x(bi, ci, si, sj) * w(co, ci, ki, kj);
                }
              }
          y(bi, co, i, j) = s;
        }
  return y;
}

}  // namespace

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  Rng rng(1);
  Tensor<double> x({1, 1, 3, 3});
  auto w = random_tensor<double>({2, 1, 3, 3}, rng);
  Tensor<double> b({2});
  auto y = cstl::conv2d(x, w, b, 1, 1);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(2);
  auto x = random_tensor<double>({2, 3, 5, 4}, rng);
  Tensor<double> w({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w(c, c, 1, 1) = 1.0;
  Tensor<double> b({3});
  auto y = cstl::conv2d(x, w, b, 1, 1);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, ConstantInputAllOnesKernelInterior) {
  const double c = 0.37;
  auto x = Tensor<double>::full({1, 1, 6, 6}, c);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> b({1});
  auto y = cstl::conv2d(x, w, b, 1, 1);
  // Interior positions see the full 3x3 window.
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j) EXPECT_NEAR(y(0, 0, i, j), 9 * c, 1e-12);
  EXPECT_NEAR(y(0, 0, 0, 0), 4 * c, 1e-12);
}

TEST(Conv2d, MatchesReferenceOnRandomShapes) {
  Rng rng(3);
  for (int caseno = 0; caseno < 4; ++caseno) {
    const int batch = 1 + static_cast<int>(rng.next_index(2));
    const int cin = 1 + static_cast<int>(rng.next_index(3));
    const int cout = 1 + static_cast<int>(rng.next_index(3));
    const int h = 5 + static_cast<int>(rng.next_index(4));
    const int wd = 5 + static_cast<int>(rng.next_index(4));
    auto x = random_tensor<double>({batch, cin, h, wd}, rng);
    auto w = random_tensor<double>({cout, cin, 3, 3}, rng);
    auto b = random_tensor<double>({cout}, rng);
    const int stride = 1 + caseno % 2;
    auto y = cstl::conv2d(x, w, b, 1, stride);
    auto ref = conv2d_reference(x, w, b, 1, stride);
    EXPECT_LT(max_abs_diff(y, ref), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor<double> x({1, 2, 4, 4});
  Tensor<double> w({1, 3, 3, 3});
  Tensor<double> b({1});
  EXPECT_THROW(cstl::conv2d(x, w, b, 1, 1), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({2, 2, 5, 4}, rng));
  ps.add("w", random_tensor<double>({3, 2, 3, 3}, rng));
  ps.add("b", random_tensor<double>({3}, rng));
  auto probe = random_tensor<double>({2, 3, 5, 4}, rng);

  auto loss = [&] {
    auto y = cstl::conv2d(ps.value("x"), ps.value("w"), ps.value("b"), 1, 1);
    return weighted_sum(y, probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    cstl::conv2d_backward(ps.value("x"), ps.value("w"), 1, 1, probe,
                          &ps.grad("x"), &ps.grad("w"), &ps.grad("b"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok) << report.message;
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;
}

TEST(MaxPool2d, ConstantInput) {
  auto x = Tensor<double>::full({1, 2, 4, 4}, 0.5);
  auto y = cstl::max_pool2d(x, 2, 2);
  ASSERT_EQ(y.shape(), (std::vector<int>{1, 2, 2, 2}));
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], 0.5);
}

TEST(MaxPool2d, BlockMax) {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = cstl::max_pool2d(x, 2, 2);
  EXPECT_EQ(y(0, 0, 0, 0), 4.0);
}

TEST(MaxPool2d, MatchesBruteForceBlocks) {
  Rng rng(5);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng);
  auto y = cstl::max_pool2d(x, 2, 2);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double m = -1e30;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj)
              m = std::max(m, x(b, c, 2 * i + di, 2 * j + dj));
          EXPECT_EQ(y(b, c, i, j), m);
        }
}

TEST(MaxPool2d, RejectsOddExtent) {
  Tensor<double> x({1, 1, 3, 4});
  EXPECT_THROW(cstl::max_pool2d(x, 2, 2), std::invalid_argument);
}

TEST(MaxPool2d, BackwardConservesGradientMass) {
  Rng rng(6);
  auto x = random_tensor<double>({2, 2, 6, 4}, rng);
  auto dy = random_tensor<double>({2, 2, 3, 2}, rng);
  Tensor<double> dx({2, 2, 6, 4});
  cstl::max_pool2d_backward(x, dy, dx);
  double in_mass = 0.0, out_mass = 0.0;
  for (std::int64_t i = 0; i < dx.numel(); ++i) in_mass += dx.data()[i];
  for (std::int64_t i = 0; i < dy.numel(); ++i) out_mass += dy.data()[i];
  EXPECT_NEAR(in_mass, out_mass, 1e-12);
}

TEST(MaxPool2d, TieBreaksToFirstIndex) {
  auto x = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto dy = Tensor<double>::full({1, 1, 1, 1}, 2.0);
  Tensor<double> dx({1, 1, 2, 2});
  cstl::max_pool2d_backward(x, dy, dx);
  EXPECT_EQ(dx(0, 0, 0, 0), 2.0);
  EXPECT_EQ(dx(0, 0, 0, 1), 0.0);
  EXPECT_EQ(dx(0, 0, 1, 0), 0.0);
  EXPECT_EQ(dx(0, 0, 1, 1), 0.0);
}

TEST(Conv1dTemporal, SingleFrameUsesCenterTapOnly) {
  Rng rng(7);
  auto x = random_tensor<double>({1, 2, 3, 1}, rng);
  auto w = random_tensor<double>({3, 3, 3}, rng);
  Tensor<double> b({3});
  auto y = cstl::conv1d_temporal(x, w, b);
  for (int k = 0; k < 2; ++k)
    for (int co = 0; co < 3; ++co) {
      double s = 0.0;
      for (int ci = 0; ci < 3; ++ci) s += w(co, ci, 1) * x(0, k, ci, 0);
      EXPECT_NEAR(y(0, k, co, 0), s, 1e-12);
    }
}

TEST(Conv1dTemporal, AveragingKernelOnConstantInput) {
  const double c = 0.9;
  auto x = Tensor<double>::full({1, 1, 1, 5}, c);
  auto w = Tensor<double>::full({1, 1, 3}, 1.0 / 3.0);
  Tensor<double> b({1});
  auto y = cstl::conv1d_temporal(x, w, b);
  EXPECT_NEAR(y(0, 0, 0, 0), 2 * c / 3, 1e-12);
  for (int t = 1; t < 4; ++t) EXPECT_NEAR(y(0, 0, 0, t), c, 1e-12);
  EXPECT_NEAR(y(0, 0, 0, 4), 2 * c / 3, 1e-12);
}

TEST(Conv1dTemporal, IdentityCenterTap) {
  Rng rng(8);
  auto x = random_tensor<double>({2, 3, 4, 6}, rng);
  Tensor<double> w({4, 4, 3});
  for (int c = 0; c < 4; ++c) w(c, c, 1) = 1.0;
  Tensor<double> b({4});
  auto y = cstl::conv1d_temporal(x, w, b);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv1dTemporal, MatchesHandConvolution) {
  Rng rng(9);
  auto x = random_tensor<double>({2, 2, 3, 7}, rng);
  auto w = random_tensor<double>({4, 3, 3}, rng);
  auto b = random_tensor<double>({4}, rng);
  auto y = cstl::conv1d_temporal(x, w, b);
  for (int bi = 0; bi < 2; ++bi)
    for (int k = 0; k < 2; ++k)
      for (int co = 0; co < 4; ++co)
        for (int t = 0; t < 7; ++t) {
          double s = b(co);
          for (int ci = 0; ci < 3; ++ci)
            for (int tap = 0; tap < 3; ++tap) {
              const int src = t + tap - 1;
              if (src >= 0 && src < 7) s += w(co, ci, tap) * x(bi, k, ci, src);
            }
          EXPECT_NEAR(y(bi, k, co, t), s, 1e-12);
        }
}

TEST(Conv1dTemporal, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({1, 2, 3, 5}, rng));
  ps.add("w", random_tensor<double>({2, 3, 3}, rng));
  ps.add("b", random_tensor<double>({2}, rng));
  auto probe = random_tensor<double>({1, 2, 2, 5}, rng);
  auto loss = [&] {
    return weighted_sum(
        cstl::conv1d_temporal(ps.value("x"), ps.value("w"), ps.value("b")),
        probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    cstl::conv1d_temporal_backward(ps.value("x"), ps.value("w"), probe,
                                   &ps.grad("x"), &ps.grad("w"),
                                   &ps.grad("b"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;
}

TEST(DwConv1d, IdentityTaps) {
  Rng rng(11);
  auto x = random_tensor<double>({2, 2, 3, 5}, rng);
  Tensor<double> w({3, 3});
  for (int c = 0; c < 3; ++c) w(c, 1) = 1.0;
  auto y = cstl::dwconv1d_temporal(x, w);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(DwConv1d, ChannelIsolation) {
  Rng rng(12);
  auto x = random_tensor<double>({1, 1, 3, 5}, rng);
  auto w = random_tensor<double>({3, 3}, rng);
  auto y_full = cstl::dwconv1d_temporal(x, w);
  w(0, 0) = w(0, 1) = w(0, 2) = 0.0;
  auto y = cstl::dwconv1d_temporal(x, w);
  for (int t = 0; t < 5; ++t) {
    EXPECT_EQ(y(0, 0, 0, t), 0.0);
    EXPECT_EQ(y(0, 0, 1, t), y_full(0, 0, 1, t));
    EXPECT_EQ(y(0, 0, 2, t), y_full(0, 0, 2, t));
  }
}

TEST(DwConv1d, MatchesPerChannelLoop) {
  Rng rng(13);
  auto x = random_tensor<double>({2, 3, 4, 6}, rng);
  auto w = random_tensor<double>({4, 3}, rng);
  auto y = cstl::dwconv1d_temporal(x, w);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 4; ++c)
        for (int t = 0; t < 6; ++t) {
          double s = 0.0;
          for (int tap = 0; tap < 3; ++tap) {
            const int src = t + tap - 1;
            if (src >= 0 && src < 6) s += w(c, tap) * x(b, k, c, src);
          }
          EXPECT_NEAR(y(b, k, c, t), s, 1e-12);
        }
}

TEST(DwConv1d, RejectsChannelMismatch) {
  Tensor<double> x({1, 1, 3, 5});
  Tensor<double> w({4, 3});
  EXPECT_THROW(cstl::dwconv1d_temporal(x, w), std::invalid_argument);
}

TEST(DwConv1d, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({1, 2, 3, 5}, rng));
  ps.add("w", random_tensor<double>({3, 3}, rng));
  auto probe = random_tensor<double>({1, 2, 3, 5}, rng);
  auto loss = [&] {
    return weighted_sum(cstl::dwconv1d_temporal(ps.value("x"), ps.value("w")),
                        probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    cstl::dwconv1d_temporal_backward(ps.value("x"), ps.value("w"), probe,
                                     &ps.grad("x"), &ps.grad("w"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;
}

TEST(Linear, IdentityWeight) {
  Rng rng(15);
  auto x = random_tensor<double>({2, 3, 4}, rng);
  Tensor<double> w({4, 4});
  for (int i = 0; i < 4; ++i) w(i, i) = 1.0;
  Tensor<double> b({4});
  auto y = cstl::linear(x, w, b);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Linear, BasisVectorSelectsRow) {
  Rng rng(16);
  auto w = random_tensor<double>({3, 5}, rng);
  auto b = random_tensor<double>({5}, rng);
  Tensor<double> x({1, 3});
  x(0, 1) = 1.0;
  auto y = cstl::linear(x, w, b);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(y(0, j), w(1, j) + b(j), 1e-12);
}

TEST(Linear, MatchesTripleLoopMatmul) {
  Rng rng(17);
  auto x = random_tensor<double>({4, 3}, rng);
  auto w = random_tensor<double>({3, 2}, rng);
  auto b = random_tensor<double>({2}, rng);
  auto y = cstl::linear(x, w, b);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = b(j);
      for (int k = 0; k < 3; ++k) s += x(i, k) * w(k, j);
      EXPECT_NEAR(y(i, j), s, 1e-12);
    }
}

TEST(Linear, RejectsInnerDimensionMismatch) {
  Tensor<double> x({2, 3});
  Tensor<double> w({4, 2});
  Tensor<double> b({2});
  EXPECT_THROW(cstl::linear(x, w, b), std::invalid_argument);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  Rng rng(18);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({3, 2, 4}, rng));
  ps.add("w", random_tensor<double>({4, 3}, rng));
  ps.add("b", random_tensor<double>({3}, rng));
  auto probe = random_tensor<double>({3, 2, 3}, rng);
  auto loss = [&] {
    return weighted_sum(cstl::linear(ps.value("x"), ps.value("w"), ps.value("b")),
                        probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    cstl::linear_backward(ps.value("x"), ps.value("w"), probe, &ps.grad("x"),
                          &ps.grad("w"), &ps.grad("b"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;
}

TEST(Softmax, UniformInput) {
  auto x = Tensor<double>::full({5}, 1.3);
  auto y = cstl::softmax(x, 0);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(y(i), 0.2, 1e-12);
}

TEST(Softmax, ExtremeLogitsStayStable) {
  Tensor<double> x({2}, {1000.0, 0.0});
  auto y = cstl::softmax(x, 0);
  EXPECT_NEAR(y(0), 1.0, 1e-9);
  EXPECT_NEAR(y(1), 0.0, 1e-9);
  EXPECT_TRUE(std::isfinite(y(0)));
}

TEST(Softmax, MatchesNaiveOracle) {
  Rng rng(19);
  auto x = random_tensor<double>({5}, rng, -3.0, 3.0);
  auto y = cstl::softmax(x, 0);
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) sum += std::exp(x(i));
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(y(i), std::exp(x(i)) / sum, 1e-9);
}

TEST(Softmax, RowsSumToOneOnEveryAxis) {
  Rng rng(20);
  auto x = random_tensor<double>({2, 3, 4}, rng, -1e4, 1e4);
  for (int axis = 0; axis < 3; ++axis) {
    auto y = cstl::softmax(x, axis);
    // Sum along the chosen axis must be 1 everywhere.
    const int extent = x.extent(axis);
    std::int64_t inner = 1;
    for (int a = axis + 1; a < 3; ++a) inner *= x.extent(a);
    const std::int64_t outer = x.numel() / (extent * inner);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        double s = 0.0;
        for (int e = 0; e < extent; ++e) {
          s += y.data()[(o * extent + e) * inner + i];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({3, 4}, rng));
  auto probe = random_tensor<double>({3, 4}, rng);
  auto loss = [&] { return weighted_sum(cstl::softmax(ps.value("x"), 1), probe); };
  auto grad = [&] {
    ps.zero_grads();
    auto y = cstl::softmax(ps.value("x"), 1);
    cstl::softmax_backward(y, probe, 1, ps.grad("x"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(LayerNorm, ConstantVectorGoesToZero) {
  auto x = Tensor<double>::full({2, 6}, 3.0);
  auto gamma = Tensor<double>::full({6}, 1.0);
  Tensor<double> beta({6});
  auto y = cstl::layer_norm(x, gamma, beta, 1e-5);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], 0.0, 1e-12);
}

TEST(LayerNorm, AlreadyStandardizedPair) {
  Tensor<double> x({1, 2}, {-1.0, 1.0});
  auto gamma = Tensor<double>::full({2}, 1.0);
  Tensor<double> beta({2});
  auto y = cstl::layer_norm(x, gamma, beta, 1e-5);
  EXPECT_NEAR(y(0, 0), -1.0, 1e-4);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-4);
}

TEST(LayerNorm, MatchesExplicitFormula) {
  Rng rng(22);
  auto x = random_tensor<double>({3, 7}, rng);
  auto gamma = random_tensor<double>({7}, rng);
  auto beta = random_tensor<double>({7}, rng);
  const double eps = 1e-5;
  auto y = cstl::layer_norm(x, gamma, beta, eps);
  for (int r = 0; r < 3; ++r) {
    double mu = 0.0;
    for (int j = 0; j < 7; ++j) mu += x(r, j);
    mu /= 7;
    double var = 0.0;
    for (int j = 0; j < 7; ++j) var += (x(r, j) - mu) * (x(r, j) - mu);
    var /= 7;
    for (int j = 0; j < 7; ++j) {
      const double expect =
          gamma(j) * (x(r, j) - mu) / std::sqrt(var + eps) + beta(j);
      EXPECT_NEAR(y(r, j), expect, 1e-9);
    }
  }
}

TEST(LayerNorm, NormalizesMeanAndVariance) {
  Rng rng(23);
  auto x = random_tensor<double>({4, 16}, rng, -5.0, 5.0);
  auto gamma = Tensor<double>::full({16}, 1.0);
  Tensor<double> beta({16});
  auto y = cstl::layer_norm(x, gamma, beta, 1e-5);
  for (int r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (int j = 0; j < 16; ++j) mu += y(r, j);
    mu /= 16;
    for (int j = 0; j < 16; ++j) var += (y(r, j) - mu) * (y(r, j) - mu);
    var /= 16;
    EXPECT_LE(std::abs(mu), 1e-6);
    EXPECT_LE(std::abs(var - 1.0), 1e-4);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(24);
  ParamSet<double> ps;
  ps.add("x", random_tensor<double>({3, 5}, rng));
  ps.add("gamma", random_tensor<double>({5}, rng, 0.5, 1.5));
  ps.add("beta", random_tensor<double>({5}, rng));
  auto probe = random_tensor<double>({3, 5}, rng);
  auto loss = [&] {
    return weighted_sum(cstl::layer_norm(ps.value("x"), ps.value("gamma"),
                                         ps.value("beta"), 1e-5),
                        probe);
  };
  auto grad = [&] {
    ps.zero_grads();
    cstl::LayerNormCache<double> cache;
    cstl::layer_norm(ps.value("x"), ps.value("gamma"), ps.value("beta"), 1e-5,
                     &cache);
    cstl::layer_norm_backward(ps.value("x"), ps.value("gamma"), cache, probe,
                              &ps.grad("x"), &ps.grad("gamma"),
                              &ps.grad("beta"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param;
}

TEST(Activation, LeakySlopeAndSigmoidMidpoint) {
  Tensor<double> x({3}, {-1.0, 0.0, 2.0});
  auto leaky = cstl::activation(x, Act::kLeakyRelu);
  EXPECT_DOUBLE_EQ(leaky(0), -0.01);
  EXPECT_DOUBLE_EQ(leaky(1), 0.0);
  EXPECT_DOUBLE_EQ(leaky(2), 2.0);
  auto sig = cstl::activation(Tensor<double>({1}, {0.0}), Act::kSigmoid);
  EXPECT_DOUBLE_EQ(sig(0), 0.5);
}

TEST(Activation, ReluMatchesMaxOracle) {
  Rng rng(25);
  auto x = random_tensor<double>({17}, rng);
  auto y = cstl::activation(x, Act::kRelu);
  for (int i = 0; i < 17; ++i) EXPECT_EQ(y(i), std::max(0.0, x(i)));
}

TEST(Activation, SigmoidRangeAndMonotonicity) {
  Rng rng(26);
  auto x = random_tensor<double>({64}, rng, -20.0, 20.0);
  auto y = cstl::activation(x, Act::kSigmoid);
  for (int i = 0; i < 64; ++i) {
    EXPECT_GT(y(i), 0.0);
    EXPECT_LT(y(i), 1.0);
  }
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  Rng rng(27);
  for (Act kind : {Act::kLeakyRelu, Act::kRelu, Act::kSigmoid}) {
    ParamSet<double> ps;
    // Keep values away from the kink so central differences are valid.
    auto x = random_tensor<double>({24}, rng);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.01;
    }
    ps.add("x", x);
    auto probe = random_tensor<double>({24}, rng);
    auto loss = [&] {
      return weighted_sum(cstl::activation(ps.value("x"), kind), probe);
    };
    auto grad = [&] {
      ps.zero_grads();
      auto y = cstl::activation(ps.value("x"), kind);
      cstl::activation_backward(ps.value("x"), y, probe, kind, ps.grad("x"));
    };
    auto report = cstl::grad_check(ps, loss, grad);
    ASSERT_TRUE(report.ok);
    EXPECT_LT(report.max_rel_error, 1e-5);
  }
}

TEST(GradCheck, FrozenParameterReportsExactZero) {
  Rng rng(28);
  ParamSet<double> ps;
  ps.add("w", random_tensor<double>({3}, rng));
  ps.add("frozen", random_tensor<double>({3}, rng), /*trainable=*/false);
  auto loss = [&] {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      s += ps.value("w")(i) * ps.value("w")(i) + ps.value("frozen")(i);
    }
    return s;
  };
  auto grad = [&] {
    ps.zero_grads();
    for (int i = 0; i < 3; ++i) ps.grad("w")(i) = 2.0 * ps.value("w")(i);
    // frozen's grad stays zero and is never probed
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LT(report.max_rel_error, 1e-9);
  EXPECT_NE(report.worst_param, "frozen");
}

TEST(GradCheck, LinearLeastSquaresTight) {
  Rng rng(29);
  ParamSet<double> ps;
  ps.add("w", random_tensor<double>({4, 3}, rng));
  ps.add("b", random_tensor<double>({3}, rng));
  auto x = random_tensor<double>({6, 4}, rng);
  auto target = random_tensor<double>({6, 3}, rng);

  auto forward = [&] { return cstl::linear(x, ps.value("w"), ps.value("b")); };
  auto loss = [&] {
    auto y = forward();
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      const double d = y.data()[i] - target.data()[i];
      s += 0.5 * d * d;
    }
    return s;
  };
  auto grad = [&] {
    ps.zero_grads();
    auto y = forward();
    Tensor<double> dy(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      dy.data()[i] = y.data()[i] - target.data()[i];
    }
    cstl::linear_backward(x, ps.value("w"), dy, nullptr, &ps.grad("w"),
                          &ps.grad("b"));
  };
  auto report = cstl::grad_check(ps, loss, grad);
  ASSERT_TRUE(report.ok);
  EXPECT_LE(report.max_rel_error, 1e-7);
}

TEST(Kernels, ForwardIsDeterministic) {
  Rng rng(30);
  auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  auto w = random_tensor<float>({4, 3, 3, 3}, rng);
  auto b = random_tensor<float>({4}, rng);
  auto y1 = cstl::conv2d(x, w, b, 1, 1);
  auto y2 = cstl::conv2d(x, w, b, 1, 1);
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    EXPECT_EQ(y1.data()[i], y2.data()[i]);
  }
}
