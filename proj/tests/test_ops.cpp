#include <gtest/gtest.h>

#include <cmath>

#include "sdefense/ops.hpp"
#include "support.hpp"

using namespace sdefense;
using testing_support::random_tensor;

namespace {

// Six nested loops over (co, y, x, ci, ky, kx) with zero padding.
Tensor naive_conv(const Tensor& in, const Tensor& k, const std::vector<double>& bias, std::size_t pad) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  Tensor out({co, oh, ow});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = bias[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long iy = static_cast<long>(y + dy) - static_cast<long>(pad);
              const long ix = static_cast<long>(x + dx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += in.at(c, iy, ix) * k[((o * ci + c) * kh + dy) * kw + dx];
            }
        out.at(o, y, x) = s;
      }
  return out;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(11);
  const Tensor in = random_tensor({2, 5, 5}, rng);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng);
  const std::vector<double> bias{0.1, -0.2, 0.3};
  for (std::size_t pad : {0u, 1u}) {
    const Tensor got = conv2d(in, k, bias, pad);
    const Tensor want = naive_conv(in, k, bias, pad);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  Rng rng(1);
  const Tensor in = random_tensor({2, 4, 4}, rng);
  const Tensor k = random_tensor({1, 3, 3, 3}, rng);
  EXPECT_THROW(conv2d(in, k, std::vector<double>{0.0}, 1), std::invalid_argument);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor in = random_tensor({2, 4, 4}, rng);
  const Tensor k = random_tensor({2, 2, 3, 3}, rng);
  const std::vector<double> bias{0.05, -0.1};
  const Tensor weight = random_tensor({2, 4, 4}, rng);
  auto objective = [&](const Tensor& x, const std::vector<double>& kv) {
    const Tensor y = conv2d(x, kv, bias, ConvGeometry{2, 2});
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weight[i];
    return s;
  };
  Tensor gin(in.shape());
  std::vector<double> gk(k.size(), 0.0), gb(2, 0.0);
  conv2d_backward(in, k.values(), ConvGeometry{2, 2}, weight, &gin, gk, gb);
  const double h = 1e-6;
  for (std::size_t i = 0; i < in.size(); i += 3) {
    Tensor p = in, m = in;
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR(gin[i], (objective(p, k.vec()) - objective(m, k.vec())) / (2 * h), 1e-6);
  }
  for (std::size_t i = 0; i < k.size(); i += 5) {
    std::vector<double> p = k.vec(), m = k.vec();
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR(gk[i], (objective(in, p) - objective(in, m)) / (2 * h), 1e-6);
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < 16; ++i) wsum += weight[i];
  EXPECT_NEAR(gb[0], wsum, 1e-12);
}

TEST(Relu, ClampsNegativesAndMasksGradient) {
  const Tensor x({4}, {-1.0, 0.0, 2.0, -0.5});
  EXPECT_EQ(relu(x), Tensor({4}, {0.0, 0.0, 2.0, 0.0}));
  EXPECT_EQ(relu_backward(x, Tensor({4}, 1.0)), Tensor({4}, {0.0, 0.0, 1.0, 0.0}));
}

TEST(MaxPool, FirstMaximumWinsAndRoutesGradient) {
  const Tensor x({1, 2, 4}, {1, 3, 5, 5, 3, 2, 5, 1});
  std::vector<std::size_t> arg;
  const Tensor y = maxpool2(x, &arg);
  EXPECT_EQ(y, Tensor({1, 1, 2}, {3, 5}));
  const Tensor g = maxpool2_backward(x.shape(), arg, Tensor({1, 1, 2}, {1.0, 2.0}));
  EXPECT_EQ(g, Tensor({1, 2, 4}, {0, 1, 2, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, RejectsOddSide) { EXPECT_THROW(maxpool2(Tensor({1, 3, 4})), std::invalid_argument); }

TEST(Dense, MatchesManualProduct) {
  const std::vector<double> x{1.0, 2.0}, w{1, 2, 3, 4, 5, 6}, b{0.5, 0.0, -1.0};
  EXPECT_EQ(dense(x, w, b), (std::vector<double>{5.5, 11.0, 16.0}));
}

TEST(Softmax, CrossEntropyIsStableAndGradientSumsToZero) {
  const std::vector<double> z{1000.0, 0.0, -1000.0};
  EXPECT_NEAR(softmax_xent(z, 0), 0.0, 1e-12);
  EXPECT_NEAR(softmax_xent(z, 1), 1000.0, 1e-9);
  const auto g = softmax_xent_grad(std::vector<double>{0.3, -0.2, 0.9}, 2);
  EXPECT_NEAR(g[0] + g[1] + g[2], 0.0, 1e-15);
  EXPECT_LT(g[2], 0.0);
}

TEST(Argmax, LowestIndexOnTies) { EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u); }
