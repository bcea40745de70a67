#include <gtest/gtest.h>

#include "support/gradcheck.hpp"

#include <autopainter/ops.hpp>

#include <random>

using namespace autopainter;
using testsupport::dot;
using testsupport::max_rel_error;
using testsupport::numeric_grad;
using testsupport::uniform_tensor;

namespace {

Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride,
                           int pad) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(0), k = w.dim(2);
  const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, cout, oh, ow});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t yy = 0; yy < oh; ++yy)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto iy = yy * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += w.at(o, c, ky, kx) * x.at(i, c, iy, ix);
              }
          y.at(i, o, yy, xx) = acc;
        }
  return y;
}

Tensor<double> conv_transpose_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                                     int stride, int pad) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(1), k = w.dim(2);
  const auto oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
  Tensor<double> y({n, cout, oh, ow});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < cin; ++c)
      for (std::int64_t yy = 0; yy < h; ++yy)
        for (std::int64_t xx = 0; xx < wd; ++xx)
          for (std::int64_t o = 0; o < cout; ++o)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto oy = yy * stride - pad + ky, ox = xx * stride - pad + kx;
                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                y.at(i, o, oy, ox) += w.at(c, o, ky, kx) * x.at(i, c, yy, xx);
              }
  if (b)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t o = 0; o < cout; ++o)
        for (std::int64_t p = 0; p < oh * ow; ++p) y.data()[(i * cout + o) * oh * ow + p] += (*b)[o];
  return y;
}

double max_abs(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct ConvCase {
  int k, stride, pad, h, w;
};

}  // namespace

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(1);
  for (const ConvCase& c : {ConvCase{4, 2, 1, 8, 8}, ConvCase{3, 1, 1, 7, 5}, ConvCase{4, 1, 1, 6, 6},
                            ConvCase{3, 2, 0, 9, 7}, ConvCase{1, 1, 0, 3, 3}}) {
    const auto x = uniform_tensor({2, 3, c.h, c.w}, -1, 1, rng);
    const auto w = uniform_tensor({4, 3, c.k, c.k}, -1, 1, rng);
    const auto b = uniform_tensor({4}, -1, 1, rng);
    const ops::ConvGeometry g{c.k, c.stride, c.pad};
    EXPECT_LT(max_abs(ops::conv2d(x, w, &b, g), conv_oracle(x, w, &b, c.stride, c.pad)), 1e-12);
    EXPECT_LT(max_abs(ops::conv2d(x, w, nullptr, g), conv_oracle(x, w, nullptr, c.stride, c.pad)), 1e-12);
  }
}

TEST(ConvTranspose2d, MatchesScatterLoopAndIsAdjoint) {
  std::mt19937_64 rng(2);
  const ops::ConvGeometry g{4, 2, 1};
  const auto x = uniform_tensor({2, 5, 4, 3}, -1, 1, rng);
  const auto w = uniform_tensor({5, 2, 4, 4}, -1, 1, rng);
  const auto b = uniform_tensor({2}, -1, 1, rng);
  const auto y = ops::conv_transpose2d(x, w, &b, g);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 8, 6}));
  EXPECT_LT(max_abs(y, conv_transpose_oracle(x, w, &b, 2, 1)), 1e-12);

  // <conv(u; W), v> == <u, convT(v; W)>
  const auto u = uniform_tensor({2, 2, 8, 6}, -1, 1, rng);
  const auto v = uniform_tensor({2, 5, 4, 3}, -1, 1, rng);
  EXPECT_NEAR(dot(ops::conv2d(u, w, nullptr, g), v), dot(u, ops::conv_transpose2d(v, w, nullptr, g)), 1e-10);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const ConvCase& c : {ConvCase{4, 2, 1, 6, 6}, ConvCase{4, 1, 1, 5, 5}, ConvCase{3, 1, 0, 5, 4}}) {
    const ops::ConvGeometry g{c.k, c.stride, c.pad};
    const auto x = uniform_tensor({2, 2, c.h, c.w}, -1, 1, rng);
    const auto w = uniform_tensor({3, 2, c.k, c.k}, -1, 1, rng);
    const auto b = uniform_tensor({3}, -1, 1, rng);
    const auto r = uniform_tensor(ops::conv2d(x, w, &b, g).shape(), -1, 1, rng);
    const auto grads = ops::conv2d_backward(x, w, true, r, g);
    EXPECT_LT(max_rel_error(grads.input, numeric_grad([&](const Tensor<double>& p) { return dot(ops::conv2d(p, w, &b, g), r); }, x)), 1e-6);
    EXPECT_LT(max_rel_error(grads.weight, numeric_grad([&](const Tensor<double>& p) { return dot(ops::conv2d(x, p, &b, g), r); }, w)), 1e-6);
    EXPECT_LT(max_rel_error(grads.bias, numeric_grad([&](const Tensor<double>& p) { return dot(ops::conv2d(x, w, &p, g), r); }, b)), 1e-6);
    const auto weights_only = ops::conv2d_backward(x, w, true, r, g, false, true);
    EXPECT_TRUE(weights_only.input.empty());
    EXPECT_EQ(weights_only.weight, grads.weight);
    const auto input_only = ops::conv2d_backward(x, w, true, r, g, true, false);
    EXPECT_TRUE(input_only.weight.empty());
    EXPECT_EQ(input_only.input, grads.input);
  }
}

TEST(ConvTranspose2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  const ops::ConvGeometry g{4, 2, 1};
  const auto x = uniform_tensor({2, 3, 3, 3}, -1, 1, rng);
  const auto w = uniform_tensor({3, 2, 4, 4}, -1, 1, rng);
  const auto b = uniform_tensor({2}, -1, 1, rng);
  const auto r = uniform_tensor({2, 2, 6, 6}, -1, 1, rng);
  const auto grads = ops::conv_transpose2d_backward(x, w, true, r, g);
  auto f = [&](const Tensor<double>& xx, const Tensor<double>& ww, const Tensor<double>& bb) {
    return dot(ops::conv_transpose2d(xx, ww, &bb, g), r);
  };
  EXPECT_LT(max_rel_error(grads.input, numeric_grad([&](const Tensor<double>& p) { return f(p, w, b); }, x)), 1e-6);
  EXPECT_LT(max_rel_error(grads.weight, numeric_grad([&](const Tensor<double>& p) { return f(x, p, b); }, w)), 1e-6);
  EXPECT_LT(max_rel_error(grads.bias, numeric_grad([&](const Tensor<double>& p) { return f(x, w, p); }, b)), 1e-6);
}

TEST(InstanceNorm, NormalisesAndGradientsMatch) {
  std::mt19937_64 rng(5);
  const auto x = uniform_tensor({2, 3, 4, 5}, -2, 3, rng);
  const auto gamma = uniform_tensor({3}, 0.5, 1.5, rng);
  const auto beta = uniform_tensor({3}, -0.5, 0.5, rng);
  Tensor<double> ones({3}), zeros({3});
  ones.fill(1.0);
  const auto y = ops::instance_norm(x, ones, zeros, static_cast<ops::InstanceNormCache<double>*>(nullptr));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int i = 0; i < 20; ++i) mean += y.data()[(n * 3 + c) * 20 + i];
      mean /= 20;
      for (int i = 0; i < 20; ++i) var += std::pow(y.data()[(n * 3 + c) * 20 + i] - mean, 2);
      EXPECT_NEAR(mean, 0, 1e-12);
      EXPECT_NEAR(var / 20, 1, 1e-4);
    }

  const auto r = uniform_tensor(x.shape(), -1, 1, rng);
  ops::InstanceNormCache<double> cache;
  ops::instance_norm(x, gamma, beta, &cache);
  const auto grads = ops::instance_norm_backward(cache, gamma, r);
  auto f = [&](const Tensor<double>& xx, const Tensor<double>& gg, const Tensor<double>& bb) {
    return dot(ops::instance_norm(xx, gg, bb, static_cast<ops::InstanceNormCache<double>*>(nullptr)), r);
  };
  EXPECT_LT(max_rel_error(grads.input, numeric_grad([&](const Tensor<double>& p) { return f(p, gamma, beta); }, x), 1e-5), 1e-5);
  EXPECT_LT(max_rel_error(grads.gamma, numeric_grad([&](const Tensor<double>& p) { return f(x, p, beta); }, gamma)), 1e-6);
  EXPECT_LT(max_rel_error(grads.beta, numeric_grad([&](const Tensor<double>& p) { return f(x, gamma, p); }, beta)), 1e-6);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto x = uniform_tensor({1, 2, 3, 3}, -2, 2, rng);
  for (auto& v : x.storage())
    if (std::abs(v) < 0.01) v = 0.5;  // keep away from the kink
  const auto r = uniform_tensor(x.shape(), -1, 1, rng);
  EXPECT_LT(max_rel_error(ops::leaky_relu_backward(x, r, 0.2),
                          numeric_grad([&](const Tensor<double>& p) { return dot(ops::leaky_relu(p, 0.2), r); }, x)),
            1e-6);
  EXPECT_LT(max_rel_error(ops::relu_backward(x, r),
                          numeric_grad([&](const Tensor<double>& p) { return dot(ops::relu(p), r); }, x)),
            1e-6);
  EXPECT_LT(max_rel_error(ops::tanh_backward(ops::tanh(x), r),
                          numeric_grad([&](const Tensor<double>& p) { return dot(ops::tanh(p), r); }, x)),
            1e-6);
  const auto s = ops::sigmoid(x);
  for (double v : s.storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(MaxPool, ForwardAndBackward) {
  std::mt19937_64 rng(7);
  const auto x = uniform_tensor({2, 2, 4, 6}, -1, 1, rng);
  std::vector<std::size_t> arg;
  const auto y = ops::max_pool2(x, &arg);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 2, 3}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
          double m = -1e9;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) m = std::max(m, x.at(n, c, 2 * i + a, 2 * j + b));
          EXPECT_EQ(y.at(n, c, i, j), m);
        }
  const auto r = uniform_tensor(y.shape(), -1, 1, rng);
  EXPECT_LT(max_rel_error(ops::max_pool2_backward(x.shape(), arg, r),
                          numeric_grad([&](const Tensor<double>& p) {
                            return dot(ops::max_pool2(p, static_cast<std::vector<std::size_t>*>(nullptr)), r);
                          }, x, 1e-6)),
            1e-6);
}

TEST(Channels, ConcatSplitRoundTrip) {
  std::mt19937_64 rng(8);
  const auto a = uniform_tensor({2, 3, 2, 2}, -1, 1, rng);
  const auto b = uniform_tensor({2, 1, 2, 2}, -1, 1, rng);
  const auto c = ops::concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_EQ(c.at(1, 3, 1, 0), b.at(1, 0, 1, 0));
  auto [a2, b2] = ops::split_channels(c, 3);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
}
