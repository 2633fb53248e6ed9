#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "plainusr/init.hpp"
#include "plainusr/reparam.hpp"

using namespace plainusr;

namespace {

template <class T>
RepMBConvParams<T> random_block(std::size_t c, Rng& rng, std::size_t k = 3) {
  auto p = RepMBConvParams<T>::zeros(c, 2, k);
  init_repmbconv_random(p, rng);
  return p;
}

// Eq. 1 evaluated literally with the identity branch as its own path and every
// convolution through the naive oracle.
template <class T>
Tensor4<T> block_oracle(const Tensor4<T>& x, const RepMBConvParams<T>& p) {
  const std::size_t c = p.channels(), cm = p.mid_channels();
  const long pad = long(p.kernel_size() / 2);
  auto e = oracle::conv2d(x, p.k1, pad);  // bias response in the border ring
  for (std::size_t n = 0; n < e.shape().n; ++n)
    for (std::size_t m = 0; m < cm; ++m)
      for (std::size_t y = 0; y < e.shape().h; ++y)
        for (std::size_t xx = 0; xx < e.shape().w; ++xx) e(n, m, y, xx) *= p.s[m];
  auto mid = oracle::conv2d(e, p.k2, 0);
  if (p.identity_branch)
    for (std::size_t n = 0; n < mid.shape().n; ++n)
      for (std::size_t m = 0; m < cm; ++m)
        for (std::size_t y = 0; y < mid.shape().h; ++y)
          for (std::size_t xx = 0; xx < mid.shape().w; ++xx) mid(n, m, y, xx) += e(n, m, y + pad, xx + pad);
  std::vector<double> hidden(p.se_w1.rows, 0.0), gate(cm, 0.0);
  for (std::size_t r = 0; r < p.se_w1.rows; ++r) {
    double a = 0;
    for (std::size_t j = 0; j < cm; ++j) a += double(p.se_w1(r, j)) * p.v[j];
    hidden[r] = a > 0 ? a : 0;
  }
  for (std::size_t m = 0; m < cm; ++m) {
    double a = 0;
    for (std::size_t r = 0; r < hidden.size(); ++r) a += double(p.se_w2(m, r)) * hidden[r];
    gate[m] = 1.0 / (1.0 + std::exp(-a));
  }
  for (std::size_t n = 0; n < mid.shape().n; ++n)
    for (std::size_t m = 0; m < cm; ++m)
      for (std::size_t y = 0; y < mid.shape().h; ++y)
        for (std::size_t xx = 0; xx < mid.shape().w; ++xx) mid(n, m, y, xx) *= T(gate[m]);
  auto out = oracle::conv2d(mid, p.k3, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  (void)c;
  return out;
}

}  // namespace

TEST(IdentityKernel, Geometry) {
  auto one = identity_kernel<float>(1, 1);
  ASSERT_EQ(one.shape(), (Shape4{1, 1, 1, 1}));
  EXPECT_EQ(one[0], 1.0f);

  auto k = identity_kernel<double>(2, 3);
  ASSERT_EQ(k.shape(), (Shape4{2, 2, 3, 3}));
  std::size_t ones = 0;
  for (double v : k.data()) ones += v == 1.0;
  EXPECT_EQ(ones, 2u);
  EXPECT_EQ(k(0, 0, 1, 1), 1.0);
  EXPECT_EQ(k(1, 1, 1, 1), 1.0);
  EXPECT_THROW(identity_kernel<float>(2, 2), ShapeError);
}

TEST(SeVector, ZeroSecondLayerGivesHalf) {
  Rng rng(1);
  auto p = random_block<double>(8, rng);
  std::fill(p.se_w2.data.begin(), p.se_w2.data.end(), 0.0);
  for (double g : se_vector(p)) EXPECT_EQ(g, 0.5);
}

TEST(SeVector, ZeroInputGivesHalf) {
  Rng rng(2);
  auto p = random_block<double>(8, rng);
  std::fill(p.v.begin(), p.v.end(), 0.0);
  for (double g : se_vector(p)) EXPECT_EQ(g, 0.5);
}

TEST(SeVector, RandomEntriesInOpenUnitInterval) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto p = random_block<float>(16, rng);
    auto g = se_vector(p);
    ASSERT_EQ(g.size(), 32u);
    for (float v : g) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
}

TEST(SeVector, RejectsShapeMismatch) {
  std::vector<float> v(8, 0.0f);
  EXPECT_THROW(se_vector<float>(v, Matrix<float>(2, 7), Matrix<float>(8, 2)), ShapeError);
  EXPECT_THROW(se_vector<float>(v, Matrix<float>(2, 8), Matrix<float>(8, 3)), ShapeError);
}

TEST(MergePointwiseIntoKxk, IdentityExpansionLeavesKernel) {
  Rng rng(4);
  ConvParams<float> k1(4, 4, 1, 1);
  for (std::size_t i = 0; i < 4; ++i) k1.kernel(i, i, 0, 0) = 1.0f;
  auto k2 = ConvParams<float>::same(4, 4, 3);
  init_conv(k2, rng);
  EXPECT_EQ(merge_pointwise_into_kxk(k1, k2), k2);
}

TEST(MergePointwiseIntoKxk, ScalarAlgebra) {
  ConvParams<float> k1(1, 1, 1, 1);
  k1.kernel[0] = 2.0f;
  auto k2 = ConvParams<float>::same(1, 1, 3);
  std::fill(k2.kernel.data().begin(), k2.kernel.data().end(), 1.0f);
  auto merged = merge_pointwise_into_kxk(k1, k2);
  for (float v : merged.kernel.data()) EXPECT_EQ(v, 2.0f);
}

TEST(MergePointwiseIntoKxk, MatchesSequentialConvs) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    ConvParams<float> k1(6, 3, 1, 1);
    auto k2 = ConvParams<float>::same(5, 6, 3);
    init_conv(k1, rng);
    init_conv(k2, rng);
    auto x = random_tensor<float>(Shape4{1, 3, 8, 8}, rng);
    // k1 runs on the input padded by k2's padding, k2 then runs unpadded.
    auto composed = oracle::conv2d(oracle::conv2d(x, k1, 1), k2, 0);
    auto merged = conv2d(x, merge_pointwise_into_kxk(k1, k2));
    EXPECT_LE(max_abs_diff(composed, merged), 1e-6f);
  }
}

TEST(MergePointwiseIntoKxk, PlainZeroPaddingAgreesWhenExpansionHasNoBias) {
  Rng rng(6);
  ConvParams<float> k1(6, 3, 1, 1);
  auto k2 = ConvParams<float>::same(5, 6, 3);
  init_conv(k1, rng);
  init_conv(k2, rng);
  std::fill(k1.bias.begin(), k1.bias.end(), 0.0f);
  auto x = random_tensor<float>(Shape4{1, 3, 8, 8}, rng);
  EXPECT_LE(max_abs_diff(conv2d(conv2d(x, k1), k2), conv2d(x, merge_pointwise_into_kxk(k1, k2))), 1e-6f);
}

TEST(MergePointwiseIntoKxk, RejectsShapeMismatch) {
  ConvParams<float> k1(6, 3, 1, 1);
  auto k2 = ConvParams<float>::same(5, 4, 3);
  EXPECT_THROW(merge_pointwise_into_kxk(k1, k2), ShapeError);
  EXPECT_THROW(merge_pointwise_into_kxk(ConvParams<float>::same(4, 3, 3), k2), ShapeError);
}

TEST(MergeKxkIntoPointwise, IdentitySqueezeLeavesKernel) {
  Rng rng(7);
  auto k2 = ConvParams<float>::same(4, 4, 3);
  init_conv(k2, rng);
  ConvParams<float> k3(4, 4, 1, 1);
  for (std::size_t i = 0; i < 4; ++i) k3.kernel(i, i, 0, 0) = 1.0f;
  EXPECT_EQ(merge_kxk_into_pointwise(k2, k3), k2);
}

TEST(MergeKxkIntoPointwise, MatchesSequentialConvs) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    auto k2 = ConvParams<float>::same(6, 3, 3);
    ConvParams<float> k3(4, 6, 1, 1);
    init_conv(k2, rng);
    init_conv(k3, rng);
    auto x = random_tensor<float>(Shape4{1, 3, 8, 8}, rng);
    auto composed = oracle::conv2d(oracle::conv2d(x, k2), k3);
    auto merged = conv2d(x, merge_kxk_into_pointwise(k2, k3));
    EXPECT_LE(max_abs_diff(composed, merged), 1e-6f);
  }
}

TEST(MergeKxkIntoPointwise, ZeroSqueezeKeepsOnlyBias) {
  Rng rng(9);
  auto k2 = ConvParams<float>::same(6, 3, 3);
  init_conv(k2, rng);
  ConvParams<float> k3(4, 6, 1, 1);
  k3.bias = {1.0f, -2.0f, 0.5f, 3.0f};
  auto merged = merge_kxk_into_pointwise(k2, k3);
  for (float v : merged.kernel.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(merged.bias, k3.bias);
}

TEST(RepMBConvForward, ZeroInnerWeightsLeaveResidual) {
  Rng rng(10);
  auto p = RepMBConvParams<float>::zeros(4, 2, 3);
  auto x = random_tensor<float>(Shape4{1, 4, 6, 6}, rng);
  EXPECT_EQ(forward_train(x, p), x);
}

TEST(RepMBConvForward, StackedIdentitiesDoubleInput) {
  Rng rng(11);
  const std::size_t c = 3, cm = 6;
  auto p = RepMBConvParams<double>::zeros(c, 2, 3);
  for (std::size_t i = 0; i < c; ++i) {
    p.k1.kernel(i, i, 0, 0) = 1.0;
    p.k3.kernel(i, i, 0, 0) = 1.0;
  }
  // Large pre-activation saturates the SE gate to exactly 1.
  std::fill(p.v.begin(), p.v.end(), 1.0);
  std::fill(p.se_w1.data.begin(), p.se_w1.data.end(), 1.0);
  std::fill(p.se_w2.data.begin(), p.se_w2.data.end(), 100.0);
  for (double g : se_vector(p)) ASSERT_EQ(g, 1.0);
  (void)cm;
  auto x = random_tensor<double>(Shape4{1, c, 5, 7}, rng);
  auto y = forward_train(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], 2.0 * x[i]);
}

TEST(RepMBConvForward, MatchesLiteralOracle) {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    auto p = random_block<double>(4, rng);
    p.identity_branch = t % 2 == 0;
    auto x = random_tensor<double>(Shape4{2, 4, 7, 6}, rng);
    EXPECT_LE(max_abs_diff(forward_train(x, p), block_oracle(x, p)), 1e-12);
  }
}

TEST(RepMBConvForward, RejectsChannelMismatch) {
  auto p = RepMBConvParams<float>::zeros(4, 2, 3);
  Tensor4<float> x(Shape4{1, 3, 4, 4});
  EXPECT_THROW(forward_train(x, p), ShapeError);
}

TEST(Fuse, ZeroInnerWeightsGiveIdentityKernel) {
  auto p = RepMBConvParams<float>::zeros(5, 2, 3);
  p.k3.bias = {1, 2, 3, 4, 5};
  auto f = fuse(p);
  EXPECT_EQ(f.kernel, identity_kernel<float>(5, 3));
  EXPECT_EQ(f.bias, p.k3.bias);
}

TEST(Fuse, FootprintMatchesVanillaConv) {
  auto f = fuse(RepMBConvParams<float>::zeros(64, 2, 3));
  EXPECT_EQ(f.kernel.shape(), (Shape4{64, 64, 3, 3}));
  EXPECT_EQ(f.param_count(), 36928u);
  EXPECT_EQ(f.param_count(), ConvParams<float>::same(64, 64, 3).param_count());
  EXPECT_EQ(f.padding, 1u);
  EXPECT_EQ(f.stride, 1u);
  for (std::size_t c : {8u, 16u, 32u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      auto g = fuse(RepMBConvParams<float>::zeros(c, 2, k));
      EXPECT_EQ(g.param_count(), c * c * k * k + c);
    }
  }
}

TEST(Fuse, EquivalentToTrainingForward) {
  Rng rng(13);
  float worst32 = 0;
  double worst64 = 0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t c = std::size_t{8} << (t % 3);
    const std::size_t k = t % 5 == 4 ? 5 : 3;
    auto p64 = random_block<double>(c, rng, k);
    auto x64 = random_tensor<double>(Shape4{1, c, 9, 10}, rng);
    worst64 = std::max(worst64, max_abs_diff(forward_train(x64, p64), conv2d(x64, fuse(p64))));

    auto p32 = random_block<float>(c, rng, k);
    auto x32 = random_tensor<float>(Shape4{1, c, 9, 10}, rng);
    worst32 = std::max(worst32, max_abs_diff(forward_train(x32, p32), conv2d(x32, fuse(p32))));
  }
  EXPECT_LE(worst32, 1e-4f);
  EXPECT_LE(worst64, 1e-10);
}

TEST(Fuse, IsDeterministic) {
  Rng rng(14);
  auto p = random_block<float>(8, rng);
  EXPECT_EQ(fuse(p), fuse(p));
}

TEST(Fuse, ChannelScalingCommutesWithExpansion) {
  Rng rng(15);
  ConvParams<double> k1(8, 4, 1, 1);
  init_conv(k1, rng);
  std::vector<double> s(8);
  rng.fill_uniform(std::span<double>(s), 0.5, 1.5);
  auto x = random_tensor<double>(Shape4{1, 4, 5, 5}, rng);
  auto folded = conv2d(x, scale_output_channels<double>(k1, s));
  auto after = scale_channels<double>(conv2d(x, k1), s);
  EXPECT_LE(max_abs_diff(folded, after), 1e-14);
}

TEST(Fuse, RejectsInconsistentParams) {
  auto p = RepMBConvParams<float>::zeros(4, 2, 3);
  p.s.pop_back();
  EXPECT_THROW(fuse(p), ShapeError);
  EXPECT_THROW(RepMBConvParams<float>::zeros(4, 2, 2), ShapeError);
}
