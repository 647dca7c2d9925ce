#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bifseg/kernels.hpp"
#include "oracles.hpp"

using namespace bifseg;

namespace {

Tensor<float> iota(Shape s, float start = 1.0f) {
  Tensor<float> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + static_cast<float>(i);
  return t;
}

void expect_matches_oracle(const Tensor<float>& got, const Tensor<double>& want, double tol) {
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "element " << i;
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor<float> t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_THROW(Tensor<float>(Shape{1, 0, 2, 2}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(t.reshaped(Shape{1, 1, 1, 7}), ShapeError);
  EXPECT_EQ(t.index(1, 2, 3, 4), t.size() - 1);
}

TEST(Conv2d, OneByOneScalar) {
  const Tensor<float> x(Shape{1, 1, 1, 1}, 2.0f), w(Shape{1, 1, 1, 1}, 3.0f);
  const auto y = conv2d(x, w, std::vector<float>{1.0f}, ConvSpec::square(1));
  EXPECT_EQ(y.item(), 7.0f);
}

TEST(Conv2d, SamePaddingCenterSum) {
  const auto x = iota(Shape{1, 1, 3, 3});
  const Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
  const auto y = conv2d(x, w, std::vector<float>{0.0f}, ConvSpec::square(3));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y.at(0, 0, 1, 1), 45.0f);
  expect_matches_oracle(y, oracle::conv2d(x, w, {0.0f}, 1, 1), 0.0);
}

TEST(Conv2d, DilationTwoOnOnes) {
  const Tensor<float> x(Shape{1, 1, 5, 5}, 1.0f), w(Shape{1, 1, 3, 3}, 1.0f);
  const auto y = conv2d(x, w, std::vector<float>{0.0f}, ConvSpec::square(3, 2));
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.at(0, 0, 2, 2), 9.0f);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0f);
  expect_matches_oracle(y, oracle::conv2d(x, w, {0.0f}, 1, 2), 0.0);
}

TEST(Conv2d, Errors) {
  const Tensor<float> x(Shape{1, 2, 5, 5});
  EXPECT_THROW(conv2d(x, Tensor<float>(Shape{1, 3, 3, 3}), std::vector<float>{}, ConvSpec::square(3)), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<float>(Shape{1, 2, 2, 2}), std::vector<float>{}, ConvSpec{2, 2, 1, 1}), SpecError);
  EXPECT_THROW(conv2d(x, Tensor<float>(Shape{1, 2, 3, 3}), std::vector<float>{}, ConvSpec{3, 3, 0, 1}), SpecError);
  EXPECT_THROW(conv2d(x, Tensor<float>(Shape{1, 2, 3, 3}), std::vector<float>{}, ConvSpec{3, 3, 1, 0}), SpecError);
}

// Both the direct path (few output channels) and the im2col path (many),
// with strides and dilations, against the nested-loop oracle.
TEST(Conv2d, MatchesNestedLoopOracle) {
  std::uint32_t seed = 10;
  for (std::size_t cout : {2u, 12u}) {
    for (std::size_t k : {1u, 3u, 5u, 9u}) {
      for (std::size_t d : {1u, 2u, 3u}) {
        for (std::size_t s : {1u, 2u}) {
          const auto x = oracle::random_tensor(Shape{2, 3, 11, 13}, ++seed);
          const auto w = oracle::random_tensor(Shape{cout, 3, k, k}, ++seed);
          const auto b = oracle::random_tensor(Shape{1, 1, 1, cout}, ++seed);
          const std::vector<float> bias(b.data().begin(), b.data().end());
          const ConvSpec spec = ConvSpec::square(k, d, s);
          const auto want = oracle::conv2d(x, w, bias, s, d);
          const auto got = conv2d(x, w, bias, spec);
          SCOPED_TRACE(testing::Message() << "cout " << cout << " k " << k << " d " << d << " s " << s);
          expect_matches_oracle(got, want, 1e-5);
        }
      }
    }
  }
}

TEST(Conv2d, StrideOnePreservesSize) {
  std::mt19937 gen(3);
  const std::size_t ks[] = {1, 3, 5, 9};
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = ks[gen() % 4], d = 1 + gen() % 3, h = 1 + gen() % 20, w = 1 + gen() % 20;
    const Tensor<float> x(Shape{1, 2, h, w}, 1.0f);
    const auto y = conv2d(x, Tensor<float>(Shape{3, 2, k, k}, 0.5f), std::vector<float>{}, ConvSpec::square(k, d));
    EXPECT_EQ(y.h(), h);
    EXPECT_EQ(y.w(), w);
  }
}

TEST(Conv2d, DilationEqualsZeroExpandedKernel) {
  for (std::uint32_t seed = 0; seed < 6; ++seed) {
    const std::size_t k = seed % 2 == 0 ? 3 : 5, d = 2 + seed % 2;
    const auto x = oracle::random_tensor(Shape{1, 2, 8, 8}, 100 + seed);
    const auto w = oracle::random_tensor(Shape{3, 2, k, k}, 200 + seed);
    const auto dilated = conv2d(x, w, std::vector<float>{}, ConvSpec::square(k, d));
    const auto wide = oracle::dilate_kernel(w, d);
    const auto plain = conv2d(x, wide, std::vector<float>{}, ConvSpec::square(wide.h(), 1));
    ASSERT_EQ(dilated.shape(), plain.shape());
    for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(dilated[i], plain[i], 1e-5);
  }
}

TEST(Conv2d, LinearInInput) {
  const auto x = oracle::random_tensor(Shape{1, 3, 9, 9}, 1), y = oracle::random_tensor(Shape{1, 3, 9, 9}, 2);
  const auto w = oracle::random_tensor(Shape{4, 3, 3, 3}, 3);
  const float alpha = 0.75f, beta = -1.25f;
  Tensor<float> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
  const ConvSpec spec = ConvSpec::square(3, 2);
  const auto lhs = conv2d(mix, w, std::vector<float>{}, spec);
  const auto cx = conv2d(x, w, std::vector<float>{}, spec), cy = conv2d(y, w, std::vector<float>{}, spec);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * cx[i] + beta * cy[i], 1e-5);
}

TEST(Conv2d, Deterministic) {
  const auto x = oracle::random_tensor(Shape{2, 4, 16, 16}, 5);
  const auto w = oracle::random_tensor(Shape{16, 4, 5, 5}, 6);
  EXPECT_EQ(conv2d(x, w, std::vector<float>{}, ConvSpec::square(5, 2)),
            conv2d(x, w, std::vector<float>{}, ConvSpec::square(5, 2)));
}

TEST(MaxPool, TwoByTwo) {
  const auto x = iota(Shape{1, 1, 2, 2});
  EXPECT_EQ(maxpool2d(x, 2, 2, false).item(), 4.0f);
}

TEST(MaxPool, FourByFourStrideTwo) {
  const auto x = iota(Shape{1, 1, 4, 4});
  const auto y = maxpool2d(x, 2, 2, false);
  EXPECT_EQ(y, Tensor<float>(Shape{1, 1, 2, 2}, {6, 8, 14, 16}));
  EXPECT_EQ(y, oracle::maxpool(x, 2, 2));
}

TEST(MaxPool, ConstantSamePadding) {
  const Tensor<float> x(Shape{1, 2, 9, 6}, -3.5f);
  EXPECT_EQ(maxpool2d(x, 7, 1, true), x);
}

TEST(MaxPool, WindowOneIsIdentity) {
  const auto x = oracle::random_tensor(Shape{2, 3, 5, 4}, 9);
  EXPECT_EQ(maxpool2d(x, 1, 1, false), x);
  EXPECT_EQ(maxpool2d(x, 1, 1, true), x);
}

TEST(MaxPool, SamePaddingAgreesWithInteriorWindows) {
  const auto x = oracle::random_tensor(Shape{1, 1, 12, 12}, 4);
  const auto same = maxpool2d(x, 7, 1, true);
  const auto valid = oracle::maxpool(x, 7, 1);
  for (std::size_t y = 0; y < valid.h(); ++y)
    for (std::size_t xx = 0; xx < valid.w(); ++xx) EXPECT_EQ(same.at(0, 0, y + 3, xx + 3), valid.at(0, 0, y, xx));
}

TEST(MaxPool, TiesPickFirstRowMajor) {
  const Tensor<float> x(Shape{1, 1, 2, 2}, 1.0f);
  const auto r = maxpool2d_with_argmax(x, 2, 2, false);
  EXPECT_EQ(r.argmax.at(0), 0u);
}

TEST(MaxPool, Errors) {
  const Tensor<float> x(Shape{1, 1, 3, 3});
  EXPECT_THROW(maxpool2d(x, 4, 1, false), ShapeError);
  EXPECT_THROW(maxpool2d(x, 0, 1, false), SpecError);
  EXPECT_THROW(maxpool2d(x, 3, 2, true), SpecError);
}

TEST(Upsample, Nearest) {
  const auto x = iota(Shape{1, 1, 2, 2});
  EXPECT_EQ(upsample_nearest(x, 2),
            Tensor<float>(Shape{1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  EXPECT_EQ(upsample_nearest(x, 1), x);
  EXPECT_EQ(upsample_nearest(Tensor<float>(Shape{2, 3, 8, 8}), 2).shape(), (Shape{2, 3, 16, 16}));
  EXPECT_THROW(upsample_nearest(x, 0), SpecError);
}

TEST(Concat, ShapesAndSlices) {
  const auto a = oracle::random_tensor(Shape{1, 2, 4, 4}, 1), b = oracle::random_tensor(Shape{1, 3, 4, 4}, 2);
  const auto ab = concat_channels<float>({a, b});
  EXPECT_EQ(ab.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(slice_channels(ab, 0, 2), a);
  EXPECT_EQ(slice_channels(ab, 2, 5), b);
  EXPECT_EQ(concat_channels<float>({a}), a);
}

TEST(Concat, BatchedPartsKeepOrder) {
  const auto a = oracle::random_tensor(Shape{2, 1, 3, 3}, 1), b = oracle::random_tensor(Shape{2, 2, 3, 3}, 2);
  const auto ab = concat_channels<float>({a, b});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) {
        EXPECT_EQ(ab.at(n, 0, y, x), a.at(n, 0, y, x));
        EXPECT_EQ(ab.at(n, 2, y, x), b.at(n, 1, y, x));
      }
}

TEST(Concat, Errors) {
  EXPECT_THROW(concat_channels(std::vector<Tensor<float>>{}), SpecError);
  EXPECT_THROW(concat_channels<float>({Tensor<float>(Shape{1, 1, 4, 4}), Tensor<float>(Shape{1, 1, 4, 5})}),
               ShapeError);
  EXPECT_THROW(concat_channels<float>({Tensor<float>(Shape{1, 1, 4, 4}), Tensor<float>(Shape{2, 1, 4, 4})}),
               ShapeError);
}

TEST(Elementwise, Scalars) {
  EXPECT_EQ(elementwise(Elementwise::sigmoid, Tensor<float>::scalar(0.0f)).item(), 0.5f);
  EXPECT_EQ(elementwise(Elementwise::relu, Tensor<float>::scalar(-1.0f)).item(), 0.0f);
  EXPECT_EQ(elementwise(Elementwise::relu, Tensor<float>::scalar(2.0f)).item(), 2.0f);
}

TEST(Elementwise, SigmoidStaysOpen) {
  const Tensor<float> x(Shape{1, 1, 1, 4}, {-200.0f, -40.0f, 40.0f, 200.0f});
  const auto s = sigmoid(x);
  for (float v : s.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_TRUE(s.all_finite());
}

TEST(Elementwise, MulBroadcastsMask) {
  const Tensor<float> ones(Shape{1, 2, 2, 2}, 1.0f);
  const Tensor<float> mask(Shape{1, 1, 2, 2}, {0, 1, 1, 0});
  const Tensor<float> want(Shape{1, 2, 2, 2}, {0, 1, 1, 0, 0, 1, 1, 0});
  EXPECT_EQ(elementwise(Elementwise::mul, ones, &mask), want);
}

TEST(Elementwise, AddSameShape) {
  const auto a = oracle::random_tensor(Shape{1, 2, 3, 3}, 1), b = oracle::random_tensor(Shape{1, 2, 3, 3}, 2);
  const auto c = elementwise(Elementwise::add, a, &b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], a[i] + b[i]);
}

TEST(Elementwise, Errors) {
  const Tensor<float> a(Shape{1, 2, 3, 3}), b(Shape{1, 2, 3, 4}), c(Shape{1, 2, 3, 3});
  EXPECT_THROW(elementwise(Elementwise::add, a, &b), ShapeError);
  EXPECT_THROW(elementwise(Elementwise::relu, a, &c), SpecError);
  EXPECT_THROW(elementwise(Elementwise::mul, a), SpecError);
}
