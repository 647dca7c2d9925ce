#include <gtest/gtest.h>

#include <cmath>

#include "bifseg/autodiff.hpp"
#include "bifseg/gradcheck_suite.hpp"
#include "bifseg/loss.hpp"
#include "oracles.hpp"

using namespace bifseg;

TEST(Backward, SigmoidAtZero) {
  Graph<double> g;
  auto x = g.input(Tensor<double>::scalar(0.0), true);
  g.backward(ad::sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad().item(), 0.25);
}

TEST(Backward, ProductRule) {
  Graph<double> g;
  auto a = g.input(Tensor<double>::scalar(2.0), true);
  auto b = g.input(Tensor<double>::scalar(3.0), true);
  g.backward(ad::sum(ad::mul(a, b)));
  EXPECT_EQ(a.grad().item(), 3.0);
  EXPECT_EQ(b.grad().item(), 2.0);
}

TEST(Backward, RepeatedUseAccumulates) {
  Graph<double> g;
  auto x = g.input(Tensor<double>::scalar(1.5), true);
  g.backward(ad::sum(ad::add(x, ad::mul(x, x))));
  EXPECT_DOUBLE_EQ(x.grad().item(), 1.0 + 2.0 * 1.5);
}

TEST(Backward, NonScalarLossRejected) {
  Graph<float> g;
  auto x = g.input(Tensor<float>(Shape{1, 1, 2, 2}), true);
  EXPECT_THROW(g.backward(ad::relu(x)), ContractError);
}

TEST(Backward, ForwardReferenceRejected) {
  Graph<float> g;
  EXPECT_THROW(g.record(Tensor<float>::scalar(1.0f), {5}, nullptr, "bogus"), GraphError);
}

TEST(Backward, TwiceDoublesGradients) {
  Graph<double> g;
  auto x = g.input(oracle::random_tensor(Shape{1, 2, 5, 5}, 1).cast<double>(), true);
  Parameter<double> w(oracle::random_tensor(Shape{3, 2, 3, 3}, 2).cast<double>());
  Parameter<double> b(Tensor<double>(Shape{3, 1, 1, 1}, 0.1));
  auto loss = ad::sum(ad::sigmoid(ad::conv2d(x, g.param(w), g.param(b), ConvSpec::square(3))));
  g.backward(loss);
  const Tensor<double> gx = x.grad(), gw = w.grad;
  g.backward(loss);
  for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * gx[i]);
  for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_EQ(w.grad[i], 2.0 * gw[i]);
}

TEST(Backward, SumOfLossesIsSumOfGradients) {
  const auto xv = oracle::random_tensor(Shape{1, 1, 6, 6}, 3).cast<double>();
  auto grad_of = [&](int which) {
    Graph<double> g;
    auto x = g.input(xv, true);
    auto f1 = ad::sum(ad::sigmoid(x));
    auto f2 = ad::sum(ad::mul(x, ad::relu(x)));
    g.backward(which == 0 ? f1 : which == 1 ? f2 : ad::add(f1, f2));
    return x.grad();
  };
  const auto g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-6);
}

TEST(StopGradient, FrozenFactor) {
  Graph<double> g;
  auto y = g.input(Tensor<double>::scalar(2.0), true);
  g.backward(ad::sum(ad::mul(y, ad::stop_gradient(y))));
  EXPECT_EQ(y.grad().item(), 2.0);
}

TEST(StopGradient, AloneGivesZero) {
  Graph<double> g;
  auto y = g.input(oracle::random_tensor(Shape{1, 1, 3, 3}, 4).cast<double>(), true);
  auto s = ad::stop_gradient(y);
  EXPECT_EQ(s.value(), y.value());
  g.backward(ad::sum(ad::add(s, s)));
  for (double v : y.grad().data()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, SquareSum) {
  auto f = [](auto&, auto x) { return ad::sum(ad::mul(x, x)); };
  const Tensor<double> x(Shape{1, 1, 1, 3}, {1, 2, 3});
  const Tensor<double> analytic = detail::input_gradient<double>(f, x);
  EXPECT_EQ(analytic, (Tensor<double>(Shape{1, 1, 1, 3}, {2, 4, 6})));
  EXPECT_LT(grad_check<double>(f, x, 1e-4), 1e-6);
}

TEST(GradCheck, ConvSum) {
  const auto wt = oracle::random_tensor(Shape{2, 1, 3, 3}, 7);
  auto f = [&](auto& g, auto x) {
    using T = typename std::remove_reference_t<decltype(g)>::value_type;
    auto w = g.constant(wt.cast<T>());
    auto b = g.constant(Tensor<T>(Shape{2, 1, 1, 1}));
    return ad::sum(ad::conv2d(x, w, b, ConvSpec::square(3)));
  };
  const auto x = oracle::random_tensor(Shape{1, 1, 6, 6}, 8);
  EXPECT_LT(grad_check<float>(f, x, 1e-2), 1e-3);
  EXPECT_LT(grad_check_shadow(f, x, 1e-6), 1e-6);
}

TEST(GradCheck, ConstantFunction) {
  auto f = [](auto& g, auto) {
    using T = typename std::remove_reference_t<decltype(g)>::value_type;
    return g.constant(Tensor<T>::scalar(T(4)));
  };
  EXPECT_EQ(grad_check<double>(f, Tensor<double>(Shape{1, 1, 2, 2}, 1.0), 1e-3), 0.0);
}

TEST(GradCheck, ThreeLayerConvStack) {
  const auto w1 = oracle::random_tensor(Shape{4, 1, 3, 3}, 11), w2 = oracle::random_tensor(Shape{4, 4, 3, 3}, 12),
             w3 = oracle::random_tensor(Shape{1, 4, 3, 3}, 13);
  auto f = [&](auto& g, auto x) {
    using T = typename std::remove_reference_t<decltype(g)>::value_type;
    auto layer = [&](auto in, const Tensor<float>& w) {
      return ad::conv2d(in, g.constant(w.template cast<T>()), g.constant(Tensor<T>(Shape{w.n(), 1, 1, 1}, T(0.05))),
                        ConvSpec::square(3));
    };
    return ad::sum(ad::sigmoid(layer(ad::sigmoid(layer(ad::sigmoid(layer(x, w1)), w2)), w3)));
  };
  const auto x = oracle::random_tensor(Shape{1, 1, 7, 7}, 14);
  EXPECT_LT(grad_check_shadow(f, x, 1e-3), 1e-3);
}

TEST(GradCheck, RejectsBadEps) {
  auto f = [](auto&, auto x) { return ad::sum(x); };
  EXPECT_THROW(grad_check<double>(f, Tensor<double>(Shape{1, 1, 1, 1}), 0.0), SpecError);
}

TEST(GradCheck, NonFiniteProbeRaises) {
  const Tensor<double> big(Shape{1, 1, 1, 1}, std::numeric_limits<double>::max());
  auto f = [](auto&, auto x) { return ad::sum(ad::add(x, x)); };
  EXPECT_THROW(grad_check<double>(f, big, 1e300), NumericError);
}

TEST(MaxPoolGradient, RoutesToSingleFirstArgmax) {
  Graph<double> g;
  auto x = g.input(Tensor<double>(Shape{1, 1, 2, 4}, {5, 5, 1, 2, 5, 0, 3, 3}), true);
  g.backward(ad::sum(ad::maxpool2d(x, 2, 2, false)));
  EXPECT_EQ(x.grad(), (Tensor<double>(Shape{1, 1, 2, 4}, {1, 0, 0, 0, 0, 0, 1, 0})));
}

// Every kernel check of the library's suite, in both precision modes.
TEST(KernelSuite, AllKernelsWithinBounds) {
  GradCheckOptions opt;
  opt.include_model = false;
  for (const auto& r : run_gradcheck_suite(opt)) {
    SCOPED_TRACE(r.name + " [" + r.mode + "]");
    EXPECT_TRUE(r.passed()) << "error " << r.error << " tolerance " << r.tolerance;
  }
}
