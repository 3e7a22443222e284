#include <gtest/gtest.h>

#include <cmath>

#include "nfmkv/diffcore/adam.hpp"
#include "nfmkv/diffcore/gradcheck.hpp"
#include "nfmkv/diffcore/mlp.hpp"

using namespace nfmkv;

namespace {

ParamStore scalar_store(double v) {
  ParamStore s;
  s.add("p", 1, v);
  return s;
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  ParamStore store;
  Mlp net(store, "net", {{3, 4, 2}});
  const std::vector<double> x{1.0, -2.0, 0.5};
  for (double v : net.forward(store, x)) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, IdentityLinearLayer) {
  ParamStore store;
  Mlp net(store, "lin", {{2, 2}});
  auto w = store.view(store.segment("lin.W0"));
  w[0] = 1.0;
  w[3] = 1.0;
  const std::vector<double> x{1.0, 2.0};
  EXPECT_EQ(net.forward(store, x), x);
}

TEST(Mlp, MatchesHandEvaluatedChain) {
  ParamStore store;
  Mlp net(store, "net", {{2, 2, 1}});
  net.initialize(store, 7);
  store.view(store.segment("net.b0"))[0] = 0.3;
  store.view(store.segment("net.b0"))[1] = -0.1;
  store.view(store.segment("net.b1"))[0] = 0.05;
  auto W0 = store.view(store.segment("net.W0"));
  auto b0 = store.view(store.segment("net.b0"));
  auto W1 = store.view(store.segment("net.W1"));
  auto b1 = store.view(store.segment("net.b1"));
  const double x0 = 0.7, x1 = -1.3;
  const double h0 = std::tanh(W0[0] * x0 + W0[1] * x1 + b0[0]);
  const double h1 = std::tanh(W0[2] * x0 + W0[3] * x1 + b0[1]);
  const double expected = W1[0] * h0 + W1[1] * h1 + b1[0];
  const std::vector<double> x{x0, x1};
  EXPECT_NEAR(mlp_forward(net, store, x)[0], expected, 1e-12);
}

TEST(Mlp, RejectsWrongInputWidth) {
  ParamStore store;
  Mlp net(store, "net", {{2, 1}});
  const std::vector<double> x{1.0};
  EXPECT_THROW(net.forward(store, x), InvalidInput);
}

TEST(Mlp, ParameterCountMatchesLayerFormula) {
  ParamStore store;
  Mlp net(store, "net", {{3, 32, 32, 1}});
  EXPECT_EQ(net.param_count(), 4u * 32 + 33u * 32 + 33u * 1);
  EXPECT_EQ(store.size(), net.param_count());
}

TEST(Init, SameSeedIsBitwiseIdenticalAndSeedsDiffer) {
  auto make = [](std::uint64_t seed) {
    ParamStore s;
    Mlp net(s, "net", {{2, 32, 2}});
    net.initialize(s, seed);
    return s;
  };
  EXPECT_TRUE(make(1) == make(1));
  EXPECT_FALSE(make(1) == make(2));
}

TEST(Init, WeightsWithinGlorotBoundAndBiasesZero) {
  ParamStore s;
  Mlp net(s, "net", {{16, 32, 8}});
  net.initialize(s, 11);
  const double b0 = std::sqrt(6.0 / (16 + 32));
  const double b1 = std::sqrt(6.0 / (32 + 8));
  for (double w : s.view(s.segment("net.W0"))) EXPECT_LE(std::abs(w), b0);
  for (double w : s.view(s.segment("net.W1"))) EXPECT_LE(std::abs(w), b1);
  for (double b : s.view(s.segment("net.b0"))) EXPECT_EQ(b, 0.0);
}

TEST(Grad, SquareAtThree) {
  ParamStore s = scalar_store(3.0);
  auto r = grad([](Tape& t, const ParamStore& p) { return sum(square(t.param(p, p.segment("p"), 1, 1))); }, s);
  EXPECT_DOUBLE_EQ(r.loss, 9.0);
  EXPECT_DOUBLE_EQ(r.gradient[0], 6.0);
}

TEST(Grad, ConstantLossHasZeroGradient) {
  ParamStore s = scalar_store(3.0);
  auto r = grad([](Tape& t, const ParamStore&) { return t.constant(4.0); }, s);
  EXPECT_EQ(r.gradient[0], 0.0);
}

TEST(Grad, NonFinitePrimitiveIsNamed) {
  ParamStore s = scalar_store(-1.0);
  try {
    grad([](Tape& t, const ParamStore& p) { return sum(log(t.param(p, p.segment("p"), 1, 1))); }, s);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

namespace {

// Touches every registered primitive so the finite-difference comparison
// exercises all backward rules at once.
Var kitchen_sink(Tape& t, const ParamStore& p, const Mlp& net) {
  Matrix xin(5, 3);
  for (std::size_t i = 0; i < xin.size(); ++i) xin.data[i] = std::sin(1.3 * static_cast<double>(i)) * 0.8;
  Var x = t.constant(xin);
  Var h = net.apply(x, p);  // 5 x 3
  Var a = exp(scale(h, 0.3)) + sqrt(square(h) + 1.0);
  Var b = log(shift(square(tanh(h)), 0.5)) - relu(h - 0.1);
  Var c = dot_rows(a, b) / (sum_cols(square(a)) + 1.0);
  Var d = permute_cols(concat_cols({cols(h, 1, 2), col(h, 0)}), {2, 0, 1});
  Var e = softmax_row(mean_rows(d));
  Var f = cumsum(e) * soft_clamp(sum_cols(mean_rows(h)), 0.7);
  return mean(c) + sum(f) + mean(square(d - h));
}

}  // namespace

TEST(FdCheck, AllPrimitivesAgreeWithCentralDifferences) {
  ParamStore s;
  Mlp net(s, "net", {{3, 6, 3}});
  net.initialize(s, 3);
  for (std::size_t i = 0; i < s.size(); ++i) s.values()[i] += 0.01 * std::cos(static_cast<double>(i));
  LossFn loss = [&](Tape& t, const ParamStore& p) { return kitchen_sink(t, p, net); };
  EXPECT_LT(fd_check(loss, s, 1e-5), 1e-4);
}

TEST(FdCheck, QuadraticIsExact) {
  ParamStore s;
  s.add("p", 4);
  for (std::size_t i = 0; i < 4; ++i) s.values()[i] = 0.5 * static_cast<double>(i) - 1.0;
  LossFn loss = [](Tape& t, const ParamStore& p) {
    Var v = t.param(p, p.segment("p"), 1, 4);
    return sum(square(v)) + sum(v * 3.0);
  };
  EXPECT_LT(fd_check(loss, s, 1e-3), 1e-8);
}

TEST(FdCheck, ReluNetwork) {
  ParamStore s;
  Mlp net(s, "net", {{2, 8, 1}, Activation::relu});
  net.initialize(s, 5);
  LossFn loss = [&](Tape& t, const ParamStore& p) {
    return mean(square(net.apply(t.constant(Matrix(3, 2, std::vector<double>{0.3, -0.2, 1.1, 0.4, -0.7, 0.9})), p)));
  };
  EXPECT_LT(fd_check(loss, s, 1e-5), 1e-4);
}

TEST(FdCheck, RejectsNonPositiveEpsilon) {
  ParamStore s = scalar_store(1.0);
  LossFn loss = [](Tape& t, const ParamStore& p) { return sum(t.param(p, p.segment("p"), 1, 1)); };
  EXPECT_THROW(fd_check(loss, s, 0.0), InvalidInput);
}

TEST(Grad, IsLinearInTheLoss) {
  ParamStore s;
  Mlp net(s, "net", {{2, 5, 1}});
  net.initialize(s, 9);
  const Matrix x(4, 2, std::vector<double>{0.1, 0.2, -0.5, 0.4, 1.0, -1.0, 0.3, 0.3});
  LossFn l1 = [&](Tape& t, const ParamStore& p) { return mean(square(net.apply(t.constant(x), p))); };
  LossFn l2 = [&](Tape& t, const ParamStore& p) { return sum(tanh(net.apply(t.constant(x), p))); };
  LossFn combo = [&](Tape& t, const ParamStore& p) { return l1(t, p) * 2.5 + l2(t, p) * -0.75; };
  auto g1 = grad(l1, s).gradient, g2 = grad(l2, s).gradient, gc = grad(combo, s).gradient;
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], 2.5 * g1[i] - 0.75 * g2[i], 1e-10);
}

TEST(Grad, RepeatedEvaluationIsBitwiseIdentical) {
  ParamStore s;
  Mlp net(s, "net", {{2, 5, 1}});
  net.initialize(s, 9);
  LossFn l = [&](Tape& t, const ParamStore& p) {
    return mean(square(net.apply(t.constant(Matrix(2, 2, std::vector<double>{0.1, 0.2, 0.3, 0.4})), p)));
  };
  EXPECT_EQ(grad(l, s).gradient, grad(l, s).gradient);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.4, -3.0, 1e-3};
  AdamState st;
  AdamHyper h;
  h.lr = 0.01;
  adam_step(p, g, st, h);
  const std::vector<double> start{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_NEAR(p[i] - start[i], -h.lr * g[i] / (std::abs(g[i]) + h.eps), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p{1.0, 2.0};
  AdamState st;
  adam_step(p, std::vector<double>{0.0, 0.0}, st, AdamHyper{});
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, DeterministicFromIdenticalState) {
  std::vector<double> p1{1.0, 2.0}, p2{1.0, 2.0};
  AdamState s1, s2;
  for (int k = 0; k < 3; ++k) {
    adam_step(p1, std::vector<double>{0.3, -0.1}, s1, AdamHyper{});
    adam_step(p2, std::vector<double>{0.3, -0.1}, s2, AdamHyper{});
  }
  EXPECT_EQ(p1, p2);
  EXPECT_TRUE(s1 == s2);
}

TEST(Adam, RejectsNonFiniteGradient) {
  std::vector<double> p{1.0};
  AdamState st;
  EXPECT_THROW(adam_step(p, std::vector<double>{NAN}, st, AdamHyper{}), NumericError);
}

TEST(ParamStore, DuplicateSegmentRejected) {
  ParamStore s;
  s.add("a", 2);
  EXPECT_THROW(s.add("a", 1), InvalidInput);
}
