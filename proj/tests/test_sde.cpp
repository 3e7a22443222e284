#include <gtest/gtest.h>

#include <cmath>

#include "nfmkv/problems/catalog.hpp"
#include "nfmkv/sde/probes.hpp"
#include "nfmkv/sde/rollout.hpp"

using namespace nfmkv;

namespace {

// 1-D toy problem: drift a*x + c, running cost f_const, g = 0.
MfgProblem toy(double a, double c, double sigma, double f_const, TimeGrid grid) {
  MfgProblem p;
  p.tag = "toy";
  p.grid = grid;
  p.sigma = sigma;
  p.mu0 = BaseDensity::gaussian({0.0}, {1.0});
  p.drift = [a, c](double, Var x, const MeasureSnapshot&, Var) { return x * a + c; };
  p.running_cost = [f_const](double, Var x, const MeasureSnapshot&, Var) { return x * 0.0 + f_const; };
  p.terminal = [](Var x, const MeasureSnapshot&) { return x * 0.0; };
  p.optimal_control = [](double, Var, const MeasureSnapshot&, Var zeta) { return zeta; };
  return p;
}

MeasurePath flat_path(std::size_t N) { return MeasurePath(N + 1, constant_measure(1.0)); }

ValueNets zero_nets(std::size_t d, std::size_t N) {
  ValueNets nets(d, N, 3);
  for (double& v : nets.params().values()) v = 0.0;
  return nets;
}

Matrix column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Matrix(n, 1, std::move(v));
}

}  // namespace

TEST(TimeGrid, SpacingAndEndpoints) {
  TimeGrid g(2.0, 8);
  EXPECT_DOUBLE_EQ(g.dt(), 0.25);
  EXPECT_EQ(g.t(0), 0.0);
  EXPECT_EQ(g.t(8), 2.0);
  EXPECT_THROW(TimeGrid(1.0, 0), InvalidInput);
}

TEST(Wiener, DeterministicPerSeed) {
  TimeGrid g(1.0, 10);
  auto a = gen_wiener(g, 50, 2, 7, 3), b = gen_wiener(g, 50, 2, 7, 3), c = gen_wiener(g, 50, 2, 8, 3);
  for (std::size_t n = 0; n < 10; ++n) {
    EXPECT_EQ(a.dW[n].data, b.dW[n].data);
    EXPECT_NE(a.dW[n].data, c.dW[n].data);
  }
}

TEST(Wiener, MomentsMatchTimeStep) {
  TimeGrid g(1.0, 10);
  auto w = gen_wiener(g, 100000, 1, 11);
  double s = 0.0, s2 = 0.0, cnt = 0.0;
  for (const auto& m : w.dW)
    for (double v : m.data) {
      s += v;
      s2 += v * v;
      cnt += 1.0;
    }
  const double mean = s / cnt, var = s2 / cnt - mean * mean;
  EXPECT_LT(std::abs(mean), 4.0 * std::sqrt(0.1 / cnt));
  EXPECT_GE(var, 0.09);
  EXPECT_LE(var, 0.11);
}

TEST(Wiener, SampleDependsOnlyOnItsIndex) {
  TimeGrid g(1.0, 4);
  auto small = gen_wiener(g, 5, 2, 9), large = gen_wiener(g, 40, 2, 9);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t m = 0; m < 5; ++m)
      for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(small.dW[n](m, k), large.dW[n](m, k));
}

TEST(Wiener, RejectsDegenerateInput) {
  EXPECT_THROW(gen_wiener(TimeGrid(0.0, 4), 5, 1, 1), InvalidInput);
  EXPECT_THROW(gen_wiener(TimeGrid(1.0, 4), 0, 1, 1), InvalidInput);
}

TEST(SimulateForward, FrozenDynamicsStayPut) {
  const auto p = toy(0.0, 0.0, 0.0, 0.0, TimeGrid(1.0, 6));
  const Matrix X0 = column({-1.0, 0.5, 2.0});
  auto traj = simulate_forward(p, zero_nets(1, 6), flat_path(6), gen_wiener(p.grid, 3, 1, 1), X0);
  for (const auto& x : traj.X) EXPECT_EQ(x.data, X0.data);
}

TEST(SimulateForward, ConstantDriftIsExact) {
  const auto p = toy(0.0, 1.0, 0.0, 0.0, TimeGrid(1.0, 7));
  auto traj = simulate_forward(p, zero_nets(1, 7), flat_path(7), gen_wiener(p.grid, 2, 1, 1), column({0.0, 3.0}));
  EXPECT_NEAR(traj.X.back().data[0], 1.0, 1e-14);
  EXPECT_NEAR(traj.X.back().data[1], 4.0, 1e-14);
}

TEST(SimulateForward, OrnsteinUhlenbeckMoments) {
  const double sigma = 0.8, x0 = 1.5;
  const auto p = toy(-1.0, 0.0, sigma, 0.0, TimeGrid(1.0, 256));
  const std::size_t M = 10000;
  auto traj = simulate_forward(p, zero_nets(1, 256), flat_path(256), gen_wiener(p.grid, M, 1, 5),
                               Matrix(M, 1, x0));
  double s = 0.0, s2 = 0.0;
  for (double v : traj.X.back().data) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / M, var = s2 / M - mean * mean;
  const double true_mean = std::exp(-1.0) * x0, true_var = sigma * sigma * (1.0 - std::exp(-2.0)) / 2.0;
  EXPECT_LT(std::abs(mean - true_mean), 3.0 * std::sqrt(true_var / M) + 1e-2 * x0);  // + Euler bias O(dt)
  EXPECT_LT(std::abs(var - true_var), 3.0 * true_var * std::sqrt(2.0 / M) + 5e-3);
}

TEST(SimulateForward, RingStatesStayInUnitInterval) {
  auto p = make_traffic_flow(TimeGrid(1.0, 20), 1.0, BaseDensity::uniform_ring());
  const std::size_t M = 200;
  auto traj = simulate_forward(p, zero_nets(1, 20), flat_path(20), gen_wiener(p.grid, M, 1, 2),
                               p.mu0.sample(StreamKey{1, "x0"}, M));
  for (const auto& x : traj.X)
    for (double v : x.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(SimulateForward, BatchOrderDoesNotChangePaths) {
  const auto p = toy(-0.5, 0.2, 0.7, 0.0, TimeGrid(1.0, 5));
  ValueNets nets(1, 5, 4);
  const Matrix X0 = column({0.1, -0.4, 0.9});
  auto w = gen_wiener(p.grid, 3, 1, 8);
  auto a = simulate_forward(p, nets, flat_path(5), w, X0);
  WienerBatch wr = w;
  for (auto& m : wr.dW) std::swap(m.data[0], m.data[2]);
  auto b = simulate_forward(p, nets, flat_path(5), wr, column({0.9, -0.4, 0.1}));
  for (std::size_t n = 0; n <= 5; ++n) {
    EXPECT_EQ(a.X[n].data[0], b.X[n].data[2]);
    EXPECT_EQ(a.X[n].data[1], b.X[n].data[1]);
  }
}

TEST(SimulateForward, DivergenceNamesStep) {
  const auto p = toy(0.0, 1e7, 0.0, 0.0, TimeGrid(1.0, 4));
  try {
    simulate_forward(p, zero_nets(1, 4), flat_path(4), gen_wiener(p.grid, 2, 1, 1), column({0.0, 0.0}));
    FAIL() << "expected divergence";
  } catch (const DivergedSimulation& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(RolloutValue, ZeroCostAndZeroAdjointKeepsInitialValue) {
  const auto p = toy(0.0, 0.0, 1.0, 0.0, TimeGrid(1.0, 5));
  ValueNets nets = zero_nets(1, 5);
  nets.params().values().back() = 0.0;
  auto traj = simulate_forward(p, nets, flat_path(5), gen_wiener(p.grid, 4, 1, 1), column({0.1, 0.2, 0.3, 0.4}));
  const auto uT = rollout_value(p, nets, traj, flat_path(5));
  for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(uT[m], traj.u[0].data[m]);
}

TEST(RolloutValue, ConstantCostTelescopes) {
  const auto p = toy(0.0, 0.0, 1.0, 2.5, TimeGrid(2.0, 8));
  ValueNets nets = zero_nets(1, 8);
  auto traj = simulate_forward(p, nets, flat_path(8), gen_wiener(p.grid, 3, 1, 1), column({0.0, 1.0, 2.0}));
  const auto uT = rollout_value(p, nets, traj, flat_path(8));
  for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(uT[m], traj.u[0].data[m] - 2.5 * 2.0, 1e-12);
}

TEST(RolloutValue, DoublingCostDoublesItsContribution) {
  ValueNets nets = zero_nets(1, 6);
  auto run = [&](double f) {
    const auto p = toy(0.0, 0.3, 0.5, f, TimeGrid(1.0, 6));
    auto traj = simulate_forward(p, nets, flat_path(6), gen_wiener(p.grid, 3, 1, 2), column({0.0, 1.0, 2.0}));
    auto uT = rollout_value(p, nets, traj, flat_path(6));
    return uT[1] - traj.u[0].data[1];
  };
  EXPECT_NEAR(run(1.4), 2.0 * run(0.7), 1e-12);
}

TEST(RolloutValue, SingleStepHandComputed) {
  const auto p = toy(0.0, 0.0, 1.0, 0.75, TimeGrid(0.5, 1));
  ValueNets nets(1, 1, 21);
  const Matrix X0 = column({0.3});
  auto w = gen_wiener(p.grid, 1, 1, 4);
  auto traj = simulate_forward(p, nets, flat_path(1), w, X0);
  const auto uT = rollout_value(p, nets, traj, flat_path(1));
  Tape t;
  const double u0 = nets.u0().apply(t.constant(X0), nets.params()).scalar();
  const double z = nets.z(0).apply(t.constant(X0), nets.params()).scalar();
  EXPECT_NEAR(uT[0], u0 - 0.75 * 0.5 + z * w.dW[0].data[0], 1e-12);
}

TEST(MkvLoss, Examples) {
  const auto p = toy(0.0, 0.0, 1.0, 0.0, TimeGrid(1.0, 1));
  const MeasureSnapshot mu = constant_measure(1.0);
  EXPECT_EQ(mkv_loss(std::vector<double>{0.0, 0.0}, column({1.0, 2.0}), p, mu), 0.0);
  EXPECT_EQ(mkv_loss(std::vector<double>{1.0}, column({5.0}), p, mu), 1.0);
  EXPECT_DOUBLE_EQ(mkv_loss(std::vector<double>{1.0, 2.0}, column({0.0, 0.0}), p, mu), 2.5);
}

TEST(EmProbe, WeakOrderNearOneOnOu) {
  std::vector<double> dts;
  for (int k = 4; k <= 9; ++k) dts.push_back(std::ldexp(1.0, -k));
  const auto r = em_order_probe(dts, 10000, 1);
  EXPECT_GE(r.weak_order, 0.8);
  EXPECT_LE(r.weak_order, 1.2);
}

TEST(EmProbe, DeterministicOdeHasOrderOne) {
  std::vector<double> dts;
  for (int k = 4; k <= 9; ++k) dts.push_back(std::ldexp(1.0, -k));
  EmProbeOptions opt;
  opt.sigma = 0.0;
  const auto r = em_order_probe(dts, 100, 1, opt);
  EXPECT_GE(r.strong_order, 0.9);
  EXPECT_LE(r.strong_order, 1.1);
}

TEST(EmProbe, MultiplicativeNoiseShowsHalfOrder) {
  std::vector<double> dts;
  for (int k = 4; k <= 9; ++k) dts.push_back(std::ldexp(1.0, -k));
  EmProbeOptions opt;
  opt.kind = AnalyticSde::gbm;
  opt.rate = 0.5;
  opt.sigma = 0.8;
  const auto r = em_order_probe(dts, 10000, 1, opt);
  EXPECT_GE(r.strong_order, 0.4);
  EXPECT_LE(r.strong_order, 0.6);
}

TEST(EmProbe, NeedsThreeStepSizes) {
  EXPECT_THROW(em_order_probe({0.1, 0.05}, 10, 1), InvalidInput);
}

TEST(ParticleRate, SlopeNearMinusHalf) {
  const auto r = particle_rate_probe({100, 1000, 10000}, 3, 20);
  EXPECT_GE(r.slope, -0.6);
  EXPECT_LE(r.slope, -0.4);
}

TEST(ParticleRate, ErrorShrinksWithSampleSize) {
  const auto r = particle_rate_probe({1, 1000, 1000000}, 4, 20);
  EXPECT_GT(r.mean_w1[0], r.mean_w1[1]);
  EXPECT_GT(r.mean_w1[1], r.mean_w1[2]);
}

TEST(W1ToGaussian, ShiftedSamplesGiveTheShift) {
  std::vector<double> shifted;
  Stream st = StreamKey{5, "w1"}.stream(0);
  for (std::size_t i = 0; i < 2000; ++i) shifted.push_back(3.0 + st.normal());
  EXPECT_NEAR(w1_to_gaussian(shifted), 3.0, 0.1);
  EXPECT_THROW(w1_to_gaussian({}), InvalidInput);
}
