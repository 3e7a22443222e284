#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nfmkv/diffcore/gradcheck.hpp"
#include "nfmkv/flows/losses.hpp"

using namespace nfmkv;

namespace {

// Perturbs every parameter so blocks are far from the identity.
void randomize(ParamStore& s, std::uint64_t seed, double scale) {
  Stream st = StreamKey{seed, "test-perturb"}.stream(0);
  for (double& v : s.values()) v = scale * st.normal();
}

Matrix random_points(std::size_t m, std::size_t d, std::uint64_t seed, bool unit) {
  Stream st = StreamKey{seed, "test-points"}.stream(0);
  Matrix x(m, d);
  for (double& v : x.data) v = unit ? st.uniform() : 2.0 * st.normal();
  return x;
}

struct RoundTrip {
  double max_error = 0.0;
  double max_logdet_sum = 0.0;
};

RoundTrip round_trip(const FlowBlock& block, const ParamStore& store, const Matrix& x) {
  Tape t;
  BlockResult f = block_forward(block, store, t.constant(x));
  BlockResult b = block_inverse(block, store, t.constant(f.y.value()));
  RoundTrip r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double e = std::abs(b.y.value().data[i] - x.data[i]);
    if (x.cols == 1 && store.size() > 0) e = std::min(e, 1.0 - e);  // ring distance
    r.max_error = std::max(r.max_error, e);
  }
  for (std::size_t m = 0; m < x.rows; ++m)
    r.max_logdet_sum = std::max(r.max_logdet_sum, std::abs(f.logdet.value().data[m] + b.logdet.value().data[m]));
  return r;
}

// log|det| of a central finite-difference Jacobian (d = 2).
double fd_logdet_2d(const FlowBlock& block, const ParamStore& store, std::vector<double> x) {
  const double h = 1e-6;
  double J[2][2];
  for (int j = 0; j < 2; ++j) {
    auto xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    auto yp = block_forward(block, store, std::span<const double>(xp)).first;
    auto ym = block_forward(block, store, std::span<const double>(xm)).first;
    for (int i = 0; i < 2; ++i) J[i][j] = (yp[i] - ym[i]) / (2 * h);
  }
  return std::log(std::abs(J[0][0] * J[1][1] - J[0][1] * J[1][0]));
}

}  // namespace

TEST(MafBlock, ZeroConditionerIsIdentity) {
  ParamStore s;
  FlowBlock b = MafBlock::create(s, "maf", 3, 32);
  const std::vector<double> x{0.3, -1.2, 2.5};
  auto [y, ld] = block_forward(b, s, std::span<const double>(x));
  EXPECT_EQ(y, x);
  EXPECT_EQ(ld, 0.0);
}

TEST(MafBlock, ConstantLogScaleDoubles) {
  ParamStore s;
  MafBlock maf = MafBlock::create(s, "maf", 3, 32);
  auto b2 = s.view(maf.b2);
  const double raw = kMafLogScaleBound * std::atanh(std::log(2.0) / kMafLogScaleBound);
  for (std::size_t i = 0; i < 3; ++i) b2[3 + i] = raw;
  const std::vector<double> x{0.3, -1.2, 2.5};
  auto [y, ld] = block_forward(FlowBlock{maf}, s, std::span<const double>(x));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 2.0 * x[i], 1e-12);
  EXPECT_NEAR(ld, 3.0 * std::log(2.0), 1e-12);
}

TEST(MafBlock, LogDetMatchesNumericalJacobian) {
  ParamStore s;
  MafBlock maf = MafBlock::create(s, "maf", 2, 32);
  randomize(s, 4, 0.5);
  for (const auto& x : {std::vector<double>{0.4, -0.9}, std::vector<double>{-1.5, 2.0}}) {
    const double ld = block_forward(FlowBlock{maf}, s, std::span<const double>(x)).second;
    EXPECT_NEAR(ld, fd_logdet_2d(maf, s, x), 1e-4);
  }
}

TEST(MafBlock, JacobianIsLowerTriangular) {
  ParamStore s;
  MafBlock maf = MafBlock::create(s, "maf", 4, 32);
  randomize(s, 8, 0.5);
  const std::vector<double> x{0.2, -0.4, 1.0, 0.7};
  const auto y0 = block_forward(FlowBlock{maf}, s, std::span<const double>(x)).first;
  for (std::size_t j = 0; j < 4; ++j) {
    auto xp = x;
    xp[j] += 1e-3;
    const auto y = block_forward(FlowBlock{maf}, s, std::span<const double>(xp)).first;
    for (std::size_t i = 0; i < j; ++i) EXPECT_LT(std::abs(y[i] - y0[i]), 1e-8) << i << "," << j;
    EXPECT_GT(std::abs(y[j] - y0[j]), 1e-6);
  }
}

TEST(MafBlock, RoundTripOnThousandPoints) {
  ParamStore s;
  MafBlock maf = MafBlock::create(s, "maf", 3, 32);
  randomize(s, 12, 0.4);
  auto r = round_trip(maf, s, random_points(1000, 3, 1, false));
  EXPECT_LT(r.max_error, 1e-6);
  EXPECT_LT(r.max_logdet_sum, 1e-8);
}

TEST(PermuteBlock, InverseIsInversePermutation) {
  PermuteBlock p{{2, 0, 1}};
  EXPECT_EQ(p.inverse(), (std::vector<std::size_t>{1, 2, 0}));
  ParamStore s;
  auto r = round_trip(p, s, random_points(1000, 3, 2, false));
  EXPECT_EQ(r.max_error, 0.0);
  EXPECT_EQ(r.max_logdet_sum, 0.0);
}

TEST(SplineBlock, ZeroParametersGiveIdentity) {
  ParamStore s;
  FlowBlock b = SplineBlock::create(s, "rqs", 16);
  for (double v : {0.0, 0.123, 0.5, 0.999}) {
    const std::vector<double> x{v};
    auto [y, ld] = block_forward(b, s, std::span<const double>(x));
    EXPECT_NEAR(y[0], v, 1e-12);
    EXPECT_NEAR(ld, 0.0, 1e-12);
    auto [xi, ldi] = block_inverse(b, s, std::span<const double>(y));
    EXPECT_NEAR(xi[0], v, 1e-12);
  }
}

TEST(SplineBlock, RoundTripOnThousandPoints) {
  ParamStore s;
  SplineBlock rqs = SplineBlock::create(s, "rqs", 16);
  randomize(s, 21, 1.0);
  auto r = round_trip(rqs, s, random_points(1000, 1, 3, true));
  EXPECT_LT(r.max_error, 1e-6);
  EXPECT_LT(r.max_logdet_sum, 1e-8);
}

TEST(SplineBlock, LogDetMatchesNumericalDerivative) {
  ParamStore s;
  SplineBlock rqs = SplineBlock::create(s, "rqs", 16);
  randomize(s, 5, 1.0);
  for (double v : {0.05, 0.31, 0.62, 0.93}) {
    const double h = 1e-7;
    const std::vector<double> x{v}, xp{v + h}, xm{v - h};
    const double d = (block_forward(rqs, s, std::span<const double>(xp)).first[0] -
                      block_forward(rqs, s, std::span<const double>(xm)).first[0]) /
                     (2 * h);
    EXPECT_NEAR(block_forward(rqs, s, std::span<const double>(x)).second, std::log(d), 1e-5);
  }
}

TEST(SplineBlock, SlopeMatchesAcrossTheSeam) {
  ParamStore s;
  SplineBlock rqs = SplineBlock::create(s, "rqs", 16);
  randomize(s, 6, 1.0);
  const std::vector<double> lo{1e-9}, hi{1.0 - 1e-9};
  EXPECT_NEAR(block_forward(rqs, s, std::span<const double>(lo)).second,
              block_forward(rqs, s, std::span<const double>(hi)).second, 1e-6);
}

TEST(SplineBlock, RejectsPointsOffTheRing) {
  ParamStore s;
  FlowBlock b = SplineBlock::create(s, "rqs", 16);
  const std::vector<double> x{1.5};
  EXPECT_THROW(block_forward(b, s, std::span<const double>(x)), InvalidInput);
}

TEST(BaseDensity, GaussianSamplerMatchesMoments) {
  BaseDensity g = BaseDensity::gaussian({1.0, -2.0}, {0.5, 2.0});
  Matrix x = g.sample(StreamKey{3, "base"}, 10000);
  for (std::size_t c = 0; c < 2; ++c) {
    double mu = 0.0;
    for (std::size_t m = 0; m < x.rows; ++m) mu += x(m, c);
    mu /= x.rows;
    const double sd = c == 0 ? 0.5 : 2.0;
    EXPECT_LT(std::abs(mu - (c == 0 ? 1.0 : -2.0)), 3.0 * sd / 100.0);
  }
}

TEST(BaseDensity, RingDensitiesIntegrateToOne) {
  for (const BaseDensity& b : {BaseDensity::sine_ring(0.5, 2), BaseDensity::uniform_ring(),
                               BaseDensity::wrapped_mixture({0.3, 0.7}, {0.2, 0.7}, {0.1, 0.4})}) {
    double acc = 0.0;
    const int J = 4096;
    for (int j = 0; j < J; ++j) {
      const std::vector<double> x{(j + 0.5) / J};
      acc += std::exp(b.log_density(std::span<const double>(x))) / J;
    }
    EXPECT_NEAR(acc, 1.0, 1e-9);
  }
}

TEST(BaseDensity, RingSamplerMatchesCdf) {
  BaseDensity b = BaseDensity::sine_ring(0.5, 1);
  Matrix x = b.sample(StreamKey{4, "base"}, 20000);
  // P(x < 1/2) = 1/2 + a/pi for 1 + a sin(2 pi x).
  double below = 0.0;
  for (double v : x.data) below += v < 0.5 ? 1.0 : 0.0;
  below /= x.rows;
  const double p = 0.5 + 0.5 / std::numbers::pi;
  EXPECT_LT(std::abs(below - p), 4.0 * std::sqrt(p * (1 - p) / x.rows));
}

TEST(BaseDensity, RejectsUnnormalizedMixture) {
  EXPECT_THROW(BaseDensity::wrapped_mixture({0.3, 0.3}, {0.1, 0.5}, {0.1, 0.1}), InvalidInput);
}

TEST(TimeIndexedFlow, IdentityFlowGaussianAtZero) {
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0}, {1.0}), 4, 1);
  const std::vector<double> x{0.0};
  for (std::size_t n = 0; n <= 4; ++n) EXPECT_NEAR(flow.logprob_at_step(n, x), -0.5 * std::log(2 * std::numbers::pi), 1e-12);
}

TEST(TimeIndexedFlow, StepZeroSamplesAreBaseSamples) {
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0, 1.0}, {1.0, 2.0}), 3, 1);
  randomize(flow.params(), 2, 0.3);
  const StreamKey key{9, "samples"};
  EXPECT_EQ(flow.sample_at_step(0, 50, key).data, flow.base().sample(key, 50).data);
  EXPECT_EQ(flow.sample_at_step(3, 50, key).data, flow.sample_at_step(3, 50, key).data);
  auto path = flow.sample_path(50, key);
  EXPECT_EQ(path[2].data, flow.sample_at_step(2, 50, key).data);
}

TEST(TimeIndexedFlow, IdentityFlowSampleMomentsMatchBase) {
  TimeIndexedFlow flow(BaseDensity::gaussian({-2.0, 0.0}, {0.5, 0.5}), 5, 1);
  Matrix x = flow.sample_at_step(5, 10000, StreamKey{1, "m"});
  double m0 = 0.0, v0 = 0.0;
  for (std::size_t m = 0; m < x.rows; ++m) m0 += x(m, 0);
  m0 /= x.rows;
  for (std::size_t m = 0; m < x.rows; ++m) v0 += (x(m, 0) - m0) * (x(m, 0) - m0);
  v0 /= (x.rows - 1);
  EXPECT_LT(std::abs(m0 + 2.0), 3.0 * 0.5 / 100.0);
  EXPECT_LT(std::abs(v0 - 0.25), 3.0 * 0.25 * std::sqrt(2.0 / 9999.0));
}

TEST(TimeIndexedFlow, DensityIntegratesToOneIn1d) {
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0}, {1.0}), 3, 1);
  randomize(flow.params(), 30, 0.15);
  for (std::size_t n : {0u, 1u, 3u}) {
    Matrix x(6001, 1);
    for (std::size_t i = 0; i < x.rows; ++i) x.data[i] = -30.0 + 60.0 * i / 6000.0;
    auto lp = flow.logprob_at_step(x, n);
    double acc = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) acc += (i == 0 || i + 1 == lp.size() ? 0.5 : 1.0) * std::exp(lp[i]);
    EXPECT_NEAR(acc * 0.01, 1.0, 1e-2) << "step " << n;
  }
}

TEST(TimeIndexedFlow, DensityIntegratesToOneOnRing) {
  TimeIndexedFlow flow(BaseDensity::sine_ring(0.5, 1), 4, 1);
  randomize(flow.params(), 31, 0.3);
  Matrix x(2000, 1);
  for (std::size_t i = 0; i < x.rows; ++i) x.data[i] = (i + 0.5) / 2000.0;
  auto lp = flow.logprob_at_step(x, 4);
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v) / 2000.0;
  EXPECT_NEAR(acc, 1.0, 1e-3);
}

TEST(TimeIndexedFlow, TapeFreeDensityMatchesTapePath) {
  TimeIndexedFlow plane(BaseDensity::gaussian({0.5, -1.0}, {1.0, 2.0}), 5, 3);
  randomize(plane.params(), 32, 0.2);
  TimeIndexedFlow ring(BaseDensity::sine_ring(0.5, 2), 5, 3);
  randomize(ring.params(), 33, 0.4);
  for (const TimeIndexedFlow* f : {&plane, &ring}) {
    const Matrix x = random_points(300, f->dim(), 34, f->on_ring());
    for (std::size_t n : {0u, 2u, 5u}) {
      Tape t;
      const auto want = f->logprob_at_step(t.constant(x), n, f->params()).value().data;
      EXPECT_EQ(f->logprob_at_step(x, n), want) << "step " << n;
    }
  }
}

TEST(TimeIndexedFlow, SampledLogProbMatchesNegativeEntropyEstimate) {
  // For the pushforward of N(0,1) by y = 2x + 1 the entropy is known exactly.
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0, 0.0}, {1.0, 1.0}), 1, 1);
  randomize(flow.params(), 40, 0.3);
  const std::size_t M = 10000;
  Matrix y = flow.sample_at_step(1, M, StreamKey{2, "e"});
  auto lp = flow.logprob_at_step(y, 1);
  // Independent estimate: log mu_1(y) = log mu_0(x) - logdet forward(x).
  Tape t;
  Matrix x0 = flow.base_samples(M, StreamKey{2, "e"});
  Var x = t.constant(x0);
  Var ld = t.constant(Matrix(M, 1));
  for (const FlowBlock& b : flow.group(0)) {
    auto r = block_forward(b, flow.params(), x);
    x = r.y;
    ld = ld + r.logdet;
  }
  Var ref = flow.base().log_density(t.constant(x0)) - ld;
  double mean_a = 0.0, mean_b = 0.0, var_b = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    mean_a += lp[m] / M;
    mean_b += ref.value().data[m] / M;
  }
  for (std::size_t m = 0; m < M; ++m) var_b += std::pow(ref.value().data[m] - mean_b, 2) / (M - 1);
  EXPECT_LT(std::abs(mean_a - mean_b), 3.0 * std::sqrt(var_b / M));
}

TEST(DisLoss, GaussianAtModePerPoint) {
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0}, {1.0}), 3, 1);
  std::vector<Matrix> states(4, Matrix(7, 1));
  EXPECT_NEAR(dis_loss(flow, states), 0.5 * std::log(2 * std::numbers::pi), 1e-12);
  TimeIndexedFlow single(BaseDensity::gaussian({0.0}, {1.0}), 1, 1);
  std::vector<Matrix> one{Matrix(1, 1), Matrix(1, 1, 0.4)};
  EXPECT_NEAR(dis_loss(single, one), -single.logprob_at_step(1, std::vector<double>{0.4}), 1e-12);
}

TEST(DisLoss, MatchedFlowBeatsPerturbations) {
  // States drawn from the flow itself; any parameter perturbation should not
  // reduce the expected NLL (checked on a large sample).
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0, 0.0}, {1.0, 1.0}), 2, 1);
  std::vector<Matrix> states(3);
  auto path = flow.sample_path(4000, StreamKey{8, "dis"});
  states = path;
  const double base_loss = dis_loss(flow, states);
  Stream st = StreamKey{3, "pert"}.stream(0);
  for (int k = 0; k < 10; ++k) {
    TimeIndexedFlow pert = flow;
    for (double& v : pert.params().values()) v += 0.05 * st.normal();
    EXPECT_GT(dis_loss(pert, states), base_loss - 1e-3);
  }
}

TEST(DisLoss, RingSampleOutsideDomainRejected) {
  TimeIndexedFlow flow(BaseDensity::uniform_ring(), 1, 1);
  std::vector<Matrix> states{Matrix(1, 1), Matrix(1, 1, 1.2)};
  EXPECT_THROW(dis_loss(flow, states), InvalidInput);
}

TEST(TerminalLoss, ZeroTerminalFunction) {
  TimeIndexedFlow flow(BaseDensity::sine_ring(0.3, 1), 2, 1);
  TerminalFn g = [](Var x) { return x * 0.0; };
  EXPECT_EQ(terminal_loss(flow, g, 64, StreamKey{1, "t"}), 0.0);
}

TEST(TerminalLoss, ExponentialTerminalAtAndNearTarget) {
  for (double off : {0.0, 1.0}) {
    TimeIndexedFlow flow(BaseDensity::gaussian({2.0 + off, 0.0}, {1e-12, 1e-12}), 1, 1);
    TerminalFn g = [](Var x) { return exp(sum_cols(square(x - x.tape().constant(Matrix::row({2.0, 0.0}))))); };
    EXPECT_NEAR(terminal_loss(flow, g, 16, StreamKey{1, "t"}), off == 0.0 ? 1.0 : std::exp(2.0), 1e-9);
  }
}

TEST(FlowGradients, DisAndTerminalLossesMatchFiniteDifferences) {
  TimeIndexedFlow flow(BaseDensity::gaussian({0.0, 0.5}, {1.0, 0.7}), 3, 1, FlowOptions{2, 8, 16, 0.0});
  randomize(flow.params(), 50, 0.2);
  auto states = flow.sample_path(8, StreamKey{1, "s"});
  for (auto& s : states)
    for (double& v : s.data) v += 0.1;
  LossFn dis = [&](Tape& t, const ParamStore& p) { return dis_loss(t, flow, p, states); };
  EXPECT_LT(fd_check(dis, flow.params(), 1e-5), 1e-4);
  TerminalFn g = [](Var x) { return exp(sum_cols(square(x - x.tape().constant(Matrix::row({1.0, 0.0}))) * 0.1)); };
  const Matrix base = flow.base_samples(8, StreamKey{2, "b"});
  LossFn lt = [&](Tape& t, const ParamStore& p) { return terminal_loss(t, flow, p, g, base); };
  EXPECT_LT(fd_check(lt, flow.params(), 1e-5), 1e-4);
}

TEST(FlowGradients, RingSplineLossesMatchFiniteDifferences) {
  TimeIndexedFlow flow(BaseDensity::sine_ring(0.4, 1), 2, 1, FlowOptions{2, 8, 8, 0.0});
  randomize(flow.params(), 51, 0.5);
  auto states = flow.sample_path(10, StreamKey{1, "s"});
  for (auto& s : states)
    for (double& v : s.data) v = BaseDensity::wrap(v + 0.13);
  LossFn dis = [&](Tape& t, const ParamStore& p) { return dis_loss(t, flow, p, states); };
  EXPECT_LT(fd_check(dis, flow.params(), 1e-5), 1e-4);
  TerminalFn g = [](Var x) { return square(x - 0.3) + 1.0; };
  const Matrix base = flow.base_samples(10, StreamKey{2, "b"});
  LossFn lt = [&](Tape& t, const ParamStore& p) { return terminal_loss(t, flow, p, g, base); };
  EXPECT_LT(fd_check(lt, flow.params(), 1e-5), 1e-4);
}
