#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "nfmkv/errors.hpp"
#include "nfmkv/random.hpp"

namespace nfmkv {

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("loglog_slope: need matching series of length >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

enum class AnalyticSde { ou, gbm };

struct EmProbeOptions {
  AnalyticSde kind = AnalyticSde::ou;
  double x0 = 1.0;
  double sigma = 1.0;
  double rate = 1.0;  // OU: dX = -rate X dt + sigma dW;  GBM: dX = rate X dt + sigma X dW
  double T = 1.0;
};

struct EmProbeResult {
  std::vector<double> dt;
  std::vector<double> strong_error;  // E sup_n |X_num - X_true|
  std::vector<double> weak_error;    // |E X_num(T)^2 - E X_true(T)^2|
  double strong_order = 0.0;
  double weak_order = 0.0;
};

// Euler-Maruyama against the exact solution on shared Brownian paths. All
// step sizes must divide the finest one by a power of two.
inline EmProbeResult em_order_probe(std::vector<double> dts, std::size_t M, std::uint64_t seed,
                                    EmProbeOptions opt = {}) {
  if (dts.size() < 3) throw InvalidInput("em_order_probe: need at least three step sizes");
  if (M == 0) throw InvalidInput("em_order_probe: M must be positive");
  std::sort(dts.begin(), dts.end());
  const double h = dts.front();
  const auto fine_steps = static_cast<std::size_t>(std::llround(opt.T / h));
  std::vector<std::size_t> stride;
  for (double dt : dts) {
    const auto s = static_cast<std::size_t>(std::llround(dt / h));
    if (s == 0 || std::abs(static_cast<double>(s) * h - dt) > 1e-12 * dt || fine_steps % s != 0)
      throw InvalidInput("em_order_probe: step sizes must be integer multiples of the finest step dividing T");
    stride.push_back(s);
  }

  // OU needs the exact stochastic convolution over each fine step jointly
  // with the Brownian increment.
  const double a = opt.rate;
  const double var_i = opt.kind == AnalyticSde::ou ? (1.0 - std::exp(-2.0 * a * h)) / (2.0 * a) : 0.0;
  const double cov = opt.kind == AnalyticSde::ou ? (1.0 - std::exp(-a * h)) / a : 0.0;
  const double cond_sd = std::sqrt(std::max(0.0, var_i - cov * cov / h));

  const std::size_t K = dts.size();
  std::vector<double> strong(K, 0.0), num_sq(K, 0.0);
  double true_sq = 0.0;
  std::vector<double> dW(fine_steps), X_true(fine_steps + 1), X_num(K);
  const StreamKey key{seed, "em-probe"};
  for (std::size_t m = 0; m < M; ++m) {
    Stream s = key.stream(m);
    X_true[0] = opt.x0;
    double W = 0.0;
    for (std::size_t k = 0; k < fine_steps; ++k) {
      const double z1 = s.normal(), z2 = s.normal();
      dW[k] = std::sqrt(h) * z1;
      if (opt.kind == AnalyticSde::ou) {
        const double I = cov / h * dW[k] + cond_sd * z2;
        X_true[k + 1] = std::exp(-a * h) * X_true[k] + opt.sigma * I;
      } else {
        W += dW[k];
        const double t = static_cast<double>(k + 1) * h;
        X_true[k + 1] = opt.x0 * std::exp((a - 0.5 * opt.sigma * opt.sigma) * t + opt.sigma * W);
      }
    }
    for (std::size_t j = 0; j < K; ++j) {
      double x = opt.x0, sup = 0.0;
      for (std::size_t k = 0; k < fine_steps; k += stride[j]) {
        double inc = 0.0;
        for (std::size_t q = k; q < k + stride[j]; ++q) inc += dW[q];
        const double H = dts[j];
        if (opt.kind == AnalyticSde::ou) x = x - a * x * H + opt.sigma * inc;
        else x = x + a * x * H + opt.sigma * x * inc;
        sup = std::max(sup, std::abs(x - X_true[k + stride[j]]));
      }
      strong[j] += sup;
      num_sq[j] += x * x;
      X_num[j] = x;
    }
    true_sq += X_true[fine_steps] * X_true[fine_steps];
  }
  EmProbeResult r;
  r.dt = dts;
  for (std::size_t j = 0; j < K; ++j) {
    r.strong_error.push_back(strong[j] / static_cast<double>(M));
    r.weak_error.push_back(std::abs(num_sq[j] - true_sq) / static_cast<double>(M));
  }
  r.strong_order = loglog_slope(r.dt, r.strong_error);
  r.weak_order = loglog_slope(r.dt, r.weak_error);
  return r;
}

// Exact W1 between the empirical measure of `samples` and N(mean, sd^2),
// integrating |F_M - Phi| piecewise in closed form.
inline double w1_to_gaussian(std::vector<double> samples, double mean = 0.0, double sd = 1.0) {
  if (samples.empty()) throw InvalidInput("w1_to_gaussian: no samples");
  std::sort(samples.begin(), samples.end());
  const boost::math::normal_distribution<double> normal;
  auto Phi = [&](double z) { return boost::math::cdf(normal, z); };
  auto phi = [&](double z) { return boost::math::pdf(normal, z); };
  auto A = [&](double z) { return z * Phi(z) + phi(z); };  // antiderivative of Phi, A(-inf) = 0
  const double M = static_cast<double>(samples.size());
  for (double& v : samples) v = (v - mean) / sd;
  double w = A(samples.front()) + A(-samples.back());
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double lo = samples[i - 1], hi = samples[i];
    if (hi <= lo) continue;
    const double c = static_cast<double>(i) / M;
    const double q = boost::math::quantile(normal, c);
    auto above = [&](double u, double v) { return (A(v) - A(u)) - c * (v - u); };  // int (Phi - c)
    if (q <= lo) w += above(lo, hi);
    else if (q >= hi) w -= above(lo, hi);
    else w += -above(lo, q) + above(q, hi);
  }
  return w * sd;
}

struct ParticleRateResult {
  std::vector<double> sample_sizes;
  std::vector<double> mean_w1;
  double slope = 0.0;
};

// Mean W1 (over `seeds` repetitions) between an M-sample empirical measure of
// N(mean, sd^2) and the law itself, fitted against M on log-log axes.
inline ParticleRateResult particle_rate_probe(const std::vector<std::size_t>& sizes, std::uint64_t seed,
                                              std::size_t seeds = 20, double mean = 0.0, double sd = 1.0) {
  if (sizes.size() < 3) throw InvalidInput("particle_rate_probe: need at least three sample sizes");
  ParticleRateResult r;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] == 0) throw InvalidInput("particle_rate_probe: sample sizes must be positive");
    double acc = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const StreamKey key{seed, "particle-rate", s};
      std::vector<double> x(sizes[j]);
      for (std::size_t m = 0; m < x.size(); ++m) {
        Stream st = key.stream(m, static_cast<std::uint32_t>(j));
        x[m] = mean + sd * st.normal();
      }
      acc += w1_to_gaussian(std::move(x), mean, sd);
    }
    r.sample_sizes.push_back(static_cast<double>(sizes[j]));
    r.mean_w1.push_back(acc / static_cast<double>(seeds));
  }
  r.slope = loglog_slope(r.sample_sizes, r.mean_w1);
  return r;
}

}  // namespace nfmkv
