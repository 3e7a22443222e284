#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nfmkv/problems/interaction.hpp"
#include "nfmkv/problems/problem.hpp"

namespace nfmkv {

namespace detail {

inline Var squared_distance(Var x, const std::vector<double>& target) {
  return sum_cols(square(x - x.tape().constant(Matrix(1, target.size(), target))));
}

inline void require_normalized_ring(const BaseDensity& mu0) {
  if (!mu0.on_ring()) throw InvalidInput("traffic flow needs a ring initial density");
  const int J = 4096;
  double acc = 0.0;
  for (int j = 0; j < J; ++j) {
    const double x = (j + 0.5) / J;
    acc += std::exp(mu0.log_density(std::span<const double>(&x, 1))) / J;
  }
  if (std::abs(acc - 1.0) > 1e-6) throw InvalidInput("initial density is not normalized on [0, 1)");
}

}  // namespace detail

// Ring-road traffic: dx = b dt + sigma dW, f = (1 - mu(x) - b)^2 / 2, g = 0.
inline MfgProblem make_traffic_flow(TimeGrid grid, double sigma, BaseDensity mu0) {
  detail::require_normalized_ring(mu0);
  MfgProblem p;
  p.tag = "traffic";
  p.dim = 1;
  p.control_dim = 1;
  p.domain = Domain::ring;
  p.grid = grid;
  p.sigma = sigma;
  p.mu0 = mu0;
  p.hamiltonian_tag = "traffic: min_b [(1 - mu - b)^2 / 2 + b p]";
  p.terminal_is_zero = true;
  p.drift = [](double, Var, const MeasureSnapshot&, Var alpha) { return alpha; };
  p.running_cost = [](double, Var x, const MeasureSnapshot& mu, Var alpha) {
    return square(1.0 - mu.density(x) - alpha) * 0.5;
  };
  p.terminal = [](Var x, const MeasureSnapshot&) { return x.tape().constant(Matrix(x.rows(), 1)); };
  p.optimal_control = [](double, Var x, const MeasureSnapshot& mu, Var zeta) { return 1.0 - mu.density(x) - zeta; };
  p.descriptor = {{"tag", p.tag}, {"T", grid.T}, {"N", grid.N}, {"sigma", sigma}, {"mu0", mu0.descriptor()}};
  return p;
}

// Crowd motion toward x_T: drift alpha, f = |alpha|^2 + interaction, g = exp|x - x_T|^2.
inline MfgProblem make_crowd_motion(std::size_t d, std::vector<double> x_target, double sigma, TimeGrid grid,
                                   BaseDensity mu0) {
  if (d == 0) throw InvalidInput("crowd motion needs d >= 1");
  if (x_target.size() != d || mu0.dim() != d || mu0.on_ring())
    throw InvalidInput("crowd motion: target and initial density must be euclidean of dimension d");
  MfgProblem p;
  p.tag = "crowd";
  p.dim = d;
  p.control_dim = d;
  p.domain = Domain::euclidean;
  p.grid = grid;
  p.sigma = sigma;
  p.mu0 = mu0;
  p.hamiltonian_tag = "crowd: min_a [|a|^2 + f_int + a p]";
  p.drift = [](double, Var, const MeasureSnapshot&, Var alpha) { return alpha; };
  p.running_cost = [](double, Var x, const MeasureSnapshot& mu, Var alpha) {
    return sum_cols(square(alpha)) + interaction_cost(x, mu.samples);
  };
  p.terminal = [x_target](Var x, const MeasureSnapshot&) { return exp(detail::squared_distance(x, x_target)); };
  p.optimal_control = [](double, Var, const MeasureSnapshot&, Var zeta) { return zeta * -0.5; };
  p.descriptor = {{"tag", p.tag},   {"d", d},         {"T", grid.T}, {"N", grid.N},
                  {"sigma", sigma}, {"x_T", x_target}, {"mu0", mu0.descriptor()}};
  return p;
}

inline MfgProblem make_crowd2d(TimeGrid grid = TimeGrid(1.0, 100), double sigma = std::numbers::sqrt2) {
  auto p = make_crowd_motion(2, {2.0, 0.0}, sigma, grid, BaseDensity::gaussian({-2.0, 0.0}, {0.5, 0.5}));
  p.tag = "crowd2d";
  p.descriptor["tag"] = p.tag;
  return p;
}

inline MfgProblem make_crowd50d(TimeGrid grid = TimeGrid(1.0, 100), double sigma = std::numbers::sqrt2,
                                double init_std = 0.5) {
  std::vector<double> mean(50, 0.0), target(50, 0.0);
  mean[0] = mean[1] = -2.0;
  target[0] = target[1] = 2.0;
  auto p = make_crowd_motion(50, target, sigma, grid, BaseDensity::gaussian(mean, std::vector<double>(50, init_std)));
  p.tag = "crowd50d";
  p.descriptor["tag"] = p.tag;
  return p;
}

inline constexpr double kObstacleRadius = 1.0;

// Crowd motion around an obstacle at the origin: adds lambda exp(-|x|^2 / s^2).
inline MfgProblem make_crowd_obstacle(TimeGrid grid = TimeGrid(1.0, 20), double sigma = std::numbers::sqrt2,
                                      double lambda_obs = 5.0,
                                      BaseDensity mu0 = BaseDensity::gaussian({-4.0, 0.0}, {0.1, 0.1}),
                                      std::vector<double> x_target = {4.0, 0.0}) {
  if (!(lambda_obs > 0.0)) throw InvalidInput("obstacle weight must be positive");
  auto p = make_crowd_motion(2, std::move(x_target), sigma, grid, std::move(mu0));
  p.tag = "obstacle";
  const RunningCostFn crowd = p.running_cost;
  p.running_cost = [crowd, lambda_obs](double t, Var x, const MeasureSnapshot& mu, Var alpha) {
    const double s2 = kObstacleRadius * kObstacleRadius;
    return crowd(t, x, mu, alpha) + exp(sum_cols(square(x)) * (-1.0 / s2)) * lambda_obs;
  };
  p.hamiltonian_tag = "crowd + obstacle bump";
  p.descriptor["tag"] = p.tag;
  p.descriptor["lambda_obs"] = lambda_obs;
  return p;
}

// Terminal cost constrains only the first coordinate: g = exp((x_1 - 4)^2).
inline MfgProblem make_half_terminal(TimeGrid grid = TimeGrid(1.0, 20), double sigma = std::numbers::sqrt2,
                                     BaseDensity mu0 = BaseDensity::gaussian({-4.0, 0.0}, {0.1, 0.1})) {
  auto p = make_crowd_motion(2, {4.0, 0.0}, sigma, grid, std::move(mu0));
  p.tag = "half_terminal";
  p.terminal = [](Var x, const MeasureSnapshot&) { return exp(square(col(x, 0) - 4.0)); };
  p.descriptor["tag"] = p.tag;
  p.descriptor.erase("x_T");
  return p;
}

// Rebuilds a problem from its descriptor (as stored in checkpoints).
inline MfgProblem problem_from_descriptor(const nlohmann::json& j) {
  const std::string tag = j.at("tag").get<std::string>();
  const TimeGrid grid(j.at("T").get<double>(), j.at("N").get<std::size_t>());
  const double sigma = j.at("sigma").get<double>();
  const BaseDensity mu0 = BaseDensity::from_descriptor(j.at("mu0"));
  if (tag == "traffic") return make_traffic_flow(grid, sigma, mu0);
  if (tag == "obstacle")
    return make_crowd_obstacle(grid, sigma, j.at("lambda_obs").get<double>(), mu0,
                               j.at("x_T").get<std::vector<double>>());
  if (tag == "half_terminal") return make_half_terminal(grid, sigma, mu0);
  if (tag == "crowd" || tag == "crowd2d" || tag == "crowd50d") {
    MfgProblem p =
        make_crowd_motion(j.at("d").get<std::size_t>(), j.at("x_T").get<std::vector<double>>(), sigma, grid, mu0);
    p.tag = tag;
    p.descriptor["tag"] = tag;
    return p;
  }
  throw InvalidInput("unknown problem tag '" + tag + "'");
}

}  // namespace nfmkv
