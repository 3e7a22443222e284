#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfmkv/flows/base_density.hpp"
#include "nfmkv/sde/measure.hpp"
#include "nfmkv/sde/time_grid.hpp"

namespace nfmkv {

enum class Domain { euclidean, ring };

// Coefficient functions are batched over rows (samples) and written against
// the tape so the trainer can differentiate through states and controls.
using DriftFn = std::function<Var(double t, Var x, const MeasureSnapshot& mu, Var alpha)>;
using RunningCostFn = std::function<Var(double t, Var x, const MeasureSnapshot& mu, Var alpha)>;
using TerminalCostFn = std::function<Var(Var x, const MeasureSnapshot& mu)>;
using ControlFn = std::function<Var(double t, Var x, const MeasureSnapshot& mu, Var zeta)>;

struct MfgProblem {
  std::string tag;
  std::size_t dim = 1;
  std::size_t control_dim = 1;
  Domain domain = Domain::euclidean;
  TimeGrid grid;
  double sigma = 1.0;  // constant scalar diffusion
  BaseDensity mu0;
  DriftFn drift;
  RunningCostFn running_cost;
  TerminalCostFn terminal;
  ControlFn optimal_control;
  std::string hamiltonian_tag;
  bool terminal_is_zero = false;
  nlohmann::json descriptor;  // enough to rebuild the problem

  bool on_ring() const { return domain == Domain::ring; }
};

}  // namespace nfmkv
