#pragma once

#include <cstddef>
#include <string>

#include "nfmkv/errors.hpp"

namespace nfmkv {

// Uniform partition of [0, T] into N steps.
struct TimeGrid {
  double T = 1.0;
  std::size_t N = 1;

  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps) : T(horizon), N(steps) {
    if (steps == 0) throw InvalidInput("time grid needs at least one step");
    if (!(horizon >= 0.0)) throw InvalidInput("time horizon must be non-negative");
  }

  double dt() const { return T / static_cast<double>(N); }
  double t(std::size_t n) const { return n == N ? T : static_cast<double>(n) * dt(); }
};

}  // namespace nfmkv
