#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nfmkv/matrix.hpp"
#include "nfmkv/random.hpp"
#include "nfmkv/sde/time_grid.hpp"

namespace nfmkv {

// Brownian increments dW[n] (M x d) for n < N.
struct WienerBatch {
  std::vector<Matrix> dW;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::size_t samples() const { return dW.empty() ? 0 : dW.front().rows; }
  std::size_t steps() const { return dW.size(); }
};

// Increment (m, n) is drawn from substream (m, n) of key (seed, "wiener",
// counter), so any sample can be regenerated on its own.
inline WienerBatch gen_wiener(const TimeGrid& grid, std::size_t M, std::size_t d, std::uint64_t seed,
                              std::uint64_t counter = 0) {
  if (M == 0 || d == 0) throw InvalidInput("gen_wiener: M and d must be at least 1");
  const double dt = grid.dt();
  if (!(dt > 0.0)) throw InvalidInput("gen_wiener: time step must be positive");
  const double scale = std::sqrt(dt);
  const StreamKey key{seed, "wiener", counter};
  WienerBatch w;
  w.seed = seed;
  w.counter = counter;
  w.dW.assign(grid.N, Matrix(M, d));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = 0; n < grid.N; ++n) {
      Stream s = key.stream(m, static_cast<std::uint32_t>(n));
      for (std::size_t i = 0; i < d; ++i) w.dW[n](m, i) = scale * s.normal();
    }
  }
  return w;
}

}  // namespace nfmkv
