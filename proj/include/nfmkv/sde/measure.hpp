#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "nfmkv/diffcore/ops.hpp"
#include "nfmkv/flows/time_flow.hpp"

namespace nfmkv {

inline constexpr std::size_t kRingTableCells = 512;

// Periodic density lookup on [0, 1): values at cell centres (j + 1/2)/J,
// linearly interpolated. Differentiable in x.
struct RingDensityTable {
  std::vector<double> values;

  double operator()(double x) const {
    const std::size_t J = values.size();
    const double s = x * static_cast<double>(J) - 0.5;
    const double fl = std::floor(s);
    const double w = s - fl;
    const auto j0 = static_cast<std::size_t>(((static_cast<long>(fl) % static_cast<long>(J)) + J) % J);
    const std::size_t j1 = (j0 + 1) % J;
    return (1.0 - w) * values[j0] + w * values[j1];
  }

  double slope(double x) const {
    const std::size_t J = values.size();
    const double s = x * static_cast<double>(J) - 0.5;
    const double fl = std::floor(s);
    const auto j0 = static_cast<std::size_t>(((static_cast<long>(fl) % static_cast<long>(J)) + J) % J);
    return (values[(j0 + 1) % J] - values[j0]) * static_cast<double>(J);
  }

  Var apply(Var x) const {
    const Matrix& xv = x.value();
    Matrix out(xv.rows, 1);
    for (std::size_t r = 0; r < xv.rows; ++r) out.data[r] = (*this)(xv.data[r]);
    return x.tape().record("ring_density_table", std::move(out), {x}, [x, table = *this](Tape& t, std::uint32_t self) {
      Matrix* gx = t.grad_if(x);
      if (!gx) return;
      const Matrix& g = t.grad(self);
      for (std::size_t r = 0; r < g.rows; ++r) gx->data[r] += g.data[r] * table.slope(x.value().data[r]);
    });
  }
};

// The population law at one time step as seen by the coefficient functions:
// M' samples plus a density callback mu(x) (batched, M x 1).
struct MeasureSnapshot {
  Matrix samples;
  std::function<Var(Var)> density;

  double density_at(std::span<const double> x) const {
    Tape t;
    return density(t.constant(Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())))).scalar();
  }
};

using MeasurePath = std::vector<MeasureSnapshot>;  // steps 0..N

// Constant-density law, mainly for tests and control-rule checks.
inline MeasureSnapshot constant_measure(double mu, Matrix samples = {}) {
  return {std::move(samples), [mu](Var x) { return x.tape().constant(Matrix(x.rows(), 1, mu)); }};
}

inline RingDensityTable ring_table(const TimeIndexedFlow& flow, std::size_t n, std::size_t cells = kRingTableCells) {
  Matrix centres(cells, 1);
  for (std::size_t j = 0; j < cells; ++j) centres.data[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(cells);
  RingDensityTable table;
  table.values = flow.logprob_at_step(centres, n);
  for (double& v : table.values) v = std::exp(v);
  return table;
}

// Snapshots of the frozen flow at every step. Samples at all steps share the
// same base draws (stream key `key`).
inline MeasurePath measure_path(const TimeIndexedFlow& flow, std::size_t samples, const StreamKey& key) {
  auto frozen = std::make_shared<const TimeIndexedFlow>(flow);
  std::vector<Matrix> path = frozen->sample_path(samples, key);
  MeasurePath out(path.size());
  for (std::size_t n = 0; n < path.size(); ++n) {
    out[n].samples = std::move(path[n]);
    if (frozen->on_ring()) {
      out[n].density = [table = ring_table(*frozen, n)](Var x) { return table.apply(x); };
    } else {
      out[n].density = [frozen, n](Var x) {
        // the flow is frozen here: its parameters enter as constants
        return exp(frozen->logprob_at_step(x, n, frozen->params()));
      };
    }
  }
  return out;
}

}  // namespace nfmkv
