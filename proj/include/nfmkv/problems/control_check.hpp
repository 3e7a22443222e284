#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nfmkv/problems/problem.hpp"

namespace nfmkv {

struct ControlCheck {
  std::vector<double> closed_form;
  std::vector<double> brute_force;
  double deviation = 0.0;  // max-norm distance between the two
};

// Compares problem.optimal_control with a coarse-to-fine grid search of
// alpha -> f(t, x, mu, alpha) + b(t, x, mu, alpha) . zeta over [-range, range]^k.
// The final grid spacing is 5e-5.
inline ControlCheck check_control_rule(const MfgProblem& p, double t, std::span<const double> x,
                                       const MeasureSnapshot& mu, std::span<const double> zeta,
                                       double range = 5.0) {
  const std::size_t k = p.control_dim;
  if (k > 2) throw InvalidInput("check_control_rule: grid search supports 1-D and 2-D controls only");
  if (x.size() != p.dim || zeta.size() != p.dim) throw InvalidInput("check_control_rule: dimension mismatch");
  const Matrix xrow(1, x.size(), std::vector<double>(x.begin(), x.end()));
  const Matrix zrow(1, zeta.size(), std::vector<double>(zeta.begin(), zeta.end()));

  ControlCheck out;
  {
    Tape tape;
    out.closed_form = p.optimal_control(t, tape.constant(xrow), mu, tape.constant(zrow)).value().data;
  }

  auto objective = [&](const Matrix& alphas) {
    Tape tape;
    Matrix xs(alphas.rows, xrow.cols), zs(alphas.rows, zrow.cols);
    for (std::size_t r = 0; r < alphas.rows; ++r) {
      std::copy(xrow.data.begin(), xrow.data.end(), xs.row_span(r).begin());
      std::copy(zrow.data.begin(), zrow.data.end(), zs.row_span(r).begin());
    }
    Var xv = tape.constant(xs), a = tape.constant(alphas);
    Var val = p.running_cost(t, xv, mu, a) + dot_rows(p.drift(t, xv, mu, a), tape.constant(zs));
    return val.value().data;
  };

  std::vector<double> centre(k, 0.0);
  double step = 0.05;
  std::size_t half = static_cast<std::size_t>(std::ceil(range / step));
  for (int level = 0; level < 4; ++level) {
    const std::size_t side = 2 * half + 1;
    const std::size_t count = k == 1 ? side : side * side;
    Matrix alphas(count, k);
    for (std::size_t i = 0; i < count; ++i) {
      alphas(i, 0) = centre[0] + (static_cast<double>(i % side) - static_cast<double>(half)) * step;
      if (k == 2) alphas(i, 1) = centre[1] + (static_cast<double>(i / side) - static_cast<double>(half)) * step;
    }
    const auto vals = objective(alphas);
    const std::size_t best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    for (std::size_t c = 0; c < k; ++c) centre[c] = alphas(best, c);
    step /= 10.0;
    half = 20;
  }
  out.brute_force = centre;
  for (std::size_t c = 0; c < k; ++c)
    out.deviation = std::max(out.deviation, std::abs(out.brute_force[c] - out.closed_form[c]));
  return out;
}

}  // namespace nfmkv
