#pragma once

#include <cmath>
#include <vector>

#include "nfmkv/problems/problem.hpp"
#include "nfmkv/sde/value_nets.hpp"
#include "nfmkv/sde/wiener.hpp"

namespace nfmkv {

inline constexpr double kDivergenceBound = 1e6;

// Simulated paths: X[n] (M x d) for n = 0..N; the rest per step n < N
// except u, which also has N + 1 entries.
struct TrajectoryBatch {
  std::vector<Matrix> X;
  std::vector<Matrix> u;
  std::vector<Matrix> Z;
  std::vector<Matrix> alpha;
  std::vector<Matrix> running;  // f(t_n, X_n, mu_n, alpha_n), M x 1
  WienerBatch wiener;

  std::size_t samples() const { return X.empty() ? 0 : X.front().rows; }
  std::size_t steps() const { return X.empty() ? 0 : X.size() - 1; }
};

// The same quantities as tape nodes, so losses can be differentiated.
struct RolloutVars {
  std::vector<Var> X, u, Z, alpha, running;
};

namespace detail {

inline void guard_states(const Matrix& x, std::size_t step) {
  for (std::size_t m = 0; m < x.rows; ++m) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double v = x(m, c);
      if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) throw DivergedSimulation(step, m, std::abs(v));
    }
  }
}

inline std::size_t largest_row(const Matrix& x) {
  std::size_t best = 0;
  double worst = -1.0;
  for (std::size_t m = 0; m < x.rows; ++m)
    for (std::size_t c = 0; c < x.cols; ++c)
      if (std::abs(x(m, c)) > worst) {
        worst = std::abs(x(m, c));
        best = m;
      }
  return best;
}

}  // namespace detail

// Euler-Maruyama forward simulation with the control read off the adjoint
// nets, and (when `with_value`) the chained value rollout
//   u_{n+1} = u_n - f dt + Z_n . dW_n,  u_0 = u0_net(X_0).
// States stay differentiable in the value-net parameters.
inline RolloutVars rollout_on_tape(Tape& t, const MfgProblem& p, const ValueNets& nets, const ParamStore& store,
                                   const MeasurePath& mu, const WienerBatch& w, const Matrix& X0,
                                   bool with_value = true) {
  const std::size_t N = p.grid.N;
  if (nets.dim() != p.dim || nets.steps() != N) throw InvalidInput("value nets do not match the problem");
  if (mu.size() != N + 1) throw InvalidInput("measure path must cover steps 0..N");
  if (w.steps() != N || w.samples() != X0.rows) throw InvalidInput("Wiener batch does not match the grid");
  if (X0.cols != p.dim) throw InvalidInput("initial states have the wrong dimension");
  const double dt = p.grid.dt();
  const double inv_sigma = p.sigma != 0.0 ? 1.0 / p.sigma : 0.0;
  RolloutVars r;
  detail::guard_states(X0, 0);
  r.X.push_back(t.constant(X0));
  if (with_value) r.u.push_back(nets.u0().apply(r.X[0], store));
  for (std::size_t n = 0; n < N; ++n) {
    const double tn = p.grid.t(n);
    try {
      Var x = r.X[n];
      Var z = nets.z(n).apply(x, store);
      Var alpha = p.optimal_control(tn, x, mu[n], z * inv_sigma);
      Var drift = p.drift(tn, x, mu[n], alpha);
      Var dW = t.constant(w.dW[n]);
      Var next = x + drift * dt;
      if (p.sigma != 0.0) next = next + dW * p.sigma;
      if (p.on_ring()) next = wrap_unit(next);
      detail::guard_states(next.value(), n + 1);
      r.X.push_back(next);
      r.Z.push_back(z);
      r.alpha.push_back(alpha);
      if (with_value) {
        Var f = p.running_cost(tn, x, mu[n], alpha);
        r.running.push_back(f);
        r.u.push_back(r.u[n] - f * dt + dot_rows(z, dW));
      }
    } catch (const DivergedSimulation&) {
      throw;
    } catch (const NumericError&) {
      const std::size_t m = detail::largest_row(r.X[n].value());
      throw DivergedSimulation(n + 1, m, std::numeric_limits<double>::infinity());
    }
  }
  return r;
}

inline TrajectoryBatch to_batch(const RolloutVars& r, const WienerBatch& w) {
  TrajectoryBatch b;
  for (const Var& v : r.X) b.X.push_back(v.value());
  for (const Var& v : r.u) b.u.push_back(v.value());
  for (const Var& v : r.Z) b.Z.push_back(v.value());
  for (const Var& v : r.alpha) b.alpha.push_back(v.value());
  for (const Var& v : r.running) b.running.push_back(v.value());
  b.wiener = w;
  return b;
}

// Forward states only (no value rollout).
inline TrajectoryBatch simulate_forward(const MfgProblem& p, const ValueNets& nets, const MeasurePath& mu,
                                        const WienerBatch& w, const Matrix& X0) {
  Tape t;
  return to_batch(rollout_on_tape(t, p, nets, nets.params(), mu, w, X0, false), w);
}

// Fills the value path of a simulated batch and returns u_T per sample.
inline std::vector<double> rollout_value(const MfgProblem& p, const ValueNets& nets, TrajectoryBatch& traj,
                                         const MeasurePath& mu) {
  const std::size_t N = p.grid.N;
  if (traj.steps() != N) throw InvalidInput("trajectory does not match the grid");
  const double dt = p.grid.dt();
  Tape t;
  traj.u.clear();
  traj.running.clear();
  traj.u.push_back(nets.u0().apply(t.constant(traj.X[0]), nets.params()).value());
  for (std::size_t n = 0; n < N; ++n) {
    Var x = t.constant(traj.X[n]);
    Var f = p.running_cost(p.grid.t(n), x, mu[n], t.constant(traj.alpha[n]));
    Var z = nets.z(n).apply(x, nets.params());
    Var next = t.constant(traj.u[n]) - f * dt + dot_rows(z, t.constant(traj.wiener.dW[n]));
    traj.running.push_back(f.value());
    traj.u.push_back(next.value());
  }
  return traj.u.back().data;
}

// l_MKV = (1/M) sum_i |u_T,i - g(X_T,i, mu_T)|^2.
inline Var mkv_loss(Var uT, Var XT, const MfgProblem& p, const MeasureSnapshot& muT) {
  return mean(square(uT - p.terminal(XT, muT)));
}

inline double mkv_loss(std::span<const double> uT, const Matrix& XT, const MfgProblem& p,
                       const MeasureSnapshot& muT) {
  if (uT.size() != XT.rows) throw InvalidInput("mkv_loss: sample count mismatch");
  Tape t;
  return mkv_loss(t.constant(Matrix(uT.size(), 1, std::vector<double>(uT.begin(), uT.end()))), t.constant(XT), p, muT)
      .scalar();
}

}  // namespace nfmkv
