#pragma once

#include <functional>
#include <vector>

#include "nfmkv/flows/time_flow.hpp"

namespace nfmkv {

// Batched terminal value function g(x, mu_T) on a tape: (M x d) -> (M x 1).
using TerminalFn = std::function<Var(Var)>;

// -mean_m log mu_{t_n}(X_n^m) for a single step; the building block of l_dis.
inline Var dis_loss_step(Tape& t, const TimeIndexedFlow& flow, const ParamStore& store, std::size_t n,
                         const Matrix& states) {
  return -mean(flow.logprob_at_step(t.constant(states), n, store));
}

// l_dis = -(1/(N M)) sum_n sum_m log mu_{t_n}(X_n^m); states[n] holds step n
// for n = 1..N (states[0] is ignored).
inline Var dis_loss(Tape& t, const TimeIndexedFlow& flow, const ParamStore& store, const std::vector<Matrix>& states) {
  const std::size_t N = flow.steps();
  if (states.size() != N + 1) throw InvalidInput("dis_loss: expected states for steps 0..N");
  Var total;
  for (std::size_t n = 1; n <= N; ++n) {
    Var term = dis_loss_step(t, flow, store, n, states[n]);
    total = total.valid() ? total + term : term;
  }
  return total * (1.0 / static_cast<double>(N));
}

inline double dis_loss(const TimeIndexedFlow& flow, const std::vector<Matrix>& states) {
  Tape t;
  return dis_loss(t, flow, flow.params(), states).scalar();
}

// l_T = (1/M) sum_i |g(x_i)|^2 with x_i pushed through the full flow.
inline Var terminal_loss(Tape& t, const TimeIndexedFlow& flow, const ParamStore& store, const TerminalFn& g,
                         const Matrix& base_samples) {
  Var xT = flow.push_forward(t.constant(base_samples), flow.steps(), store);
  if (flow.on_ring()) xT = wrap_unit(xT);
  return mean(square(g(xT)));
}

inline double terminal_loss(const TimeIndexedFlow& flow, const TerminalFn& g, std::size_t count,
                            const StreamKey& key) {
  Tape t;
  return terminal_loss(t, flow, flow.params(), g, flow.base_samples(count, key)).scalar();
}

}  // namespace nfmkv
