#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "nfmkv/diffcore/adam.hpp"
#include "nfmkv/flows/losses.hpp"
#include "nfmkv/problems/problem.hpp"
#include "nfmkv/sde/rollout.hpp"
#include "nfmkv/trainer/config.hpp"

namespace nfmkv {

struct OuterRecord {
  double l_mkv = 0.0;
  double l_dis = 0.0;
  double l_T = 0.0;

  double total() const { return l_mkv + l_dis + l_T; }
  friend bool operator==(const OuterRecord&, const OuterRecord&) = default;
};

// Everything needed to continue a run bitwise-identically.
struct TrainState {
  TimeIndexedFlow flow;
  ValueNets nets;
  AdamState adam_value;
  AdamState adam_flow;
  std::size_t outer = 0;
  std::uint64_t wiener_counter = 0;  // value epochs drawn so far
  std::uint64_t flow_counter = 0;    // flow epochs (incl. warm-up) drawn so far
  bool warmed_up = false;
  double warmup_initial_lT = 0.0;
  double warmup_final_lT = 0.0;
  std::vector<OuterRecord> history;
};

struct PhaseTiming {
  double value_seconds = 0.0;
  double flow_seconds = 0.0;
};

struct TrainReport {
  std::vector<OuterRecord> history;
  std::vector<PhaseTiming> timing;  // only for iterations run in this call
  std::vector<double> value_curve;  // l_MKV per value epoch (this call)
  std::vector<double> flow_curve;   // l_dis + l_T per flow epoch (this call)
  double warmup_initial_lT = 0.0;
  double warmup_final_lT = 0.0;
  bool converged = false;
};

// True iff the total loss varies by less than `tol` (relative) over the last
// `window` outer iterations.
inline bool converged(const std::vector<OuterRecord>& history, double tol, std::size_t window) {
  if (window < 2) throw InvalidInput("converged: window must be at least 2");
  if (history.size() < window) return false;
  double lo = history.back().total(), hi = lo;
  for (std::size_t i = history.size() - window; i < history.size(); ++i) {
    lo = std::min(lo, history[i].total());
    hi = std::max(hi, history[i].total());
  }
  const double scale = std::max(std::abs(history.back().total()), 1e-300);
  return (hi - lo) / scale < tol;
}

inline TrainState initial_state(const MfgProblem& p, const TrainConfig& c) {
  TrainState s;
  s.flow = TimeIndexedFlow(p.mu0, p.grid.N, c.seed, c.flow);
  s.nets = ValueNets(p.dim, p.grid.N, c.seed, c.value_net);
  return s;
}

inline TerminalFn terminal_for_flow(const MfgProblem& p) {
  return [&p](Var x) { return p.terminal(x, MeasureSnapshot{Matrix(1, p.dim), nullptr}); };
}

namespace detail {

inline MeasurePath phase_measures(const MfgProblem&, const TrainState& s, const TrainConfig& c) {
  return measure_path(s.flow, c.M_prime, StreamKey{c.seed, "measure", s.outer});
}

inline Matrix initial_states(const MfgProblem& p, std::size_t M, std::uint64_t seed, std::uint64_t counter) {
  return p.mu0.sample(StreamKey{seed, "x0", counter}, M);
}

}  // namespace detail

// One value epoch: fresh paths, l_MKV and its gradient in theta. Exposed for
// gradient checks.
inline Var value_loss_on_tape(Tape& t, const MfgProblem& p, const ValueNets& nets, const ParamStore& store,
                              const MeasurePath& mu, const WienerBatch& w, const Matrix& X0) {
  RolloutVars r = rollout_on_tape(t, p, nets, store, mu, w, X0, true);
  return mkv_loss(r.u.back(), r.X.back(), p, mu.back());
}

inline std::vector<double> train_value_phase(const MfgProblem& p, TrainState& s, const TrainConfig& c) {
  const MeasurePath mu = detail::phase_measures(p, s, c);
  AdamHyper hyper;
  hyper.lr = c.lr_value * std::pow(c.lr_decay, static_cast<double>(s.outer));
  std::vector<double> curve;
  for (std::size_t e = 0; e < c.value_epochs; ++e) {
    const std::uint64_t k = s.wiener_counter++;
    const WienerBatch w = gen_wiener(p.grid, c.M, p.dim, c.seed, k);
    const Matrix X0 = detail::initial_states(p, c.M, c.seed, k);
    Tape t(&s.nets.params());
    Var loss = value_loss_on_tape(t, p, s.nets, s.nets.params(), mu, w, X0);
    std::vector<double> g = t.gradient(loss);
    curve.push_back(loss.scalar());
    clip_grad_norm(g, c.grad_clip_value);
    adam_step(s.nets.params().values(), g, s.adam_value, hyper);
  }
  return curve;
}

// "Trace from MKV": a batch of forward paths under the frozen value nets and
// the density path frozen at phase start. `refresh` numbers the redraws
// within one flow phase.
inline TrajectoryBatch phase_trace(const MfgProblem& p, const TrainState& s, const TrainConfig& c,
                                   const MeasurePath& mu, std::uint64_t refresh = 0) {
  const std::uint64_t k = (static_cast<std::uint64_t>(s.outer) << 32) | refresh;
  const WienerBatch w = gen_wiener(p.grid, c.M, p.dim, c.seed ^ 0x7472616365ULL, k);
  const Matrix X0 = p.mu0.sample(StreamKey{c.seed, "trace-x0", k}, c.M);
  return simulate_forward(p, s.nets, mu, w, X0);
}

inline TrajectoryBatch phase_trace(const MfgProblem& p, const TrainState& s, const TrainConfig& c) {
  return phase_trace(p, s, c, detail::phase_measures(p, s, c));
}

struct FlowLosses {
  double l_dis = 0.0;
  double l_T = 0.0;
};

// Steps used for l_dis in flow epoch `counter`: all of 1..N, or a
// deterministic subset of size dis_step_batch.
inline std::vector<std::size_t> dis_steps(std::size_t N, std::size_t batch, std::uint64_t seed,
                                          std::uint64_t counter) {
  std::vector<std::size_t> all(N);
  std::iota(all.begin(), all.end(), std::size_t{1});
  if (batch == 0 || batch >= N) return all;
  Stream st = StreamKey{seed, "dis-steps", counter}.stream(0);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(st.uniform() * static_cast<double>(N - i));
    std::swap(all[i], all[std::min(j, N - 1)]);
  }
  all.resize(batch);
  std::sort(all.begin(), all.end());
  return all;
}

// Gradient of l_dis + l_T in the flow parameters. l_dis is accumulated one
// step at a time on separate tapes to bound memory.
inline FlowLosses flow_gradient(const MfgProblem& p, const TimeIndexedFlow& flow, const ParamStore& store,
                                const std::vector<Matrix>& states, const std::vector<std::size_t>& steps,
                                const Matrix* terminal_base, std::vector<double>& grad) {
  FlowLosses out;
  grad.assign(store.size(), 0.0);
  if (!steps.empty()) {
    const double w = 1.0 / static_cast<double>(steps.size());
    for (std::size_t n : steps) {
      Tape t(&store);
      Var l = dis_loss_step(t, flow, store, n, states[n]) * w;
      out.l_dis += l.scalar();
      t.backward(l, grad);
    }
  }
  if (terminal_base != nullptr && !p.terminal_is_zero) {
    Tape t(&store);
    Var l = terminal_loss(t, flow, store, terminal_for_flow(p), *terminal_base);
    out.l_T = l.scalar();
    t.backward(l, grad);
  }
  return out;
}

inline Matrix terminal_base_samples(const TimeIndexedFlow& flow, const TrainConfig& c, std::uint64_t counter) {
  return flow.base_samples(c.M, StreamKey{c.seed, "flow-terminal", counter});
}

// l_T-only pre-fit of the flow ("from mu_0 to mu_T") before the main loop.
inline void warm_up_flow(const MfgProblem& p, TrainState& s, const TrainConfig& c) {
  if (s.warmed_up) return;
  s.warmed_up = true;
  if (p.terminal_is_zero || c.warmup_steps == 0) return;
  AdamHyper hyper;
  hyper.lr = c.lr_flow;
  std::vector<double> g;
  for (std::size_t e = 0; e < c.warmup_steps; ++e) {
    const Matrix base = terminal_base_samples(s.flow, c, s.flow_counter++);
    FlowLosses l = flow_gradient(p, s.flow, s.flow.params(), {}, {}, &base, g);
    if (e == 0) s.warmup_initial_lT = l.l_T;
    adam_step(s.flow.params().values(), g, s.adam_flow, hyper);
  }
  // the main loop starts from a fresh optimizer state
  s.adam_flow = AdamState{};
  s.warmup_final_lT =
      terminal_loss(s.flow, terminal_for_flow(p), c.M, StreamKey{c.seed, "flow-terminal", s.flow_counter});
}

inline std::vector<FlowLosses> train_flow_phase(const MfgProblem& p, TrainState& s, const TrainConfig& c) {
  const MeasurePath mu = detail::phase_measures(p, s, c);
  TrajectoryBatch trace = phase_trace(p, s, c, mu);
  AdamHyper hyper;
  hyper.lr = c.lr_flow * std::pow(c.lr_decay, static_cast<double>(s.outer));
  std::vector<FlowLosses> curve;
  std::vector<double> g;
  for (std::size_t e = 0; e < c.flow_epochs; ++e) {
    if (c.trace_refresh > 0 && e > 0 && e % c.trace_refresh == 0) trace = phase_trace(p, s, c, mu, e / c.trace_refresh);
    const std::uint64_t k = s.flow_counter++;
    const auto steps = dis_steps(p.grid.N, c.dis_step_batch, c.seed, k);
    const Matrix base = terminal_base_samples(s.flow, c, k);
    curve.push_back(flow_gradient(p, s.flow, s.flow.params(), trace.X, steps, &base, g));
    clip_grad_norm(g, c.grad_clip_flow);
    adam_step(s.flow.params().values(), g, s.adam_flow, hyper);
  }
  return curve;
}

namespace detail {

template <class T, class F>
double tail_mean(const std::vector<T>& v, F get) {
  const std::size_t n = std::min<std::size_t>(v.size(), 10);
  double acc = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) acc += get(v[i]);
  return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace detail

using CheckpointHook = std::function<void(const TrainState&)>;

// Algorithm loop: value phase, then flow phase, until outer_iters or
// convergence. `after_iteration` runs after every completed outer iteration
// (checkpointing); `on_failure` gets the state when a phase throws.
inline TrainReport train(const MfgProblem& p, const TrainConfig& c, TrainState& s,
                         const CheckpointHook& after_iteration = {},
                         const std::function<std::string(const TrainState&)>& on_failure = {}) {
  c.validate();
  TrainReport rep;
  using clock = std::chrono::steady_clock;
  try {
    warm_up_flow(p, s, c);
    while (s.outer < c.outer_iters && !converged(s.history, c.conv_tol, c.conv_window)) {
      PhaseTiming tm;
      auto t0 = clock::now();
      const auto vcurve = train_value_phase(p, s, c);
      auto t1 = clock::now();
      const auto fcurve = train_flow_phase(p, s, c);
      auto t2 = clock::now();
      tm.value_seconds = std::chrono::duration<double>(t1 - t0).count();
      tm.flow_seconds = std::chrono::duration<double>(t2 - t1).count();
      OuterRecord rec;
      rec.l_mkv = detail::tail_mean(vcurve, [](double v) { return v; });
      rec.l_dis = detail::tail_mean(fcurve, [](const FlowLosses& l) { return l.l_dis; });
      rec.l_T = detail::tail_mean(fcurve, [](const FlowLosses& l) { return l.l_T; });
      s.history.push_back(rec);
      ++s.outer;
      rep.timing.push_back(tm);
      rep.value_curve.insert(rep.value_curve.end(), vcurve.begin(), vcurve.end());
      for (const auto& l : fcurve) rep.flow_curve.push_back(l.l_dis + l.l_T);
      if (after_iteration) after_iteration(s);
    }
  } catch (const Error& e) {
    const std::string path = on_failure ? on_failure(s) : std::string{};
    throw TrainingFailure(std::string("training failed at outer iteration ") + std::to_string(s.outer) + ": " +
                              e.what(),
                          path);
  }
  rep.history = s.history;
  rep.warmup_initial_lT = s.warmup_initial_lT;
  rep.warmup_final_lT = s.warmup_final_lT;
  rep.converged = converged(s.history, c.conv_tol, c.conv_window);
  return rep;
}

inline TrainReport train(const MfgProblem& p, const TrainConfig& c, TrainState* out_state = nullptr) {
  TrainState s = initial_state(p, c);
  TrainReport r = train(p, c, s);
  if (out_state) *out_state = std::move(s);
  return r;
}

}  // namespace nfmkv
