#pragma once

#include <string>
#include <vector>

#include "nfmkv/diffcore/gradcheck.hpp"
#include "nfmkv/flows/blocks.hpp"
#include "nfmkv/flows/losses.hpp"
#include "nfmkv/problems/catalog.hpp"
#include "nfmkv/trainer/trainer.hpp"

namespace nfmkv {

struct RoundTripCheck {
  std::string kind;
  double max_error = 0.0;       // max |inverse(forward(x)) - x|
  double max_logdet_sum = 0.0;  // max |logdet_fwd + logdet_inv|
};

namespace detail {

inline void perturb(ParamStore& s, std::uint64_t seed, double scale) {
  Stream st = StreamKey{seed, "probe-perturb"}.stream(0);
  for (double& v : s.values()) v = scale * st.normal();
}

inline RoundTripCheck round_trip_check(const std::string& kind, const FlowBlock& block, const ParamStore& store,
                                       const Matrix& x, bool ring) {
  Tape t;
  BlockResult f = block_forward(block, store, t.constant(x));
  BlockResult b = block_inverse(block, store, t.constant(f.y.value()));
  RoundTripCheck r{kind};
  for (std::size_t i = 0; i < x.size(); ++i) {
    double e = std::abs(b.y.value().data[i] - x.data[i]);
    if (ring) e = std::min(e, 1.0 - e);
    r.max_error = std::max(r.max_error, e);
  }
  for (std::size_t m = 0; m < x.rows; ++m)
    r.max_logdet_sum = std::max(r.max_logdet_sum, std::abs(f.logdet.value().data[m] + b.logdet.value().data[m]));
  return r;
}

}  // namespace detail

// 1000 random points through each block kind with perturbed parameters.
inline std::vector<RoundTripCheck> flow_roundtrip_check(std::uint64_t seed, std::size_t points = 1000) {
  std::vector<RoundTripCheck> out;
  Stream st = StreamKey{seed, "probe-points"}.stream(0);
  Matrix xe(points, 3), xr(points, 1);
  for (double& v : xe.data) v = 2.0 * st.normal();
  for (double& v : xr.data) v = st.uniform();
  {
    ParamStore s;
    out.push_back(detail::round_trip_check("permute", PermuteBlock{{2, 0, 1}}, s, xe, false));
  }
  {
    ParamStore s;
    MafBlock maf = MafBlock::create(s, "maf", 3, 32);
    detail::perturb(s, seed, 0.4);
    out.push_back(detail::round_trip_check("maf", maf, s, xe, false));
  }
  {
    ParamStore s;
    SplineBlock rqs = SplineBlock::create(s, "rqs", 16);
    detail::perturb(s, seed + 1, 0.8);
    out.push_back(detail::round_trip_check("circular_spline", rqs, s, xr, true));
  }
  return out;
}

struct GradCheck {
  double l_mkv = 0.0;
  double l_dis = 0.0;
  double l_T = 0.0;
  double worst() const { return std::max({l_mkv, l_dis, l_T}); }
};

// Finite-difference audit of the three training losses on a tiny crowd
// problem (d = 2, N = 5, M = 16) with perturbed networks.
inline GradCheck grad_check(std::uint64_t seed, double eps = 1e-5) {
  const MfgProblem p = make_crowd_motion(2, {0.5, 0.0}, 0.5, TimeGrid(1.0, 5),
                                         BaseDensity::gaussian({-0.5, 0.0}, {0.3, 0.3}));
  TrainConfig c;
  c.M = 16;
  c.M_prime = 16;
  c.seed = seed;
  c.flow.hidden = 8;
  c.value_net.u0_hidden = {8, 8};
  c.value_net.z_hidden = {8};
  TrainState s = initial_state(p, c);
  detail::perturb(s.nets.params(), seed + 2, 0.1);
  detail::perturb(s.flow.params(), seed + 3, 0.1);
  GradCheck r;
  const MeasurePath mu = measure_path(s.flow, c.M_prime, StreamKey{seed, "probe-measure"});
  const WienerBatch w = gen_wiener(p.grid, c.M, p.dim, seed, 0);
  const Matrix X0 = p.mu0.sample(StreamKey{seed, "probe-x0"}, c.M);
  LossFn mkv = [&](Tape& t, const ParamStore& store) { return value_loss_on_tape(t, p, s.nets, store, mu, w, X0); };
  r.l_mkv = fd_check(mkv, s.nets.params(), eps);
  const TrajectoryBatch trace = simulate_forward(p, s.nets, mu, w, X0);
  LossFn dis = [&](Tape& t, const ParamStore& store) { return dis_loss(t, s.flow, store, trace.X); };
  r.l_dis = fd_check(dis, s.flow.params(), eps);
  const Matrix base = s.flow.base_samples(c.M, StreamKey{seed, "probe-base"});
  const TerminalFn g = terminal_for_flow(p);
  LossFn lt = [&](Tape& t, const ParamStore& store) { return terminal_loss(t, s.flow, store, g, base); };
  r.l_T = fd_check(lt, s.flow.params(), eps);
  return r;
}

}  // namespace nfmkv
