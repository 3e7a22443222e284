#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nfmkv/errors.hpp"

namespace nfmkv {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Rescales grads so their Euclidean norm is at most max_norm. Returns the
// norm before clipping. max_norm <= 0 leaves grads alone.
inline double clip_grad_norm(std::span<double> grads, double max_norm) {
  double peak = 0.0;
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("clip_grad_norm: non-finite gradient");
    peak = std::max(peak, std::abs(g));
  }
  if (peak == 0.0) return 0.0;
  double acc = 0.0;
  for (double g : grads) acc += (g / peak) * (g / peak);
  const double norm = peak * std::sqrt(acc);
  if (max_norm > 0.0 && norm > max_norm)
    for (double& g : grads) g *= max_norm / norm;
  return norm;
}

// One bias-corrected Adam update, in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamHyper& hyper) {
  if (grads.size() != params.size()) throw InvalidInput("adam_step: gradient length does not match parameters");
  if (state.step == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw InvalidInput("adam_step: optimizer state length mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

}  // namespace nfmkv
