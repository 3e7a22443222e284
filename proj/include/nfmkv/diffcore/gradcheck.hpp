#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nfmkv/diffcore/tape.hpp"

namespace nfmkv {

// A scalar loss written against a tape whose trainable store is `params`.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

struct GradResult {
  double loss = 0.0;
  std::vector<double> gradient;
};

inline GradResult grad(const LossFn& loss_fn, const ParamStore& params) {
  Tape tape(&params);
  Var loss = loss_fn(tape, params);
  if (loss.value().size() != 1) throw InvalidInput("grad: loss must be scalar");
  GradResult r;
  r.loss = loss.scalar();
  r.gradient = tape.gradient(loss);
  return r;
}

inline double eval_loss(const LossFn& loss_fn, const ParamStore& params) {
  Tape tape;
  return loss_fn(tape, params).scalar();
}

// max_i |grad_i - fd_i| / max(1, |fd_i|) with central differences.
inline double fd_check(const LossFn& loss_fn, const ParamStore& params, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("fd_check: eps must be positive");
  const std::vector<double> g = grad(loss_fn, params).gradient;
  ParamStore probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + eps;
    const double up = eval_loss(loss_fn, probe);
    probe.values()[i] = orig - eps;
    const double down = eval_loss(loss_fn, probe);
    probe.values()[i] = orig;
    const double fd = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace nfmkv
