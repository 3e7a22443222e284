#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nfmkv/flows/base_density.hpp"
#include "nfmkv/flows/blocks.hpp"

namespace nfmkv {

struct FlowOptions {
  std::size_t blocks_per_step = 2;  // (permute, maf) pairs per step, euclidean only
  std::size_t hidden = 32;
  std::size_t spline_bins = 16;
  double output_gain = 0.0;  // 0 makes every block start as the identity
};

// Normalizing flow whose block prefix through step n pushes the base density
// to the step-n marginal. Each step owns an unshared group of blocks.
class TimeIndexedFlow {
 public:
  TimeIndexedFlow() = default;

  TimeIndexedFlow(BaseDensity base, std::size_t steps, std::uint64_t seed, FlowOptions opt = {})
      : base_(std::move(base)), steps_(steps), opt_(opt) {
    if (steps_ == 0) throw InvalidInput("flow needs at least one step");
    const std::size_t d = base_.dim();
    std::vector<std::size_t> reverse(d);
    for (std::size_t i = 0; i < d; ++i) reverse[i] = d - 1 - i;
    groups_.resize(steps_);
    for (std::size_t n = 0; n < steps_; ++n) {
      const std::string prefix = "flow.s" + std::to_string(n);
      if (base_.on_ring()) {
        if (d != 1) throw InvalidInput("ring flows are one-dimensional");
        groups_[n].push_back(SplineBlock::create(params_, prefix + ".rqs", opt_.spline_bins));
      } else {
        for (std::size_t b = 0; b < opt_.blocks_per_step; ++b) {
          const std::string name = prefix + ".maf" + std::to_string(b);
          groups_[n].push_back(PermuteBlock{reverse});
          MafBlock maf = MafBlock::create(params_, name, d, opt_.hidden);
          maf.initialize(params_, seed, name, opt_.output_gain);
          groups_[n].push_back(std::move(maf));
        }
      }
    }
  }

  const BaseDensity& base() const { return base_; }
  std::size_t steps() const { return steps_; }
  std::size_t dim() const { return base_.dim(); }
  bool on_ring() const { return base_.on_ring(); }
  const FlowOptions& options() const { return opt_; }
  const std::vector<FlowBlock>& group(std::size_t n) const { return groups_.at(n); }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Maps base-space points through groups [0, n).
  Var push_forward(Var x, std::size_t n, const ParamStore& store) const {
    check_step(n);
    for (std::size_t g = 0; g < n; ++g)
      for (const FlowBlock& b : groups_[g]) x = block_forward(b, store, x).y;
    return x;
  }

  // log mu_{t_n}(x) for a batch of points (M x d) -> (M x 1).
  Var logprob_at_step(Var x, std::size_t n, const ParamStore& store) const {
    check_step(n);
    check_domain(x.value());
    Var acc;
    for (std::size_t g = n; g-- > 0;) {
      for (auto it = groups_[g].rbegin(); it != groups_[g].rend(); ++it) {
        if (std::holds_alternative<PermuteBlock>(*it)) {
          x = block_inverse(*it, store, x).y;
          continue;
        }
        BlockResult r = block_inverse(*it, store, x);
        x = r.y;
        acc = acc.valid() ? acc + r.logdet : r.logdet;
      }
    }
    Var lp = base_.log_density(x);
    return acc.valid() ? lp + acc : lp;
  }

  // No-gradient evaluation: walks each point through the prefix without a tape.
  std::vector<double> logprob_at_step(const Matrix& x, std::size_t n) const {
    check_step(n);
    check_domain(x);
    std::vector<PreparedInverse> chain;
    for (std::size_t g = n; g-- > 0;)
      for (auto it = groups_[g].rbegin(); it != groups_[g].rend(); ++it)
        chain.push_back(PreparedInverse::from(*it, params_));
    const std::size_t d = dim();
    std::size_t scratch = 2 * d;
    for (const auto& p : chain) scratch = std::max(scratch, 2 * d + p.hidden);
    std::vector<double> buf(d + scratch);
    std::vector<double> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
      double* y = buf.data();
      std::copy_n(&x.data[r * d], d, y);
      double acc = 0.0;
      bool any = false;
      for (const auto& p : chain) {
        const double ld = p.apply(y, y + d);
        if (p.kind == PreparedInverse::Kind::permute) continue;
        acc = any ? acc + ld : ld;
        any = true;
      }
      const double lp = base_.log_density(std::span<const double>(y, d));
      out[r] = any ? lp + acc : lp;
    }
    return out;
  }

  double logprob_at_step(std::size_t n, std::span<const double> x) const {
    return logprob_at_step(Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), n).front();
  }

  Matrix base_samples(std::size_t count, const StreamKey& key, std::uint32_t sub = 0) const {
    if (count == 0) throw InvalidInput("sample count must be at least 1");
    return base_.sample(key, count, sub);
  }

  Matrix sample_at_step(std::size_t n, std::size_t count, const StreamKey& key, std::uint32_t sub = 0) const {
    Tape t;
    return push_forward(t.constant(base_samples(count, key, sub)), n, params_).value();
  }

  // Samples at every step 0..N from one set of base draws.
  std::vector<Matrix> sample_path(std::size_t count, const StreamKey& key, std::uint32_t sub = 0) const {
    Tape t;
    Var x = t.constant(base_samples(count, key, sub));
    std::vector<Matrix> out;
    out.reserve(steps_ + 1);
    out.push_back(x.value());
    for (std::size_t g = 0; g < steps_; ++g) {
      for (const FlowBlock& b : groups_[g]) x = block_forward(b, params_, x).y;
      out.push_back(x.value());
      x = t.constant(x.value());
    }
    return out;
  }

 private:
  void check_step(std::size_t n) const {
    if (n > steps_) throw InvalidInput("flow step " + std::to_string(n) + " out of range");
  }

  void check_domain(const Matrix& x) const {
    if (x.cols != dim()) throw InvalidInput("flow: dimension mismatch");
    if (!on_ring()) return;
    for (double v : x.data)
      if (!(v >= 0.0 && v < 1.0)) throw InvalidInput("ring sample outside [0, 1): " + std::to_string(v));
  }

  BaseDensity base_ = BaseDensity::uniform_ring();
  std::size_t steps_ = 0;
  FlowOptions opt_;
  ParamStore params_;
  std::vector<std::vector<FlowBlock>> groups_;
};

}  // namespace nfmkv
