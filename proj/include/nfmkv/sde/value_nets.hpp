#pragma once

#include <string>
#include <vector>

#include "nfmkv/diffcore/mlp.hpp"

namespace nfmkv {

struct ValueNetOptions {
  std::vector<std::size_t> u0_hidden{32, 32};
  std::vector<std::size_t> z_hidden{32};
  Activation activation = Activation::tanh;
  double z_output_gain = 1.0;
};

// u(0, .) and one adjoint net Z_n(.) = [d_x u(., t_n)]^T sigma per step n < N.
class ValueNets {
 public:
  ValueNets() = default;

  ValueNets(std::size_t d, std::size_t steps, std::uint64_t seed, ValueNetOptions opt = {}) : dim_(d), opt_(opt) {
    if (d == 0 || steps == 0) throw InvalidInput("value nets need d >= 1 and at least one step");
    std::vector<std::size_t> w{d};
    w.insert(w.end(), opt.u0_hidden.begin(), opt.u0_hidden.end());
    w.push_back(1);
    u0_ = Mlp(params_, "u0", {w, opt.activation});
    u0_.initialize(params_, seed);
    for (std::size_t n = 0; n < steps; ++n) {
      std::vector<std::size_t> zw{d};
      zw.insert(zw.end(), opt.z_hidden.begin(), opt.z_hidden.end());
      zw.push_back(d);
      z_.emplace_back(params_, "z" + std::to_string(n), MlpSpec{zw, opt.activation});
      z_.back().initialize(params_, seed, opt.z_output_gain);
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t steps() const { return z_.size(); }
  const Mlp& u0() const { return u0_; }
  const Mlp& z(std::size_t n) const { return z_.at(n); }
  const ValueNetOptions& options() const { return opt_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  std::size_t dim_ = 0;
  ValueNetOptions opt_;
  ParamStore params_;
  Mlp u0_;
  std::vector<Mlp> z_;
};

}  // namespace nfmkv
