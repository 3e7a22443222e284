#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfmkv/diffcore/ops.hpp"
#include "nfmkv/diffcore/param_store.hpp"
#include "nfmkv/random.hpp"

namespace nfmkv {

enum class Activation { tanh, relu };

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation activation = Activation::tanh;
};

// Dense feedforward network whose weights live in a ParamStore segment pair
// per layer ("<name>.W<i>" as out x in, "<name>.b<i>").
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParamStore& store, const std::string& name, MlpSpec spec) : name_(name), spec_(std::move(spec)) {
    if (spec_.widths.size() < 2) throw InvalidInput("an Mlp needs at least input and output widths");
    for (std::size_t w : spec_.widths)
      if (w == 0) throw InvalidInput("Mlp widths must be positive");
    for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i) {
      Layer l;
      l.in = spec_.widths[i];
      l.out = spec_.widths[i + 1];
      l.weight = store.add(name + ".W" + std::to_string(i), l.in * l.out);
      l.bias = store.add(name + ".b" + std::to_string(i), l.out);
      layers_.push_back(l);
    }
  }

  std::size_t input_width() const { return spec_.widths.front(); }
  std::size_t output_width() const { return spec_.widths.back(); }
  const MlpSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += (l.in + 1) * l.out;
    return n;
  }

  // Batched forward on a tape: x is (M x input_width).
  Var apply(Var x, const ParamStore& store) const {
    if (x.cols() != input_width())
      throw InvalidInput("Mlp '" + name_ + "' expects input width " + std::to_string(input_width()) + ", got " +
                         std::to_string(x.cols()));
    Tape& t = x.tape();
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      h = affine(h, t.param(store, l.weight, l.out, l.in), t.param(store, l.bias, 1, l.out));
      if (i + 1 < layers_.size()) h = spec_.activation == Activation::tanh ? tanh(h) : relu(h);
    }
    return h;
  }

  // Plain evaluation of a single input vector.
  std::vector<double> forward(const ParamStore& store, std::span<const double> x) const {
    if (x.size() != input_width())
      throw InvalidInput("Mlp '" + name_ + "' expects input width " + std::to_string(input_width()) + ", got " +
                         std::to_string(x.size()));
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      auto w = store.view(l.weight);
      auto b = store.view(l.bias);
      std::vector<double> next(l.out);
      for (std::size_t o = 0; o < l.out; ++o) {
        double s = b[o];
        for (std::size_t k = 0; k < l.in; ++k) s += w[o * l.in + k] * h[k];
        if (i + 1 < layers_.size()) s = spec_.activation == Activation::tanh ? std::tanh(s) : (s > 0.0 ? s : 0.0);
        next[o] = s;
      }
      h = std::move(next);
    }
    return h;
  }

  // Glorot-uniform weights, zero biases. Each layer draws from its own
  // stream keyed by the segment offset, so the result depends only on seed.
  // `last_layer_gain` scales the output layer (0 gives an all-zero output).
  void initialize(ParamStore& store, std::uint64_t seed, double last_layer_gain = 1.0) const {
    const StreamKey key{seed, "init"};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
      const double gain = (i + 1 == layers_.size()) ? last_layer_gain : 1.0;
      Stream s = key.stream(l.weight.offset, static_cast<std::uint32_t>(hash_tag(name_)));
      for (double& w : store.view(l.weight)) w = gain * bound * (2.0 * s.uniform() - 1.0);
      for (double& b : store.view(l.bias)) b = 0.0;
    }
  }

  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    ParamStore::Segment weight;
    ParamStore::Segment bias;
  };
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::string name_;
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

inline std::vector<double> mlp_forward(const Mlp& net, const ParamStore& store, std::span<const double> x) {
  return net.forward(store, x);
}

}  // namespace nfmkv
