#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfmkv/diffcore/tape.hpp"
#include "nfmkv/random.hpp"

namespace nfmkv {

// Base (t = 0) density of a time-indexed flow. Ring kinds live on [0, 1).
class BaseDensity {
 public:
  struct Gaussian {
    std::vector<double> mean;
    std::vector<double> stddev;
  };
  struct WrappedMixture {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> stddevs;
  };
  // 1 + a sin(2 pi k x) on the ring.
  struct SineRing {
    double amplitude = 0.0;
    int frequency = 1;
  };
  struct UniformRing {};

  using Kind = std::variant<Gaussian, WrappedMixture, SineRing, UniformRing>;

  BaseDensity() : kind_(UniformRing{}) {}

  static BaseDensity gaussian(std::vector<double> mean, std::vector<double> stddev) {
    if (mean.empty() || mean.size() != stddev.size()) throw InvalidInput("gaussian base: mean/std size mismatch");
    for (double s : stddev)
      if (!(s > 0.0)) throw InvalidInput("gaussian base: standard deviations must be positive");
    return BaseDensity(Gaussian{std::move(mean), std::move(stddev)});
  }

  static BaseDensity wrapped_mixture(std::vector<double> weights, std::vector<double> means,
                                     std::vector<double> stddevs) {
    if (weights.empty() || weights.size() != means.size() || weights.size() != stddevs.size())
      throw InvalidInput("wrapped mixture: component arrays must be non-empty and equally sized");
    double total = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      if (!(weights[j] > 0.0) || !(stddevs[j] > 0.0))
        throw InvalidInput("wrapped mixture: weights and stddevs must be positive");
      total += weights[j];
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("wrapped mixture: weights must sum to 1 (density not normalized)");
    return BaseDensity(WrappedMixture{std::move(weights), std::move(means), std::move(stddevs)});
  }

  static BaseDensity sine_ring(double amplitude, int frequency) {
    if (!(std::abs(amplitude) < 1.0)) throw InvalidInput("sine ring density: |amplitude| must be < 1");
    if (frequency < 1) throw InvalidInput("sine ring density: frequency must be a positive integer");
    return BaseDensity(SineRing{amplitude, frequency});
  }

  static BaseDensity uniform_ring() { return BaseDensity(UniformRing{}); }

  const Kind& kind() const { return kind_; }

  std::size_t dim() const {
    if (auto g = std::get_if<Gaussian>(&kind_)) return g->mean.size();
    return 1;
  }
  bool on_ring() const { return !std::holds_alternative<Gaussian>(kind_); }

  double log_density(std::span<const double> x) const {
    double lp = 0.0, dummy = 0.0;
    eval(x, lp, std::span<double>(&dummy, 0));
    return lp;
  }

  void sample(Stream& s, std::span<double> out) const {
    std::visit(
        [&](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Gaussian>) {
            for (std::size_t i = 0; i < k.mean.size(); ++i) out[i] = k.mean[i] + k.stddev[i] * s.normal();
          } else if constexpr (std::is_same_v<T, WrappedMixture>) {
            const double u = s.uniform();
            std::size_t j = 0;
            double acc = k.weights[0];
            while (u > acc && j + 1 < k.weights.size()) acc += k.weights[++j];
            out[0] = wrap(k.means[j] + k.stddevs[j] * s.normal());
          } else if constexpr (std::is_same_v<T, SineRing>) {
            out[0] = sine_inverse_cdf(k, s.uniform());
          } else {
            out[0] = s.uniform();
          }
        },
        kind_);
  }

  // M samples; sample m is drawn from substream m of the key.
  Matrix sample(const StreamKey& key, std::size_t count, std::uint32_t sub = 0) const {
    Matrix out(count, dim());
    for (std::size_t m = 0; m < count; ++m) {
      Stream s = key.stream(m, sub);
      sample(s, out.row_span(m));
    }
    return out;
  }

  // Batched log-density on a tape, (M x d) -> (M x 1), differentiable in x.
  Var log_density(Var x) const {
    const Matrix& xv = x.value();
    if (xv.cols != dim()) throw InvalidInput("base log-density: dimension mismatch");
    Matrix out(xv.rows, 1);
    Matrix dx(xv.rows, xv.cols);
    for (std::size_t r = 0; r < xv.rows; ++r) eval(xv.row_span(r), out.data[r], dx.row_span(r));
    return x.tape().record("base_log_density", std::move(out), {x},
                           [x, dx = std::move(dx)](Tape& t, std::uint32_t self) {
                             Matrix* gx = t.grad_if(x);
                             if (!gx) return;
                             const Matrix& g = t.grad(self);
                             for (std::size_t r = 0; r < dx.rows; ++r)
                               for (std::size_t c = 0; c < dx.cols; ++c) (*gx)(r, c) += g.data[r] * dx(r, c);
                           });
  }

  nlohmann::json descriptor() const {
    return std::visit(
        [](const auto& k) -> nlohmann::json {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Gaussian>) {
            return {{"kind", "gaussian"}, {"mean", k.mean}, {"std", k.stddev}};
          } else if constexpr (std::is_same_v<T, WrappedMixture>) {
            return {{"kind", "wrapped_mixture"}, {"weights", k.weights}, {"means", k.means}, {"stds", k.stddevs}};
          } else if constexpr (std::is_same_v<T, SineRing>) {
            return {{"kind", "sine_ring"}, {"amplitude", k.amplitude}, {"frequency", k.frequency}};
          } else {
            return {{"kind", "uniform_ring"}};
          }
        },
        kind_);
  }

  static BaseDensity from_descriptor(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian") return gaussian(j.at("mean"), j.at("std"));
    if (kind == "wrapped_mixture") return wrapped_mixture(j.at("weights"), j.at("means"), j.at("stds"));
    if (kind == "sine_ring") return sine_ring(j.at("amplitude").get<double>(), j.at("frequency").get<int>());
    if (kind == "uniform_ring") return uniform_ring();
    throw InvalidInput("unknown base density kind '" + kind + "'");
  }

  static double wrap(double v) {
    double w = v - std::floor(v);
    return w >= 1.0 ? 0.0 : w;
  }

 private:
  explicit BaseDensity(Kind k) : kind_(std::move(k)) {}

  // Log-density and its gradient (gradient skipped when grad is empty).
  void eval(std::span<const double> x, double& lp, std::span<double> grad) const {
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    std::visit(
        [&](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Gaussian>) {
            lp = 0.0;
            for (std::size_t i = 0; i < k.mean.size(); ++i) {
              const double z = (x[i] - k.mean[i]) / k.stddev[i];
              lp += -0.5 * z * z - std::log(k.stddev[i]);
              if (!grad.empty()) grad[i] = -z / k.stddev[i];
            }
            lp -= 0.5 * static_cast<double>(k.mean.size()) * std::log(kTwoPi);
          } else if constexpr (std::is_same_v<T, WrappedMixture>) {
            double p = 0.0, dp = 0.0;
            for (std::size_t j = 0; j < k.weights.size(); ++j) {
              const int images = static_cast<int>(std::ceil(8.0 * k.stddevs[j])) + 2;
              for (int w = -images; w <= images; ++w) {
                const double z = (x[0] - k.means[j] + w) / k.stddevs[j];
                const double phi = k.weights[j] * std::exp(-0.5 * z * z) / (k.stddevs[j] * std::sqrt(kTwoPi));
                p += phi;
                dp += -phi * z / k.stddevs[j];
              }
            }
            lp = std::log(p);
            if (!grad.empty()) grad[0] = dp / p;
          } else if constexpr (std::is_same_v<T, SineRing>) {
            const double arg = kTwoPi * k.frequency * x[0];
            const double p = 1.0 + k.amplitude * std::sin(arg);
            lp = std::log(p);
            if (!grad.empty()) grad[0] = k.amplitude * kTwoPi * k.frequency * std::cos(arg) / p;
          } else {
            lp = 0.0;
            if (!grad.empty()) grad[0] = 0.0;
          }
        },
        kind_);
  }

  static double sine_inverse_cdf(const SineRing& k, double u) {
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    const double w = kTwoPi * k.frequency;
    auto cdf = [&](double x) { return x + k.amplitude * (1.0 - std::cos(w * x)) / w; };
    double lo = 0.0, hi = 1.0, x = u;
    for (int it = 0; it < 100; ++it) {
      const double f = cdf(x) - u;
      if (std::abs(f) < 1e-15) break;
      if (f > 0.0) hi = x; else lo = x;
      const double dens = 1.0 + k.amplitude * std::sin(w * x);
      double next = x - f / dens;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      x = next;
    }
    return wrap(x);
  }

  Kind kind_;
};

}  // namespace nfmkv
