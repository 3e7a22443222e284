#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "nfmkv/errors.hpp"
#include "nfmkv/flows/time_flow.hpp"
#include "nfmkv/random.hpp"

namespace nfmkv {

struct MeshSpec {
  std::size_t ring_cells = 512;
  std::size_t line_cells = 2000;
  std::size_t plane_cells = 200;  // per axis
  double box_std = 6.0;           // half-width of the euclidean box in sample std
  std::size_t box_samples = 4096;
  std::uint64_t seed = 0;
  double coverage_tol = 1e-6;
};

struct DensityIntegral {
  double integral = 0.0;
  double log_diff = 0.0;  // log10 |integral - 1|, floored at -16
  bool coverage_ok = true;
  std::string warning;
};

inline double log10_gap(double v) {
  const double gap = std::abs(v - 1.0);
  return gap > 0.0 ? std::max(std::log10(gap), -16.0) : -16.0;
}

namespace detail {

struct Box {
  std::vector<double> lo, hi;
};

inline Box sample_box(const Matrix& s, std::size_t dims, double half_width_std) {
  Box b;
  for (std::size_t k = 0; k < dims; ++k) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) mean += s(i, k);
    mean /= static_cast<double>(s.rows);
    for (std::size_t i = 0; i < s.rows; ++i) var += (s(i, k) - mean) * (s(i, k) - mean);
    double sd = std::sqrt(var / static_cast<double>(s.rows));
    // a point mass still gets a box of width one
    const double hw = sd > 0.0 ? half_width_std * sd : 0.5;
    b.lo.push_back(mean - hw);
    b.hi.push_back(mean + hw);
  }
  return b;
}

}  // namespace detail

// Quadrature of exp(logprob_at_step(n, .)) over the ring (midpoint rule) or a
// sample-derived box (trapezoid), d <= 2.
inline DensityIntegral density_integral(const TimeIndexedFlow& flow, std::size_t n, const MeshSpec& mesh = {}) {
  const std::size_t d = flow.dim();
  if (d > 2) throw InvalidInput("density_integral meshes d <= 2 only; use projected_density_2d");
  if (n > flow.steps()) throw InvalidInput("density_integral: step out of range");
  DensityIntegral out;
  if (flow.on_ring()) {
    const std::size_t K = mesh.ring_cells;
    Matrix x(K, 1);
    for (std::size_t j = 0; j < K; ++j) x.data[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(K);
    double acc = 0.0;
    for (double lp : flow.logprob_at_step(x, n)) acc += std::exp(lp);
    out.integral = acc / static_cast<double>(K);
    out.log_diff = log10_gap(out.integral);
    return out;
  }
  const Matrix samples = flow.sample_at_step(n, mesh.box_samples, StreamKey{mesh.seed, "mesh-box", n});
  const detail::Box box = detail::sample_box(samples, d, mesh.box_std);
  double boundary = 0.0;
  if (d == 1) {
    const std::size_t K = mesh.line_cells;
    const double h = (box.hi[0] - box.lo[0]) / static_cast<double>(K);
    Matrix x(K + 1, 1);
    for (std::size_t j = 0; j <= K; ++j) x.data[j] = box.lo[0] + h * static_cast<double>(j);
    const auto lp = flow.logprob_at_step(x, n);
    double acc = 0.0;
    for (std::size_t j = 0; j <= K; ++j) acc += (j == 0 || j == K ? 0.5 : 1.0) * std::exp(lp[j]);
    out.integral = acc * h;
    boundary = std::max(std::exp(lp.front()), std::exp(lp.back()));
  } else {
    const std::size_t K = mesh.plane_cells;
    const double hx = (box.hi[0] - box.lo[0]) / static_cast<double>(K);
    const double hy = (box.hi[1] - box.lo[1]) / static_cast<double>(K);
    double acc = 0.0;
    Matrix row(K + 1, 2);
    for (std::size_t i = 0; i <= K; ++i) {
      for (std::size_t j = 0; j <= K; ++j) {
        row(j, 0) = box.lo[0] + hx * static_cast<double>(i);
        row(j, 1) = box.lo[1] + hy * static_cast<double>(j);
      }
      const auto lp = flow.logprob_at_step(row, n);
      const double wi = (i == 0 || i == K) ? 0.5 : 1.0;
      for (std::size_t j = 0; j <= K; ++j) {
        const double v = std::exp(lp[j]);
        acc += wi * ((j == 0 || j == K) ? 0.5 : 1.0) * v;
        if (i == 0 || i == K || j == 0 || j == K) boundary = std::max(boundary, v);
      }
    }
    out.integral = acc * hx * hy;
  }
  out.log_diff = log10_gap(out.integral);
  if (boundary > mesh.coverage_tol) {
    out.coverage_ok = false;
    out.warning = "mesh coverage: boundary density " + std::to_string(boundary) + " exceeds " +
                  std::to_string(mesh.coverage_tol);
  }
  return out;
}

struct Histogram2d {
  std::size_t bins = 64;
  std::array<double, 2> lo{}, hi{};
  std::vector<double> raw;       // bins x bins density, row = first coordinate
  std::vector<double> smoothed;  // 3x3 box filter of raw, zero outside the grid
  double integral = 0.0;         // quadrature of the smoothed histogram
  double log_diff = 0.0;

  double cell_area() const {
    return (hi[0] - lo[0]) * (hi[1] - lo[1]) / static_cast<double>(bins * bins);
  }
};

// Density of the first two coordinates of a sample set (marginalizing the
// rest) on a bins x bins grid over mean +- box_std sample std.
inline Histogram2d projected_density_2d(const Matrix& samples, std::size_t bins = 64, double box_std = 6.0) {
  if (samples.cols < 2) throw InvalidInput("projected_density_2d: need at least two coordinates");
  if (samples.rows == 0) throw InvalidInput("projected_density_2d: no samples");
  if (bins < 3) throw InvalidInput("projected_density_2d: need at least 3 bins per axis");
  Histogram2d h;
  h.bins = bins;
  const detail::Box box = detail::sample_box(samples, 2, box_std);
  for (int k = 0; k < 2; ++k) {
    h.lo[k] = box.lo[k];
    h.hi[k] = box.hi[k];
  }
  h.raw.assign(bins * bins, 0.0);
  const double wx = (h.hi[0] - h.lo[0]) / static_cast<double>(bins);
  const double wy = (h.hi[1] - h.lo[1]) / static_cast<double>(bins);
  const double unit = 1.0 / (static_cast<double>(samples.rows) * wx * wy);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    const double fx = (samples(i, 0) - h.lo[0]) / wx, fy = (samples(i, 1) - h.lo[1]) / wy;
    if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(bins) && fy < static_cast<double>(bins))) continue;
    h.raw[static_cast<std::size_t>(fx) * bins + static_cast<std::size_t>(fy)] += unit;
  }
  h.smoothed.assign(bins * bins, 0.0);
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      double acc = 0.0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const long a = static_cast<long>(i) + di, b = static_cast<long>(j) + dj;
          if (a < 0 || b < 0 || a >= static_cast<long>(bins) || b >= static_cast<long>(bins)) continue;
          acc += h.raw[static_cast<std::size_t>(a) * bins + static_cast<std::size_t>(b)];
        }
      h.smoothed[i * bins + j] = acc / 9.0;
    }
  double acc = 0.0;
  for (double v : h.smoothed) acc += v;
  h.integral = acc * wx * wy;
  h.log_diff = log10_gap(h.integral);
  return h;
}

inline Histogram2d projected_density_2d(const TimeIndexedFlow& flow, std::size_t n, std::size_t M,
                                        const StreamKey& key) {
  if (flow.dim() <= 2) throw InvalidInput("projected_density_2d is for d > 2; mesh the density directly");
  if (M < 10000) throw InvalidInput("projected_density_2d needs at least 1e4 samples");
  return projected_density_2d(flow.sample_at_step(n, M, key));
}

}  // namespace nfmkv
