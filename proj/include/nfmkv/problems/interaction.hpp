#pragma once

#include <cmath>
#include <span>

#include "nfmkv/diffcore/tape.hpp"

namespace nfmkv {

// (1/M') sum_j exp(-|x - s_j|^2) for every row of x. Fused primitive; the
// per-row gradient is kept for the backward pass.
inline Var interaction_cost(Var x, const Matrix& samples) {
  const Matrix& xv = x.value();
  if (samples.rows == 0) throw InvalidInput("interaction_cost: need at least one sample");
  if (samples.cols != xv.cols) throw InvalidInput("interaction_cost: dimension mismatch");
  const std::size_t d = xv.cols;
  const double inv = 1.0 / static_cast<double>(samples.rows);
  Matrix out(xv.rows, 1);
  Matrix dx(xv.rows, d);
  std::vector<double> diff(d);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < samples.rows; ++j) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        diff[c] = xv(r, c) - samples(j, c);
        r2 += diff[c] * diff[c];
      }
      const double k = std::exp(-r2);
      acc += k;
      for (std::size_t c = 0; c < d; ++c) dx(r, c) -= 2.0 * diff[c] * k;
    }
    out.data[r] = acc * inv;
    for (std::size_t c = 0; c < d; ++c) dx(r, c) *= inv;
  }
  return x.tape().record("interaction_cost", std::move(out), {x}, [x, dx = std::move(dx)](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    for (std::size_t r = 0; r < dx.rows; ++r)
      for (std::size_t c = 0; c < dx.cols; ++c) (*gx)(r, c) += g.data[r] * dx(r, c);
  });
}

inline double interaction_cost(std::span<const double> x, const Matrix& samples) {
  Tape t;
  return interaction_cost(t.constant(Matrix(1, x.size(), std::vector<double>(x.begin(), x.end()))), samples).scalar();
}

}  // namespace nfmkv
