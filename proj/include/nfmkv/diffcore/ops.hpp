#pragma once

// Registered differentiable primitives. Each one computes its value eagerly
// and records a closure that pushes the upstream gradient to its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nfmkv/diffcore/tape.hpp"

namespace nfmkv {

namespace detail {

inline std::size_t bcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw InvalidInput(std::string("shape mismatch in '") + op + "'");
}

// Sum a full-size gradient down to a (possibly broadcast) operand shape.
inline void reduce_into(Matrix& target, const Matrix& full, double sign = 1.0) {
  if (target.same_shape(full)) {
    for (std::size_t i = 0; i < full.size(); ++i) target.data[i] += sign * full.data[i];
    return;
  }
  for (std::size_t r = 0; r < full.rows; ++r) {
    const std::size_t tr = target.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < full.cols; ++c) {
      const std::size_t tc = target.cols == 1 ? 0 : c;
      target(tr, tc) += sign * full(r, c);
    }
  }
}

enum class BinOp { add, sub, mul, div };

inline Var binary(BinOp kind, Var a, Var b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul", "div"};
  const char* name = kNames[static_cast<int>(kind)];
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const std::size_t rows = bcast_dim(av.rows, bv.rows, name);
  const std::size_t cols = bcast_dim(av.cols, bv.cols, name);
  Matrix out(rows, cols);
  const bool same = av.same_shape(bv) && av.rows == rows && av.cols == cols;
  auto at = [](const Matrix& m, std::size_t r, std::size_t c) {
    return m(m.rows == 1 ? 0 : r, m.cols == 1 ? 0 : c);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double x = same ? av.data[i] : at(av, r, c);
      const double y = same ? bv.data[i] : at(bv, r, c);
      double v = 0.0;
      switch (kind) {
        case BinOp::add: v = x + y; break;
        case BinOp::sub: v = x - y; break;
        case BinOp::mul: v = x * y; break;
        case BinOp::div: v = x / y; break;
      }
      out.data[i] = v;
    }
  }
  return a.tape().record(name, std::move(out), {a, b}, [a, b, kind, at](Tape& t, std::uint32_t self) {
    const Matrix& g = t.grad(self);
    Matrix* ga = t.grad_if(a);
    Matrix* gb = t.grad_if(b);
    if (kind == BinOp::add || kind == BinOp::sub) {
      if (ga) reduce_into(*ga, g);
      if (gb) reduce_into(*gb, g, kind == BinOp::add ? 1.0 : -1.0);
      return;
    }
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix da(g.rows, g.cols), db(g.rows, g.cols);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        const double x = at(av, r, c);
        const double y = at(bv, r, c);
        const double gi = g(r, c);
        if (kind == BinOp::mul) {
          da(r, c) = gi * y;
          db(r, c) = gi * x;
        } else {
          da(r, c) = gi / y;
          db(r, c) = -gi * x / (y * y);
        }
      }
    }
    if (ga) reduce_into(*ga, da);
    if (gb) reduce_into(*gb, db);
  });
}

// Elementwise unary primitive; dfdx receives (x, y).
template <class F, class D>
Var unary(const char* name, Var x, F f, D dfdx) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows, xv.cols);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
  return x.tape().record(name, std::move(out), {x}, [x, dfdx](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    const Matrix& xv = x.value();
    const Matrix& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i] * dfdx(xv.data[i], yv.data[i]);
  });
}

}  // namespace detail

inline Var operator+(Var a, Var b) { return detail::binary(detail::BinOp::add, a, b); }
inline Var operator-(Var a, Var b) { return detail::binary(detail::BinOp::sub, a, b); }
inline Var operator*(Var a, Var b) { return detail::binary(detail::BinOp::mul, a, b); }
inline Var operator/(Var a, Var b) { return detail::binary(detail::BinOp::div, a, b); }

inline Var scale(Var x, double c) {
  return detail::unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}
inline Var shift(Var x, double c) {
  return detail::unary("shift", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}
inline Var operator*(Var x, double c) { return scale(x, c); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator+(Var x, double c) { return shift(x, c); }
inline Var operator+(double c, Var x) { return shift(x, c); }
inline Var operator-(Var x, double c) { return shift(x, -c); }
inline Var operator-(double c, Var x) { return shift(scale(x, -1.0), c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

inline Var tanh(Var x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}
inline Var relu(Var x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}
inline Var exp(Var x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
inline Var log(Var x) {
  return detail::unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
inline Var sqrt(Var x) {
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return 0.5 / y; });
}
inline Var square(Var x) {
  return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
// c * tanh(x / c): smooth clamp to (-c, c).
inline Var soft_clamp(Var x, double c) {
  return detail::unary("soft_clamp", x, [c](double v) { return c * std::tanh(v / c); },
                       [c](double, double y) { return 1.0 - (y / c) * (y / c); });
}

// Row-wise sum: (M x C) -> (M x 1).
inline Var sum_cols(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows, 1);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols; ++c) s += xv(r, c);
    out.data[r] = s;
  }
  return x.tape().record("sum_cols", std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    for (std::size_t r = 0; r < gx->rows; ++r)
      for (std::size_t c = 0; c < gx->cols; ++c) (*gx)(r, c) += g.data[r];
  });
}

// Full reduction in fixed left-to-right order.
inline Var sum(Var x) {
  const Matrix& xv = x.value();
  double s = 0.0;
  for (double v : xv.data) s += v;
  return x.tape().record("sum", Matrix::scalar(s), {x}, [x](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const double g = t.grad(self).data[0];
    for (double& v : gx->data) v += g;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw InvalidInput("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

// Row-wise dot product of two equally shaped tensors: (M x C) -> (M x 1).
inline Var dot_rows(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw InvalidInput("shape mismatch in 'dot_rows'");
  return sum_cols(a * b);
}

// x W^T + b with x (M x in), W (out x in), b (1 x out). An optional 0/1 mask
// (out x in) zeroes connections; masked weights receive zero gradient.
inline Var affine(Var x, Var w, Var b, const Matrix* mask = nullptr) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols != wv.cols || bv.size() != wv.rows)
    throw InvalidInput("dimension mismatch in 'affine': input width " + std::to_string(xv.cols) +
                       ", weight " + std::to_string(wv.rows) + "x" + std::to_string(wv.cols));
  if (mask && !mask->same_shape(wv)) throw InvalidInput("mask shape mismatch in 'affine'");
  Matrix weff = wv;
  if (mask)
    for (std::size_t i = 0; i < weff.size(); ++i) weff.data[i] *= mask->data[i];
  const std::size_t m = xv.rows, in = xv.cols, out = wv.rows;
  Matrix y(m, out);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = &xv.data[r * in];
    double* yr = &y.data[r * out];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &weff.data[o * in];
      double s = bv.data[o];
      for (std::size_t k = 0; k < in; ++k) s += wr[k] * xr[k];
      yr[o] = s;
    }
  }
  return x.tape().record(
      "affine", std::move(y), {x, w, b},
      [x, w, b, mask_copy = mask ? *mask : Matrix(), weff = std::move(weff)](Tape& t, std::uint32_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& xv = x.value();
        const std::size_t m = xv.rows, in = xv.cols, out = g.cols;
        if (Matrix* gx = t.grad_if(x)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t o = 0; o < out; ++o) {
              const double go = g.data[r * out + o];
              if (go == 0.0) continue;
              const double* wr = &weff.data[o * in];
              for (std::size_t k = 0; k < in; ++k) gx->data[r * in + k] += go * wr[k];
            }
        }
        if (Matrix* gw = t.grad_if(w)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t o = 0; o < out; ++o) {
              const double go = g.data[r * out + o];
              if (go == 0.0) continue;
              const double* xr = &xv.data[r * in];
              for (std::size_t k = 0; k < in; ++k) gw->data[o * in + k] += go * xr[k];
            }
          if (mask_copy.size() != 0)
            for (std::size_t i = 0; i < gw->size(); ++i) gw->data[i] *= mask_copy.data[i];
        }
        if (Matrix* gb = t.grad_if(b)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t o = 0; o < out; ++o) gb->data[o] += g.data[r * out + o];
        }
      });
}

// Columns [first, first + count).
inline Var cols(Var x, std::size_t first, std::size_t count) {
  const Matrix& xv = x.value();
  if (first + count > xv.cols) throw InvalidInput("column range out of bounds");
  Matrix out(xv.rows, count);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, first + c);
  return x.tape().record("cols", std::move(out), {x}, [x, first](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) (*gx)(r, first + c) += g(r, c);
  });
}
inline Var col(Var x, std::size_t j) { return cols(x, j, 1); }

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InvalidInput("row mismatch in 'concat_cols'");
    total += p.cols();
  }
  Matrix out(rows, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols; ++c) out(r, off + c) = pv(r, c);
    off += pv.cols;
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().record("concat_cols", std::move(out), parts, [keep](Tape& t, std::uint32_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : keep) {
      const std::size_t pc = p.cols();
      if (Matrix* gp = t.grad_if(p)) {
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) (*gp)(r, c) += g(r, off + c);
      }
      off += pc;
    }
  });
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

// out(:, j) = x(:, perm[j]).
inline Var permute_cols(Var x, const std::vector<std::size_t>& perm) {
  const Matrix& xv = x.value();
  if (perm.size() != xv.cols) throw InvalidInput("permutation size mismatch");
  Matrix out(xv.rows, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) out(r, c) = xv(r, perm[c]);
  return x.tape().record("permute_cols", std::move(out), {x}, [x, perm](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) (*gx)(r, perm[c]) += g(r, c);
  });
}

// Inclusive prefix sum of a row vector (1 x K).
inline Var cumsum(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows != 1) throw InvalidInput("cumsum expects a row vector");
  Matrix out(1, xv.cols);
  double s = 0.0;
  for (std::size_t c = 0; c < xv.cols; ++c) out.data[c] = (s += xv.data[c]);
  return x.tape().record("cumsum", std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    double acc = 0.0;
    for (std::size_t c = g.cols; c-- > 0;) {
      acc += g.data[c];
      gx->data[c] += acc;
    }
  });
}

// Softmax over the columns of a row vector.
inline Var softmax_row(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows != 1) throw InvalidInput("softmax_row expects a row vector");
  const double mx = *std::max_element(xv.data.begin(), xv.data.end());
  Var e = exp(x - mx);
  return e / sum(e);
}

// Reduce a matrix to its column means: (M x C) -> (1 x C).
inline Var mean_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(1, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) out.data[c] += xv(r, c);
  const double inv = 1.0 / static_cast<double>(xv.rows);
  for (double& v : out.data) v *= inv;
  return x.tape().record("mean_rows", std::move(out), {x}, [x, inv](Tape& t, std::uint32_t self) {
    Matrix* gx = t.grad_if(x);
    if (!gx) return;
    const Matrix& g = t.grad(self);
    for (std::size_t r = 0; r < gx->rows; ++r)
      for (std::size_t c = 0; c < gx->cols; ++c) (*gx)(r, c) += g.data[c] * inv;
  });
}

// Reduce mod 1 into [0, 1); derivative one almost everywhere.
inline Var wrap_unit(Var x) {
  return detail::unary(
      "wrap_unit", x,
      [](double v) {
        double w = v - std::floor(v);
        return w >= 1.0 ? 0.0 : w;
      },
      [](double, double) { return 1.0; });
}

}  // namespace nfmkv
