#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nfmkv/diffcore/mlp.hpp"
#include "nfmkv/diffcore/ops.hpp"
#include "nfmkv/flows/dual.hpp"

namespace nfmkv {

inline constexpr double kMafLogScaleBound = 5.0;
inline constexpr double kSplineMinBin = 1e-3;
inline constexpr double kSplineLogSlopeBound = 5.0;

// y_j = x_{perm[j]}.
struct PermuteBlock {
  std::vector<std::size_t> perm;

  std::vector<std::size_t> inverse() const {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j) inv[perm[j]] = j;
    return inv;
  }
};

// Masked autoregressive affine block. A single MADE conditioner with one
// hidden layer produces shift m_i and raw log-scale r_i from y_{<i}:
//   y_i = x_i * exp(s_i) + m_i,  s_i = 5 tanh(r_i / 5).
// The density direction (inverse) is parallel; sampling is sequential.
struct MafBlock {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  ParamStore::Segment w1, b1, w2, b2;  // w1: hidden x dim, w2: 2 dim x hidden
  Matrix mask1;                        // hidden x dim
  Matrix mask2;                        // 2 dim x hidden

  static MafBlock create(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden) {
    MafBlock b;
    b.dim = dim;
    b.hidden = hidden;
    b.w1 = store.add(name + ".W0", hidden * dim);
    b.b1 = store.add(name + ".b0", hidden);
    b.w2 = store.add(name + ".W1", 2 * dim * hidden);
    b.b2 = store.add(name + ".b1", 2 * dim);
    b.mask1 = Matrix(hidden, dim);
    b.mask2 = Matrix(2 * dim, hidden);
    const std::size_t span = dim > 1 ? dim - 1 : 1;
    for (std::size_t k = 0; k < hidden; ++k) {
      const std::size_t degree = 1 + k % span;  // hidden unit sees inputs 0..degree-1
      for (std::size_t j = 0; j < dim; ++j) b.mask1(k, j) = (j + 1 <= degree) ? 1.0 : 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double ok = (degree <= i) ? 1.0 : 0.0;
        b.mask2(i, k) = ok;
        b.mask2(dim + i, k) = ok;
      }
    }
    return b;
  }

  // Glorot first layer; output layer scaled by `output_gain` (0 = identity block).
  void initialize(ParamStore& store, std::uint64_t seed, const std::string& name, double output_gain) const {
    const StreamKey key{seed, "init"};
    Stream s = key.stream(w1.offset, static_cast<std::uint32_t>(hash_tag(name)));
    const double bound1 = std::sqrt(6.0 / static_cast<double>(dim + hidden));
    for (double& w : store.view(w1)) w = bound1 * (2.0 * s.uniform() - 1.0);
    const double bound2 = output_gain * std::sqrt(6.0 / static_cast<double>(hidden + 2 * dim));
    for (double& w : store.view(w2)) w = bound2 * (2.0 * s.uniform() - 1.0);
    for (double& b : store.view(b1)) b = 0.0;
    for (double& b : store.view(b2)) b = 0.0;
  }
};

// Circular rational-quadratic spline on [0, 1) with K bins. Knot slopes are
// shared between the two endpoints so the map is C^1 on the circle.
struct SplineBlock {
  std::size_t bins = 16;
  ParamStore::Segment raw_widths, raw_heights, raw_slopes;

  static SplineBlock create(ParamStore& store, const std::string& name, std::size_t bins) {
    SplineBlock b;
    b.bins = bins;
    b.raw_widths = store.add(name + ".widths", bins);
    b.raw_heights = store.add(name + ".heights", bins);
    b.raw_slopes = store.add(name + ".slopes", bins);
    return b;
  }
};

using FlowBlock = std::variant<PermuteBlock, MafBlock, SplineBlock>;

struct BlockResult {
  Var y;
  Var logdet;  // M x 1
};

namespace detail {

inline Matrix masked(const Matrix& w, const Matrix& mask) {
  Matrix r = w;
  for (std::size_t i = 0; i < r.size(); ++i) r.data[i] *= mask.data[i];
  return r;
}

// Sequential (sampling-direction) MAF pass as one fused primitive with a
// hand-derived adjoint. Output is M x (dim + 1): y then log|det|.
inline Var maf_sample_pass(const MafBlock& blk, Var x, Var w1, Var b1, Var w2, Var b2) {
  const std::size_t d = blk.dim, H = blk.hidden, M = x.rows();
  const Matrix W1 = masked(w1.value(), blk.mask1);
  const Matrix W2 = masked(w2.value(), blk.mask2);
  const Matrix& B1 = b1.value();
  const Matrix& B2 = b2.value();
  const Matrix& X = x.value();
  // hidden unit k becomes final once y_0..y_{degree_k - 1} are known
  std::vector<std::vector<std::size_t>> ready(d + 1);
  for (std::size_t k = 0; k < H; ++k) {
    std::size_t deg = 0;
    for (std::size_t j = 0; j < d; ++j)
      if (blk.mask1(k, j) != 0.0) deg = j + 1;
    ready[deg].push_back(k);
  }
  Matrix out(M, d + 1);
  Matrix hid(M, H);
  Matrix logscale(M, d);
  std::vector<double> a(H);
  for (std::size_t r = 0; r < M; ++r) {
    for (std::size_t k = 0; k < H; ++k) a[k] = B1.data[k];
    double* h = &hid.data[r * H];
    for (std::size_t k : ready[0]) h[k] = std::tanh(a[k]);
    double ld = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double m = B2.data[i], raw = B2.data[d + i];
      for (std::size_t k = 0; k < H; ++k) {
        m += W2(i, k) * h[k];
        raw += W2(d + i, k) * h[k];
      }
      const double ls = kMafLogScaleBound * std::tanh(raw / kMafLogScaleBound);
      const double yi = X(r, i) * std::exp(ls) + m;
      out(r, i) = yi;
      logscale(r, i) = ls;
      ld += ls;
      for (std::size_t k = 0; k < H; ++k) a[k] += W1(k, i) * yi;
      for (std::size_t k : ready[i + 1]) h[k] = std::tanh(a[k]);
    }
    out(r, d) = ld;
  }
  return x.tape().record(
      "maf_sample_pass", std::move(out), {x, w1, b1, w2, b2},
      [blk_mask1 = blk.mask1, blk_mask2 = blk.mask2, d, H, x, w1, b1, w2, b2, W1, W2, hid = std::move(hid),
       logscale = std::move(logscale)](Tape& t, std::uint32_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& Y = t.value(self);
        const Matrix& X = x.value();
        Matrix* gx = t.grad_if(x);
        Matrix* gw1 = t.grad_if(w1);
        Matrix* gb1 = t.grad_if(b1);
        Matrix* gw2 = t.grad_if(w2);
        Matrix* gb2 = t.grad_if(b2);
        std::vector<double> da(H);
        // unmasked accumulators; the masks are applied once at the end
        Matrix acc_w1(H, d), acc_w2(2 * d, H);
        Matrix W1t(d, H);
        for (std::size_t k = 0; k < H; ++k)
          for (std::size_t j = 0; j < d; ++j) W1t(j, k) = W1(k, j);
        for (std::size_t r = 0; r < X.rows; ++r) {
          std::fill(da.begin(), da.end(), 0.0);
          const double* h = &hid.data[r * H];
          const double gl = g(r, d);
          for (std::size_t i = d; i-- > 0;) {
            double abar = g(r, i);
            const double* w1i = &W1t.data[i * H];
            for (std::size_t k = 0; k < H; ++k) abar += w1i[k] * da[k];
            const double ls = logscale(r, i);
            const double e = std::exp(ls);
            if (gx) (*gx)(r, i) += abar * e;
            const double gls = abar * X(r, i) * e + gl;
            const double q = ls / kMafLogScaleBound;
            const double graw = gls * (1.0 - q * q);
            const double gm = abar;
            if (gb2) {
              gb2->data[i] += gm;
              gb2->data[d + i] += graw;
            }
            const double* wm = &W2.data[i * H];
            const double* wr = &W2.data[(d + i) * H];
            double* am = &acc_w2.data[i * H];
            double* ar = &acc_w2.data[(d + i) * H];
            for (std::size_t k = 0; k < H; ++k) {
              am[k] += gm * h[k];
              ar[k] += graw * h[k];
              da[k] += (gm * wm[k] + graw * wr[k]) * (1.0 - h[k] * h[k]);
            }
          }
          if (gb1)
            for (std::size_t k = 0; k < H; ++k) gb1->data[k] += da[k];
          const double* yr = &Y.data[r * (d + 1)];
          for (std::size_t k = 0; k < H; ++k) {
            double* aw = &acc_w1.data[k * d];
            for (std::size_t j = 0; j < d; ++j) aw[j] += da[k] * yr[j];
          }
        }
        if (gw1)
          for (std::size_t i = 0; i < acc_w1.size(); ++i) gw1->data[i] += acc_w1.data[i] * blk_mask1.data[i];
        if (gw2)
          for (std::size_t i = 0; i < acc_w2.size(); ++i) gw2->data[i] += acc_w2.data[i] * blk_mask2.data[i];
      });
}

// One row of the density direction. Writes x (d), log-scales (d) and hidden
// activations (H); returns log|det|. W1, W2 already masked.
inline double maf_density_row(std::size_t d, std::size_t H, const Matrix& W1, const Matrix& W2, const Matrix& B1,
                              const Matrix& B2, const double* yr, double* xr, double* ls_out, double* h) {
  for (std::size_t k = 0; k < H; ++k) {
    double a = B1.data[k];
    const double* wk = &W1.data[k * d];
    for (std::size_t j = 0; j < d; ++j) a += wk[j] * yr[j];
    h[k] = std::tanh(a);
  }
  double ld = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double m = B2.data[i], raw = B2.data[d + i];
    const double* wm = &W2.data[i * H];
    const double* wr = &W2.data[(d + i) * H];
    for (std::size_t k = 0; k < H; ++k) {
      m += wm[k] * h[k];
      raw += wr[k] * h[k];
    }
    const double ls = kMafLogScaleBound * std::tanh(raw / kMafLogScaleBound);
    ls_out[i] = ls;
    xr[i] = (yr[i] - m) * std::exp(-ls);
    ld -= ls;
  }
  return ld;
}

// Parallel (density-direction) MAF pass as one fused primitive:
//   x = (y - m(y)) exp(-s(y)),  log|det| = -sum_i s_i.
// Output is M x (dim + 1).
inline Var maf_density_pass(const MafBlock& blk, Var y, Var w1, Var b1, Var w2, Var b2) {
  const std::size_t d = blk.dim, H = blk.hidden, M = y.rows();
  const Matrix W1 = masked(w1.value(), blk.mask1);
  const Matrix W2 = masked(w2.value(), blk.mask2);
  const Matrix& B1 = b1.value();
  const Matrix& B2 = b2.value();
  const Matrix& Y = y.value();
  Matrix out(M, d + 1);
  Matrix hid(M, H);
  Matrix logscale(M, d);
  for (std::size_t r = 0; r < M; ++r)
    out(r, d) = maf_density_row(d, H, W1, W2, B1, B2, &Y.data[r * d], &out.data[r * (d + 1)], &logscale.data[r * d],
                                &hid.data[r * H]);
  return y.tape().record(
      "maf_density_pass", std::move(out), {y, w1, b1, w2, b2},
      [mask1 = blk.mask1, mask2 = blk.mask2, d, H, y, w1, b1, w2, b2, W1, W2, hid = std::move(hid),
       logscale = std::move(logscale)](Tape& t, std::uint32_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& X = t.value(self);
        const Matrix& Y = y.value();
        Matrix* gy = t.grad_if(y);
        Matrix* gw1 = t.grad_if(w1);
        Matrix* gb1 = t.grad_if(b1);
        Matrix* gw2 = t.grad_if(w2);
        Matrix* gb2 = t.grad_if(b2);
        std::vector<double> gh(H), gm(d), graw(d);
        for (std::size_t r = 0; r < Y.rows; ++r) {
          const double* h = &hid.data[r * H];
          const double gl = g(r, d);
          for (std::size_t i = 0; i < d; ++i) {
            const double ls = logscale(r, i);
            const double e = std::exp(-ls);
            const double gx = g(r, i);
            if (gy) (*gy)(r, i) += gx * e;
            gm[i] = -gx * e;
            // d x_i / d s_i = -x_i, d logdet / d s_i = -1
            const double gls = -gx * X(r, i) - gl;
            const double q = ls / kMafLogScaleBound;
            graw[i] = gls * (1.0 - q * q);
          }
          std::fill(gh.begin(), gh.end(), 0.0);
          for (std::size_t i = 0; i < d; ++i) {
            const double* wm = &W2.data[i * H];
            const double* wr = &W2.data[(d + i) * H];
            for (std::size_t k = 0; k < H; ++k) gh[k] += gm[i] * wm[k] + graw[i] * wr[k];
            if (gw2) {
              double* gwm = &gw2->data[i * H];
              double* gwr = &gw2->data[(d + i) * H];
              for (std::size_t k = 0; k < H; ++k) {
                gwm[k] += gm[i] * h[k] * mask2(i, k);
                gwr[k] += graw[i] * h[k] * mask2(d + i, k);
              }
            }
            if (gb2) {
              gb2->data[i] += gm[i];
              gb2->data[d + i] += graw[i];
            }
          }
          const double* yr = &Y.data[r * d];
          for (std::size_t k = 0; k < H; ++k) {
            const double da = gh[k] * (1.0 - h[k] * h[k]);
            if (da == 0.0) continue;
            if (gb1) gb1->data[k] += da;
            if (gw1)
              for (std::size_t j = 0; j < d; ++j) gw1->data[k * d + j] += da * yr[j] * mask1(k, j);
            if (gy)
              for (std::size_t j = 0; j < d; ++j) gy->data[r * d + j] += da * W1.data[k * d + j];
          }
        }
      });
}

// Rational-quadratic bin map. Returns (output, log|d output / d input|).
template <class T>
std::pair<T, T> rq_bin_forward(const T& x, const T& x0, const T& x1, const T& y0, const T& y1, const T& d0,
                               const T& d1) {
  using std::log;
  const T w = x1 - x0;
  const T h = y1 - y0;
  const T s = h / w;
  const T xi = (x - x0) / w;
  const T om = xi * (1.0 - xi);
  const T den = s + (d0 + d1 - 2.0 * s) * om;
  const T y = y0 + h * (s * xi * xi + d0 * om) / den;
  const T num = s * s * (d1 * xi * xi + 2.0 * s * om + d0 * (1.0 - xi) * (1.0 - xi));
  return {y, log(num) - 2.0 * log(den)};
}

template <class T>
std::pair<T, T> rq_bin_inverse(const T& y, const T& x0, const T& x1, const T& y0, const T& y1, const T& d0,
                               const T& d1) {
  using std::log;
  using std::sqrt;
  const T w = x1 - x0;
  const T h = y1 - y0;
  const T s = h / w;
  const T dy = y - y0;
  const T c2 = d0 + d1 - 2.0 * s;
  const T qa = h * (s - d0) + dy * c2;
  const T qb = h * d0 - dy * c2;
  const T qc = -s * dy;
  T disc = qb * qb - 4.0 * qa * qc;
  if (value_of(disc) < 0.0) disc = T(0.0) * disc;
  const T xi = (2.0 * qc) / (-qb - sqrt(disc));
  const T x = x0 + xi * w;
  // log-det of the inverse is minus the forward log-det at x
  const T om = xi * (1.0 - xi);
  const T den = s + c2 * om;
  const T num = s * s * (d1 * xi * xi + 2.0 * s * om + d0 * (1.0 - xi) * (1.0 - xi));
  return {x, 2.0 * log(den) - log(num)};
}

// Index of the bin containing v: largest k < K with knots[k] <= v.
inline std::size_t find_bin(const Matrix& knots, double v) {
  const std::size_t K = knots.cols - 1;
  std::size_t lo = 0, hi = K;  // invariant: knots[lo] <= v < knots[hi] (knots[K] taken as 1)
  int iterations = 0;
  while (hi - lo > 1) {
    if (++iterations > 100) throw NumericError("circular spline: bin bisection failed to converge in 100 iterations");
    const std::size_t mid = (lo + hi) / 2;
    if (knots.data[mid] <= v) lo = mid; else hi = mid;
  }
  return lo;
}

// Spline map of one coordinate; also reports the bin used.
inline std::pair<double, double> rq_spline_point(const Matrix& XK, const Matrix& YK, const Matrix& S, double in,
                                                 bool inverse, std::size_t& bin) {
  const std::size_t K = S.cols;
  if (!(in >= -1e-12 && in <= 1.0 + 1e-12))
    throw InvalidInput("circular spline input outside [0, 1): " + std::to_string(in));
  const std::size_t k = find_bin(inverse ? YK : XK, in);
  bin = k;
  const double x1 = (k + 1 == K) ? 1.0 : XK.data[k + 1];
  const double y1 = (k + 1 == K) ? 1.0 : YK.data[k + 1];
  const double d1 = S.data[(k + 1) % K];
  auto [o, ld] = inverse ? rq_bin_inverse<double>(in, XK.data[k], x1, YK.data[k], y1, S.data[k], d1)
                         : rq_bin_forward<double>(in, XK.data[k], x1, YK.data[k], y1, S.data[k], d1);
  if (o >= 1.0) o -= 1.0;
  if (o < 0.0) o = 0.0;
  return {o, ld};
}

// Fused spline evaluation. xk, yk: 1 x (K+1) knot positions, slopes: 1 x K
// (slope K equals slope 0). Output M x 2: value, log|det|.
inline Var rq_spline_pass(Var v, Var xk, Var yk, Var slopes, bool inverse) {
  const Matrix& V = v.value();
  if (V.cols != 1) throw InvalidInput("circular spline expects a single coordinate");
  const Matrix& XK = xk.value();
  const Matrix& YK = yk.value();
  const Matrix& S = slopes.value();
  const std::size_t M = V.rows;
  Matrix out(M, 2);
  std::vector<std::size_t> bin(M);
  for (std::size_t r = 0; r < M; ++r) {
    auto [o, ld] = rq_spline_point(XK, YK, S, V.data[r], inverse, bin[r]);
    out(r, 0) = o;
    out(r, 1) = ld;
  }
  return v.tape().record(
      "rq_spline", std::move(out), {v, xk, yk, slopes},
      [v, xk, yk, slopes, inverse, bin = std::move(bin)](Tape& t, std::uint32_t self) {
        using D = Dual<7>;
        const Matrix& g = t.grad(self);
        const Matrix& V = v.value();
        const Matrix& XK = xk.value();
        const Matrix& YK = yk.value();
        const Matrix& S = slopes.value();
        const std::size_t K = S.cols;
        Matrix* gv = t.grad_if(v);
        Matrix* gxk = t.grad_if(xk);
        Matrix* gyk = t.grad_if(yk);
        Matrix* gs = t.grad_if(slopes);
        for (std::size_t r = 0; r < V.rows; ++r) {
          const std::size_t k = bin[r];
          const bool last = (k + 1 == K);
          const D in = D::variable(V.data[r], 0);
          const D x0 = D::variable(XK.data[k], 1);
          const D x1 = last ? D(1.0) : D::variable(XK.data[k + 1], 2);
          const D y0 = D::variable(YK.data[k], 3);
          const D y1 = last ? D(1.0) : D::variable(YK.data[k + 1], 4);
          const D d0 = D::variable(S.data[k], 5);
          const D d1 = D::variable(S.data[(k + 1) % K], 6);
          auto [o, ld] = inverse ? rq_bin_inverse<D>(in, x0, x1, y0, y1, d0, d1)
                                 : rq_bin_forward<D>(in, x0, x1, y0, y1, d0, d1);
          const double go = g(r, 0), gl = g(r, 1);
          auto part = [&](std::size_t i) { return go * o.d[i] + gl * ld.d[i]; };
          if (gv) gv->data[r] += part(0);
          if (gxk) {
            gxk->data[k] += part(1);
            if (!last) gxk->data[k + 1] += part(2);
          }
          if (gyk) {
            gyk->data[k] += part(3);
            if (!last) gyk->data[k + 1] += part(4);
          }
          if (gs) {
            gs->data[k] += part(5);
            gs->data[(k + 1) % K] += part(6);
          }
        }
      });
}

struct SplineKnots {
  Var xk, yk, slopes;
};

inline SplineKnots spline_knots(Tape& t, const SplineBlock& blk, const ParamStore& store) {
  const std::size_t K = blk.bins;
  const double span = 1.0 - static_cast<double>(K) * kSplineMinBin;
  Var zero = t.constant(Matrix(1, 1, 0.0));
  Var w = softmax_row(t.param(store, blk.raw_widths, 1, K)) * span + kSplineMinBin;
  Var h = softmax_row(t.param(store, blk.raw_heights, 1, K)) * span + kSplineMinBin;
  Var xk = concat_cols({zero, cumsum(w)});
  Var yk = concat_cols({zero, cumsum(h)});
  Var slopes = exp(soft_clamp(t.param(store, blk.raw_slopes, 1, K), kSplineLogSlopeBound));
  return {xk, yk, slopes};
}

}  // namespace detail

inline BlockResult block_forward(const FlowBlock& block, const ParamStore& store, Var x) {
  Tape& t = x.tape();
  return std::visit(
      [&](const auto& blk) -> BlockResult {
        using T = std::decay_t<decltype(blk)>;
        if constexpr (std::is_same_v<T, PermuteBlock>) {
          return {permute_cols(x, blk.perm), t.constant(Matrix(x.rows(), 1))};
        } else if constexpr (std::is_same_v<T, MafBlock>) {
          if (x.cols() != blk.dim) throw InvalidInput("maf block: dimension mismatch");
          Var out = detail::maf_sample_pass(blk, x, t.param(store, blk.w1, blk.hidden, blk.dim),
                                            t.param(store, blk.b1, 1, blk.hidden),
                                            t.param(store, blk.w2, 2 * blk.dim, blk.hidden),
                                            t.param(store, blk.b2, 1, 2 * blk.dim));
          return {cols(out, 0, blk.dim), col(out, blk.dim)};
        } else {
          auto knots = detail::spline_knots(t, blk, store);
          Var out = detail::rq_spline_pass(x, knots.xk, knots.yk, knots.slopes, false);
          return {col(out, 0), col(out, 1)};
        }
      },
      block);
}

inline BlockResult block_inverse(const FlowBlock& block, const ParamStore& store, Var y) {
  Tape& t = y.tape();
  return std::visit(
      [&](const auto& blk) -> BlockResult {
        using T = std::decay_t<decltype(blk)>;
        if constexpr (std::is_same_v<T, PermuteBlock>) {
          return {permute_cols(y, blk.inverse()), t.constant(Matrix(y.rows(), 1))};
        } else if constexpr (std::is_same_v<T, MafBlock>) {
          if (y.cols() != blk.dim) throw InvalidInput("maf block: dimension mismatch");
          Var out = detail::maf_density_pass(blk, y, t.param(store, blk.w1, blk.hidden, blk.dim),
                                             t.param(store, blk.b1, 1, blk.hidden),
                                             t.param(store, blk.w2, 2 * blk.dim, blk.hidden),
                                             t.param(store, blk.b2, 1, 2 * blk.dim));
          return {cols(out, 0, blk.dim), col(out, blk.dim)};
        } else {
          auto knots = detail::spline_knots(t, blk, store);
          Var out = detail::rq_spline_pass(y, knots.xk, knots.yk, knots.slopes, true);
          return {col(out, 0), col(out, 1)};
        }
      },
      block);
}

// Tape-free density direction of one block, for evaluation without gradients.
// Same per-row arithmetic as block_inverse.
struct PreparedInverse {
  enum class Kind { permute, maf, spline } kind = Kind::permute;
  std::size_t dim = 0, hidden = 0;
  std::vector<std::size_t> perm;  // inverse permutation
  Matrix W1, W2, B1, B2;          // maf, masked
  Matrix XK, YK, S;               // spline knots

  static PreparedInverse from(const FlowBlock& block, const ParamStore& store) {
    PreparedInverse p;
    std::visit(
        [&](const auto& blk) {
          using T = std::decay_t<decltype(blk)>;
          if constexpr (std::is_same_v<T, PermuteBlock>) {
            p.kind = Kind::permute;
            p.perm = blk.inverse();
            p.dim = blk.perm.size();
          } else if constexpr (std::is_same_v<T, MafBlock>) {
            p.kind = Kind::maf;
            p.dim = blk.dim;
            p.hidden = blk.hidden;
            auto grab = [&](const ParamStore::Segment& seg, std::size_t r, std::size_t c) {
              const auto v = store.view(seg);
              return Matrix(r, c, std::vector<double>(v.begin(), v.end()));
            };
            p.W1 = detail::masked(grab(blk.w1, blk.hidden, blk.dim), blk.mask1);
            p.W2 = detail::masked(grab(blk.w2, 2 * blk.dim, blk.hidden), blk.mask2);
            p.B1 = grab(blk.b1, 1, blk.hidden);
            p.B2 = grab(blk.b2, 1, 2 * blk.dim);
          } else {
            p.kind = Kind::spline;
            p.dim = 1;
            Tape t;
            const auto k = detail::spline_knots(t, blk, store);
            p.XK = k.xk.value();
            p.YK = k.yk.value();
            p.S = k.slopes.value();
          }
        },
        block);
    return p;
  }

  // y -> x in place (scratch must hold dim + hidden + dim doubles). Returns
  // log|det|, or NaN for a permutation, which carries none.
  double apply(double* y, double* scratch) const {
    switch (kind) {
      case Kind::permute: {
        for (std::size_t j = 0; j < dim; ++j) scratch[j] = y[perm[j]];
        std::copy(scratch, scratch + dim, y);
        return std::numeric_limits<double>::quiet_NaN();
      }
      case Kind::maf: {
        double* x = scratch;
        double* ls = scratch + dim;
        double* h = scratch + 2 * dim;
        const double ld = detail::maf_density_row(dim, hidden, W1, W2, B1, B2, y, x, ls, h);
        std::copy(x, x + dim, y);
        return ld;
      }
      default: {
        std::size_t bin = 0;
        auto [o, ld] = detail::rq_spline_point(XK, YK, S, y[0], true, bin);
        y[0] = o;
        return ld;
      }
    }
  }
};

// Single-point conveniences.
inline std::pair<std::vector<double>, double> block_forward(const FlowBlock& block, const ParamStore& store,
                                                            std::span<const double> x) {
  Tape t;
  auto r = block_forward(block, store, t.constant(Matrix(1, x.size(), std::vector<double>(x.begin(), x.end()))));
  return {r.y.value().data, r.logdet.scalar()};
}

inline std::pair<std::vector<double>, double> block_inverse(const FlowBlock& block, const ParamStore& store,
                                                            std::span<const double> y) {
  Tape t;
  auto r = block_inverse(block, store, t.constant(Matrix(1, y.size(), std::vector<double>(y.begin(), y.end()))));
  return {r.y.value().data, r.logdet.scalar()};
}

}  // namespace nfmkv
