#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "nfmkv/errors.hpp"
#include "nfmkv/flows/base_density.hpp"
#include "nfmkv/sde/time_grid.hpp"

namespace nfmkv {

// Grid solution of the 1-D ring traffic HJB-FPK system. Cell centres
// x_j = (j + 1/2) / J.
struct ReferenceSolution {
  std::size_t J = 0;
  TimeGrid grid;
  double sigma = 0.0;
  std::vector<std::vector<double>> mu;  // (N+1) x J
  std::vector<std::vector<double>> u;   // (N+1) x J
  double picard_residual = 0.0;
  std::vector<double> residual_history;

  double dx() const { return 1.0 / static_cast<double>(J); }
  double x(std::size_t j) const { return (static_cast<double>(j) + 0.5) * dx(); }
  double mass(std::size_t n) const {
    double m = 0.0;
    for (double v : mu[n]) m += v;
    return m * dx();
  }
};

struct FdOptions {
  double picard_tol = 1e-8;
  std::size_t max_picard = 500;
  double damping = 0.5;
};

namespace detail {

// Solves the cyclic tridiagonal system
//   lo[j] v[j-1] + di[j] v[j] + up[j] v[j+1] = rhs[j]   (indices mod n)
// by Sherman-Morrison on top of the Thomas algorithm.
inline std::vector<double> solve_periodic_tridiagonal(std::vector<double> lo, std::vector<double> di,
                                                      std::vector<double> up, const std::vector<double>& rhs) {
  const std::size_t n = di.size();
  if (n < 3 || lo.size() != n || up.size() != n || rhs.size() != n)
    throw InvalidInput("periodic tridiagonal: need n >= 3 and equally sized bands");
  const double gamma = -di[0];
  const double alpha = up[n - 1];  // corner (n-1, 0)
  const double beta = lo[0];       // corner (0, n-1)
  di[0] -= gamma;
  di[n - 1] -= alpha * beta / gamma;
  auto thomas = [&](std::vector<double> d) {
    std::vector<double> c(n), b = di;
    c[0] = up[0] / b[0];
    d[0] /= b[0];
    for (std::size_t i = 1; i < n; ++i) {
      const double m = b[i] - lo[i] * c[i - 1];
      if (m == 0.0) throw NumericError("periodic tridiagonal: zero pivot");
      c[i] = up[i] / m;
      d[i] = (d[i] - lo[i] * d[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
    return d;
  };
  std::vector<double> y = thomas(rhs);
  std::vector<double> uvec(n, 0.0);
  uvec[0] = gamma;
  uvec[n - 1] = alpha;
  std::vector<double> z = thomas(uvec);
  const double fact = (y[0] + beta * y[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
  for (std::size_t i = 0; i < n; ++i) y[i] -= fact * z[i];
  return y;
}

inline std::size_t wrap_index(std::size_t j, std::size_t J, int off) {
  return static_cast<std::size_t>((static_cast<long>(j) + off + static_cast<long>(J)) % static_cast<long>(J));
}

// Velocity b* = 1 - mu - u_x at face j+1/2.
inline double face_velocity(const std::vector<double>& mu, const std::vector<double>& u, std::size_t j, double dx) {
  const std::size_t jp = (j + 1) % mu.size();
  return 1.0 - 0.5 * (mu[j] + mu[jp]) - (u[jp] - u[j]) / dx;
}

// Backward HJB sweep for a fixed density path. Implicit in u^n with the
// control frozen at b* computed from u^{n+1}; transport upwinded by sign(b*).
inline std::vector<std::vector<double>> hjb_sweep(const std::vector<std::vector<double>>& mu, const TimeGrid& grid,
                                                  double sigma) {
  const std::size_t J = mu[0].size(), N = grid.N;
  const double dx = 1.0 / static_cast<double>(J), dt = grid.dt();
  const double nu = 0.5 * sigma * sigma / (dx * dx);
  std::vector<std::vector<double>> u(N + 1, std::vector<double>(J, 0.0));
  std::vector<double> lo(J), di(J), up(J), rhs(J);
  for (std::size_t n = N; n-- > 0;) {
    const auto& un = u[n + 1];
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t jm = wrap_index(j, J, -1), jp = wrap_index(j, J, 1);
      const double ux = (un[jp] - un[jm]) / (2.0 * dx);
      const double b = 1.0 - mu[n][j] - ux;
      const double c = 1.0 - mu[n][j] - b;
      const double f = 0.5 * c * c;
      // -u_t - nu u_xx - b u_x = f
      const double bp = std::max(b, 0.0) / dx, bm = std::min(b, 0.0) / dx;
      lo[j] = -dt * (nu - bm);
      up[j] = -dt * (nu + bp);
      di[j] = 1.0 + dt * (2.0 * nu + bp - bm);
      rhs[j] = un[j] + dt * f;
    }
    u[n] = solve_periodic_tridiagonal(lo, di, up, rhs);
  }
  return u;
}

// Forward conservative FPK sweep: implicit upwind fluxes and diffusion, so
// every column of the step matrix sums to one and mass telescopes exactly.
inline std::vector<std::vector<double>> fpk_sweep(const std::vector<double>& mu0,
                                                  const std::vector<std::vector<double>>& mu_path,
                                                  const std::vector<std::vector<double>>& u, const TimeGrid& grid,
                                                  double sigma) {
  const std::size_t J = mu0.size(), N = grid.N;
  const double dx = 1.0 / static_cast<double>(J), dt = grid.dt();
  const double nu = 0.5 * sigma * sigma / (dx * dx);
  std::vector<std::vector<double>> out(N + 1);
  out[0] = mu0;
  std::vector<double> lo(J), di(J), up(J), face(J);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < J; ++j) face[j] = face_velocity(mu_path[n], u[n], j, dx);
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t jm = wrap_index(j, J, -1);
      const double br = face[j], bl = face[jm];
      // flux F_{j+1/2} = max(br,0) mu_j + min(br,0) mu_{j+1}
      di[j] = 1.0 + dt * (2.0 * nu + (std::max(br, 0.0) - std::min(bl, 0.0)) / dx);
      up[j] = -dt * nu + dt * std::min(br, 0.0) / dx;
      lo[j] = -dt * nu - dt * std::max(bl, 0.0) / dx;
    }
    out[n + 1] = solve_periodic_tridiagonal(lo, di, up, out[n]);
  }
  return out;
}

}  // namespace detail

// Cell averages of mu0 (composite Simpson, 16 panels per cell), rescaled to
// unit discrete mass.
inline std::vector<double> discretize_ring_density(const BaseDensity& mu0, std::size_t J) {
  if (!mu0.on_ring()) throw InvalidInput("reference solver needs a ring density");
  constexpr int panels = 16;
  const double h = 1.0 / static_cast<double>(J);
  auto dens = [&](double x) { return std::exp(mu0.log_density(std::span<const double>(&x, 1))); };
  std::vector<double> v(J);
  double mass = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const double a = static_cast<double>(j) * h, q = h / panels;
    double acc = dens(a) + dens(std::min(a + h, std::nextafter(1.0, 0.0)));
    for (int k = 1; k < panels; ++k) acc += (k % 2 ? 4.0 : 2.0) * dens(a + k * q);
    v[j] = acc * q / 3.0 / h;
    mass += v[j];
  }
  mass *= h;
  for (double& x : v) x /= mass;
  return v;
}

inline ReferenceSolution solve_traffic_fd(std::size_t J, const TimeGrid& grid, double sigma, const BaseDensity& mu0,
                                          const FdOptions& opt = {}) {
  if (J < 16) throw InvalidInput("reference solver: J must be at least 16");
  if (!(opt.picard_tol > 0.0)) throw InvalidInput("reference solver: picard_tol must be positive");
  if (!(sigma >= 0.0)) throw InvalidInput("reference solver: sigma must be non-negative");
  if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw InvalidInput("reference solver: damping must lie in (0, 1]");
  ReferenceSolution r;
  r.J = J;
  r.grid = grid;
  r.sigma = sigma;
  const std::vector<double> m0 = discretize_ring_density(mu0, J);
  r.mu.assign(grid.N + 1, m0);
  for (std::size_t it = 0; it < opt.max_picard; ++it) {
    r.u = detail::hjb_sweep(r.mu, grid, sigma);
    const auto fresh = detail::fpk_sweep(m0, r.mu, r.u, grid, sigma);
    double change = 0.0;
    for (std::size_t n = 0; n <= grid.N; ++n)
      for (std::size_t j = 0; j < J; ++j) {
        const double next = (1.0 - opt.damping) * r.mu[n][j] + opt.damping * fresh[n][j];
        change = std::max(change, std::abs(next - r.mu[n][j]));
        r.mu[n][j] = next;
      }
    if (!std::isfinite(change)) throw IterationFailure("reference solver: non-finite Picard iterate", r.residual_history);
    r.residual_history.push_back(change);
    r.picard_residual = change;
    if (change < opt.picard_tol) {
      r.u = detail::hjb_sweep(r.mu, grid, sigma);
      return r;
    }
  }
  throw IterationFailure("reference solver: Picard iteration did not reach tolerance " +
                             std::to_string(opt.picard_tol) + " in " + std::to_string(opt.max_picard) +
                             " iterations (last change " + std::to_string(r.picard_residual) + ")",
                         r.residual_history);
}

struct LogError {
  std::vector<std::vector<double>> eps;  // (N+1) x J
  double max = -16.0;
  double mean = 0.0;
};

// eps[n][j] = log10(|mu_net(x_j, t_n) - mu_hat| / max(mu_hat, 1e-8)), clamped
// below at -16 (exact agreement).
inline LogError log_error(const std::function<double(std::size_t n, double x)>& mu_net, const ReferenceSolution& ref) {
  LogError e;
  e.eps.assign(ref.mu.size(), std::vector<double>(ref.J));
  e.max = -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (std::size_t n = 0; n < ref.mu.size(); ++n)
    for (std::size_t j = 0; j < ref.J; ++j) {
      const double m = ref.mu[n][j];
      const double rel = std::abs(mu_net(n, ref.x(j)) - m) / std::max(m, 1e-8);
      const double v = rel > 0.0 ? std::max(std::log10(rel), -16.0) : -16.0;
      e.eps[n][j] = v;
      e.max = std::max(e.max, v);
      acc += v;
    }
  e.mean = acc / static_cast<double>(ref.mu.size() * ref.J);
  return e;
}

// Terminal-step error of the J and 2J solutions against a 16J solution,
// |mu_J - R(mu_16J)| / |mu_2J - R(mu_16J)| in sup norm, R averaging fine
// cells onto the coarse ones. First-order schemes give ~2.
inline double refinement_ratio(std::size_t J, const TimeGrid& grid, double sigma, const BaseDensity& mu0,
                               const FdOptions& opt = {}) {
  const auto fine = solve_traffic_fd(16 * J, grid, sigma, mu0, opt);
  auto err = [&](std::size_t Jc) {
    const auto coarse = solve_traffic_fd(Jc, grid, sigma, mu0, opt);
    const std::size_t k = fine.J / Jc;
    double w = 0.0;
    for (std::size_t j = 0; j < Jc; ++j) {
      double avg = 0.0;
      for (std::size_t i = 0; i < k; ++i) avg += fine.mu.back()[j * k + i];
      w = std::max(w, std::abs(avg / static_cast<double>(k) - coarse.mu.back()[j]));
    }
    return w;
  };
  return err(J) / err(2 * J);
}

}  // namespace nfmkv
