#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nfmkv/errors.hpp"
#include "nfmkv/matrix.hpp"

namespace nfmkv {

inline constexpr std::size_t kMaxAssignmentSize = 2048;

namespace detail {

// Minimum-cost perfect matching on a dense n x n cost matrix (row-major),
// shortest augmenting paths with potentials. Returns the total cost.
inline double min_cost_assignment(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      const double* row = &cost[(i0 - 1) * n];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[(match[j] - 1) * n + (j - 1)];
  return total;
}

}  // namespace detail

// W_p between two equally weighted point sets of the same size. Exact in
// every dimension: sorted samples for d = 1, assignment for d >= 2.
inline double wasserstein(const Matrix& A, const Matrix& B, int order = 1) {
  if (A.rows != B.rows) throw InvalidInput("wasserstein: point sets must have the same size");
  if (A.cols != B.cols) throw InvalidInput("wasserstein: point sets must have the same dimension");
  if (A.rows == 0) throw InvalidInput("wasserstein: empty point sets");
  if (order < 1) throw InvalidInput("wasserstein: order must be at least 1");
  const std::size_t n = A.rows, d = A.cols;
  const double p = static_cast<double>(order);
  if (d == 1) {
    std::vector<double> a = A.data, b = B.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::pow(std::abs(a[i] - b[i]), p);
    return std::pow(acc / static_cast<double>(n), 1.0 / p);
  }
  if (n > kMaxAssignmentSize) throw InvalidInput("wasserstein: at most 2048 points for the exact assignment");
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A(i, k) - B(j, k);
        s += diff * diff;
      }
      cost[i * n + j] = order == 2 ? s : std::pow(std::sqrt(s), p);
    }
  return std::pow(detail::min_cost_assignment(cost, n) / static_cast<double>(n), 1.0 / p);
}

}  // namespace nfmkv
