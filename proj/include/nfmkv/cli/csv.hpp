#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nfmkv/errors.hpp"
#include "nfmkv/flows/time_flow.hpp"
#include "nfmkv/metrics/density.hpp"
#include "nfmkv/reference/traffic_fd.hpp"
#include "nfmkv/sde/rollout.hpp"

namespace nfmkv {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError(name, "no such CSV column");
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ParseError("<header>", "empty CSV");
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) t.header.push_back(cell);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream r(line);
    std::string cell;
    while (std::getline(r, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(lineno), "not a number: '" + cell + "'");
      }
    }
    if (row.size() != t.header.size())
      throw ParseError("line " + std::to_string(lineno), "expected " + std::to_string(t.header.size()) + " cells");
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << text;
  if (!out) throw InvalidInput("failed writing '" + path + "'");
}

namespace detail {

inline std::ostringstream& csv_stream(std::ostringstream& o) {
  o.precision(17);
  return o;
}

}  // namespace detail

// step,t,x0[,x1],density at every time step. Ring: 256 cell centres. d = 2:
// 64 x 64 grid over mean +- 4 std of the step's samples. d > 2: smoothed
// histogram of the first two coordinates (cell centres).
inline std::string density_snapshot_csv(const TimeIndexedFlow& flow, const TimeGrid& grid, std::uint64_t seed) {
  std::ostringstream o;
  detail::csv_stream(o);
  const std::size_t d = flow.dim();
  o << (d == 1 ? "step,t,x0,density\n" : "step,t,x0,x1,density\n");
  for (std::size_t n = 0; n <= grid.N; ++n) {
    const double t = grid.t(n);
    if (d == 1 && flow.on_ring()) {
      constexpr std::size_t K = 256;
      Matrix x(K, 1);
      for (std::size_t j = 0; j < K; ++j) x.data[j] = (static_cast<double>(j) + 0.5) / K;
      const auto lp = flow.logprob_at_step(x, n);
      for (std::size_t j = 0; j < K; ++j) o << n << ',' << t << ',' << x.data[j] << ',' << std::exp(lp[j]) << '\n';
    } else if (d <= 2) {
      const Matrix s = flow.sample_at_step(n, 2048, StreamKey{seed, "snapshot-box", n});
      const detail::Box box = detail::sample_box(s, d, 4.0);
      constexpr std::size_t K = 64;
      Matrix x(d == 1 ? K : K * K, d);
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < (d == 1 ? 1 : K); ++j) {
          const std::size_t r = d == 1 ? i : i * K + j;
          x(r, 0) = box.lo[0] + (box.hi[0] - box.lo[0]) * (static_cast<double>(i) + 0.5) / K;
          if (d == 2) x(r, 1) = box.lo[1] + (box.hi[1] - box.lo[1]) * (static_cast<double>(j) + 0.5) / K;
        }
      const auto lp = flow.logprob_at_step(x, n);
      for (std::size_t r = 0; r < x.rows; ++r) {
        o << n << ',' << t;
        for (std::size_t k = 0; k < d; ++k) o << ',' << x(r, k);
        o << ',' << std::exp(lp[r]) << '\n';
      }
    } else {
      const Histogram2d h = projected_density_2d(flow.sample_at_step(n, 10000, StreamKey{seed, "snapshot-proj", n}));
      const double wx = (h.hi[0] - h.lo[0]) / static_cast<double>(h.bins);
      const double wy = (h.hi[1] - h.lo[1]) / static_cast<double>(h.bins);
      for (std::size_t i = 0; i < h.bins; ++i)
        for (std::size_t j = 0; j < h.bins; ++j)
          o << n << ',' << t << ',' << h.lo[0] + (static_cast<double>(i) + 0.5) * wx << ','
            << h.lo[1] + (static_cast<double>(j) + 0.5) * wy << ',' << h.smoothed[i * h.bins + j] << '\n';
    }
  }
  return o.str();
}

// sample,step,t,x0,...,x{d-1}
inline std::string trajectory_csv(const TrajectoryBatch& traj, const TimeGrid& grid) {
  std::ostringstream o;
  detail::csv_stream(o);
  const std::size_t d = traj.X.empty() ? 0 : traj.X[0].cols;
  o << "sample,step,t";
  for (std::size_t k = 0; k < d; ++k) o << ",x" << k;
  o << '\n';
  for (std::size_t m = 0; m < traj.samples(); ++m)
    for (std::size_t n = 0; n < traj.X.size(); ++n) {
      o << m << ',' << n << ',' << grid.t(n);
      for (std::size_t k = 0; k < d; ++k) o << ',' << traj.X[n](m, k);
      o << '\n';
    }
  return o.str();
}

// The reference grid in the snapshot layout (step,t,x0,<value>).
inline std::string reference_csv(const ReferenceSolution& r, bool value_function = false) {
  std::ostringstream o;
  detail::csv_stream(o);
  o << (value_function ? "step,t,x0,value\n" : "step,t,x0,density\n");
  const auto& field = value_function ? r.u : r.mu;
  for (std::size_t n = 0; n < field.size(); ++n)
    for (std::size_t j = 0; j < r.J; ++j) o << n << ',' << r.grid.t(n) << ',' << r.x(j) << ',' << field[n][j] << '\n';
  return o.str();
}

inline std::string log_error_csv(const LogError& e, const ReferenceSolution& r) {
  std::ostringstream o;
  detail::csv_stream(o);
  o << "step,t,x0,log_error\n";
  for (std::size_t n = 0; n < e.eps.size(); ++n)
    for (std::size_t j = 0; j < r.J; ++j) o << n << ',' << r.grid.t(n) << ',' << r.x(j) << ',' << e.eps[n][j] << '\n';
  return o.str();
}

}  // namespace nfmkv
