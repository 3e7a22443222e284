#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfmkv/metrics/density.hpp"
#include "nfmkv/metrics/wasserstein.hpp"
#include "nfmkv/problems/problem.hpp"
#include "nfmkv/sde/rollout.hpp"

namespace nfmkv {

struct WdistSeries {
  std::vector<double> values;  // W1(mu_n, mu_{n+1}), n = 0..N-1
  double mean = 0.0;
};

// Consecutive-step W1 of the flow, both steps pushed from the same base draws.
inline WdistSeries consecutive_wdist(const TimeIndexedFlow& flow, std::size_t M, const StreamKey& key) {
  if (M > kMaxAssignmentSize && flow.dim() > 1) throw InvalidInput("consecutive_wdist: at most 2048 samples");
  const std::vector<Matrix> path = flow.sample_path(M, key);
  WdistSeries out;
  for (std::size_t n = 0; n + 1 < path.size(); ++n) out.values.push_back(wasserstein(path[n], path[n + 1]));
  double acc = 0.0;
  for (double v : out.values) acc += v;
  out.mean = out.values.empty() ? 0.0 : acc / static_cast<double>(out.values.size());
  return out;
}

// Largest |alpha| over all samples and steps of a batch.
inline double max_control_norm(const TrajectoryBatch& traj) {
  double vmax = 0.0;
  for (const Matrix& a : traj.alpha)
    for (std::size_t i = 0; i < a.rows; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * a(i, k);
      vmax = std::max(vmax, std::sqrt(s));
    }
  return vmax;
}

// W1 between consecutive marginals cannot exceed v_max dt + 3 sigma sqrt(dt)
// (drift displacement plus a three-sigma noise allowance).
inline double kinematic_bound(double vmax, double dt, double sigma) {
  return vmax * dt + 3.0 * sigma * std::sqrt(dt);
}

// (1/M) sum_m [sum_n f(t_n, X_n, mu_n, alpha_n) dt + g(X_N, mu_N)].
inline double realized_cost(const MfgProblem& p, const TrajectoryBatch& traj, const MeasurePath& mu) {
  const std::size_t N = p.grid.N;
  if (traj.steps() != N || traj.alpha.size() != N) throw InvalidInput("realized_cost: trajectory does not match the grid");
  if (mu.size() != N + 1) throw InvalidInput("realized_cost: measure path must cover steps 0..N");
  Tape t;
  const double dt = p.grid.dt();
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    Var f = p.running_cost(p.grid.t(n), t.constant(traj.X[n]), mu[n], t.constant(traj.alpha[n]));
    for (double v : f.value().data) acc += v * dt;
  }
  for (double v : p.terminal(t.constant(traj.X[N]), mu[N]).value().data) acc += v;
  return acc / static_cast<double>(traj.samples());
}

struct MetricsReport {
  std::string problem;
  std::string run_id;
  double T = 1.0;
  std::vector<double> integral;      // N+1 density integrals
  std::vector<double> log_integral;  // log10 |integral - 1|
  std::vector<double> wdist;         // N consecutive W1
  double mean_log_integral = 0.0;
  double mean_wdist = 0.0;
  double cost = 0.0;
  bool projected = false;  // integrals come from the 2-D projection (d > 2)
  std::vector<std::string> warnings;
  std::optional<double> ref_log_error_max;
  std::optional<double> ref_log_error_mean;
};

struct ReportOptions {
  std::size_t wdist_samples = 512;
  std::size_t cost_samples = 512;
  std::size_t projection_samples = 10000;
  MeshSpec mesh;
  std::uint64_t seed = 0;
};

inline MetricsReport build_report(const MfgProblem& p, const TimeIndexedFlow& flow, const ValueNets& nets,
                                  const std::string& run_id, const ReportOptions& opt = {}) {
  MetricsReport r;
  r.problem = p.tag;
  r.run_id = run_id;
  r.T = p.grid.T;
  const std::size_t N = p.grid.N;
  if (flow.dim() > 2) {
    r.projected = true;
    const auto path = flow.sample_path(opt.projection_samples, StreamKey{opt.seed, "report-projection"});
    for (std::size_t n = 0; n <= N; ++n) {
      const Histogram2d h = projected_density_2d(path[n]);
      r.integral.push_back(h.integral);
      r.log_integral.push_back(h.log_diff);
    }
  } else {
    MeshSpec mesh = opt.mesh;
    mesh.seed = opt.seed;
    for (std::size_t n = 0; n <= N; ++n) {
      const DensityIntegral di = density_integral(flow, n, mesh);
      r.integral.push_back(di.integral);
      r.log_integral.push_back(di.log_diff);
      if (!di.coverage_ok) r.warnings.push_back("step " + std::to_string(n) + ": " + di.warning);
    }
  }
  const WdistSeries w = consecutive_wdist(flow, opt.wdist_samples, StreamKey{opt.seed, "report-wdist"});
  r.wdist = w.values;
  r.mean_wdist = w.mean;
  double acc = 0.0;
  for (double v : r.log_integral) acc += v;
  r.mean_log_integral = acc / static_cast<double>(r.log_integral.size());
  const MeasurePath mu = measure_path(flow, opt.cost_samples, StreamKey{opt.seed, "report-measure"});
  const WienerBatch wb = gen_wiener(p.grid, opt.cost_samples, p.dim, opt.seed ^ 0x636f7374ULL, 0);
  const Matrix X0 = p.mu0.sample(StreamKey{opt.seed, "report-x0"}, opt.cost_samples);
  r.cost = realized_cost(p, simulate_forward(p, nets, mu, wb, X0), mu);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = {{"problem", r.problem},
                      {"run_id", r.run_id},
                      {"T", r.T},
                      {"integral", r.integral},
                      {"log_integral", r.log_integral},
                      {"wdist", r.wdist},
                      {"mean_log_integral", r.mean_log_integral},
                      {"mean_wdist", r.mean_wdist},
                      {"cost", r.cost},
                      {"projected", r.projected},
                      {"warnings", r.warnings}};
  if (r.ref_log_error_max) j["ref_log_error_max"] = *r.ref_log_error_max;
  if (r.ref_log_error_mean) j["ref_log_error_mean"] = *r.ref_log_error_mean;
  return j;
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.problem = j.at("problem").get<std::string>();
    r.run_id = j.at("run_id").get<std::string>();
    r.T = j.at("T").get<double>();
    r.integral = j.at("integral").get<std::vector<double>>();
    r.log_integral = j.at("log_integral").get<std::vector<double>>();
    r.wdist = j.at("wdist").get<std::vector<double>>();
    r.mean_log_integral = j.at("mean_log_integral").get<double>();
    r.mean_wdist = j.at("mean_wdist").get<double>();
    r.cost = j.at("cost").get<double>();
    r.projected = j.at("projected").get<bool>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("ref_log_error_max")) r.ref_log_error_max = j.at("ref_log_error_max").get<double>();
    if (j.contains("ref_log_error_mean")) r.ref_log_error_mean = j.at("ref_log_error_mean").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("metrics report", e.what());
  }
  return r;
}

inline nlohmann::json report_table_json(const std::vector<MetricsReport>& runs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : runs) j.push_back(to_json(r));
  return j;
}

// Aligned text table: one column per run, rows for the two evaluation means
// and the realized cost.
inline std::string report_table_text(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) return "";
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::vector<std::string> labels = {"", "log10 |integral of mu - 1|", "W-dis of mu_t between steps", "realized cost"};
  std::vector<std::vector<std::string>> cols;
  for (const auto& r : runs) {
    std::string head = r.problem + (r.run_id.empty() ? "" : " (" + r.run_id + ")");
    cols.push_back({head, cell(r.mean_log_integral) + (r.projected ? " (proj.)" : ""), cell(r.mean_wdist),
                    cell(r.cost)});
  }
  std::size_t w0 = 0;
  for (const auto& l : labels) w0 = std::max(w0, l.size());
  std::vector<std::size_t> widths;
  for (const auto& c : cols) {
    std::size_t w = 0;
    for (const auto& s : c) w = std::max(w, s.size());
    widths.push_back(w);
  }
  std::ostringstream out;
  for (std::size_t row = 0; row < labels.size(); ++row) {
    out << labels[row] << std::string(w0 - labels[row].size(), ' ');
    for (std::size_t c = 0; c < cols.size(); ++c)
      out << "  " << std::string(widths[c] - cols[c][row].size(), ' ') << cols[c][row];
    out << '\n';
  }
  return out.str();
}

// Per-step series as CSV: step,t,value.
inline std::string series_csv(const std::vector<double>& values, double T, std::size_t N) {
  std::ostringstream out;
  out.precision(17);
  out << "step,t,value\n";
  for (std::size_t n = 0; n < values.size(); ++n)
    out << n << ',' << T * static_cast<double>(n) / static_cast<double>(N) << ',' << values[n] << '\n';
  return out.str();
}

}  // namespace nfmkv
