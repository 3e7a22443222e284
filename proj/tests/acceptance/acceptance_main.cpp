// Acceptance battery. One criterion per invocation: `nfmkv_acceptance C6`.
// Prints a single [PASS]/[FAIL] line with the measured numbers; exit 1 on FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "nfmkv/cli/checks.hpp"
#include "nfmkv/cli/commands.hpp"

using namespace nfmkv;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string config_path(const std::string& tag) { return std::string(NFMKV_SOURCE_DIR) + "/configs/" + tag + ".json"; }

fs::path work_dir(const std::string& name) {
  const fs::path d = fs::path(NFMKV_ACCEPTANCE_DIR) / name;
  fs::remove_all(d);
  return d;
}

SolveResult solve_config(const std::string& tag, const fs::path& out) {
  RunConfig rc = load_run_config(config_path(tag));
  rc.out = out.string();
  return run_solve(rc, {}, &std::cout);
}

// Mean and std per coordinate of flow samples at the terminal step.
std::pair<std::vector<double>, std::vector<double>> moments(const Matrix& s) {
  std::vector<double> mean(s.cols, 0.0), sd(s.cols, 0.0);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t k = 0; k < s.cols; ++k) mean[k] += s(i, k);
  for (double& m : mean) m /= static_cast<double>(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t k = 0; k < s.cols; ++k) sd[k] += (s(i, k) - mean[k]) * (s(i, k) - mean[k]);
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(s.rows));
  return {mean, sd};
}

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

Matrix flow_terminal(const SolveResult& r, std::size_t M = 4096) {
  return r.state.flow.sample_at_step(r.problem.grid.N, M, StreamKey{r.state.outer, "acceptance-terminal"});
}

Verdict probe(const std::string& kind) {
  const ProbeOutcome o = run_probe(kind, 1);
  Verdict v;
  v.check(o.pass, kind + ": " + o.summary);
  return v;
}

Verdict c1() { return probe("flow-roundtrip"); }
Verdict c2() { return probe("grad-check"); }

Verdict c3() {
  Verdict v;
  for (const char* k : {"em-strong", "em-weak"}) {
    const ProbeOutcome o = run_probe(k, 1);
    v.check(o.pass, std::string(k) + ": " + o.summary);
  }
  return v;
}

Verdict c4() { return probe("particle-rate"); }

Verdict c5() {
  const auto r = solve_config("traffic", work_dir("C5"));
  Verdict v;
  v.check(*r.metrics.ref_log_error_max <= -1.5,
          fmt("(a) max log10 rel. error vs FD %.3f (<= -1.5), mean %.3f", *r.metrics.ref_log_error_max,
              *r.metrics.ref_log_error_mean));
  double worst = 0.0;
  for (double i : r.metrics.integral) worst = std::max(worst, std::abs(i - 1.0));
  v.check(worst <= 1e-2, fmt("(b) max |integral - 1| %.2e (<= 1e-2)", worst));
  const double gap = terminal_uniform_gap(r.state.flow, 128);
  v.check(gap <= 0.05, fmt("(c) sup |mu_T - 1| %.4f (<= 0.05)", gap));
  return v;
}

Verdict c6() {
  const auto r = solve_config("crowd2d", work_dir("C6"));
  Verdict v;
  const auto [mean, sd] = moments(flow_terminal(r));
  const auto [smean, ssd] = moments(r.paths.X.back());
  v.check(dist2(mean, {2.0, 0.0}) <= 0.5,
          fmt("flow terminal mean (%.3f, %.3f), distance %.3f to (2,0) (<= 0.5)", mean[0], mean[1],
              dist2(mean, {2.0, 0.0})) +
              fmt(" [simulated (%.3f, %.3f)]", smean[0], smean[1]));
  const double lT = r.state.history.back().l_T, lT0 = r.state.warmup_final_lT;
  v.check(lT * 10.0 <= lT0, fmt("l_T %.4g vs post-warm-up %.4g, reduction %.1fx (>= 10x)", lT, lT0, lT0 / lT));
  v.check(r.metrics.mean_wdist <= 0.2, fmt("mean consecutive W1 %.4f (<= 0.2)", r.metrics.mean_wdist));
  const double bound = kinematic_bound(max_control_norm(r.paths), r.problem.grid.dt(), r.problem.sigma);
  double wmax = 0.0;
  for (double w : r.metrics.wdist) wmax = std::max(wmax, w);
  v.check(wmax <= bound, fmt("max step W1 %.4f vs kinematic bound %.4f", wmax, bound));
  return v;
}

Verdict c7() {
  const auto r = solve_config("obstacle", work_dir("C7"));
  Verdict v;
  std::size_t inside = 0, total = 0;
  for (const Matrix& x : r.paths.X)
    for (std::size_t i = 0; i < x.rows; ++i, ++total)
      if (x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1) <= kObstacleRadius * kObstacleRadius) ++inside;
  const double frac = static_cast<double>(inside) / static_cast<double>(total);
  v.check(frac <= 0.02, fmt("%.2f%% of trajectory points within radius 1 (<= 2%%)", 100.0 * frac));
  const auto [mean, sd] = moments(flow_terminal(r));
  const auto [smean, ssd] = moments(r.paths.X.back());
  v.check(dist2(mean, {4.0, 0.0}) <= 0.5, fmt("flow terminal mean (%.3f, %.3f), distance %.3f to (4,0) (<= 0.5)",
                                              mean[0], mean[1], dist2(mean, {4.0, 0.0})) +
                                              fmt(" [simulated (%.3f, %.3f)]", smean[0], smean[1]));
  return v;
}

Verdict c8() {
  Verdict v;
  try {
    const auto r = solve_config("crowd50d", work_dir("C8"));
    v.check(true, "completed without divergence");
    v.check(r.metrics.mean_log_integral <= -0.5,
            fmt("projected 2-D log-diff %.3f (<= -0.5)", r.metrics.mean_log_integral));
    const auto [mean, sd] = moments(flow_terminal(r));
    const auto [smean, ssd] = moments(r.paths.X.back());
    const std::vector<double> m2{mean[0], mean[1]};
    v.check(dist2(m2, {2.0, 2.0}) <= 1.0, fmt("flow terminal (x1, x2) mean (%.3f, %.3f), distance %.3f to (2,2) (<= 1)",
                                              mean[0], mean[1], dist2(m2, {2.0, 2.0})) +
                                              fmt(" [simulated (%.3f, %.3f)]", smean[0], smean[1]));
  } catch (const NumericError& e) {
    v.check(false, std::string("diverged: ") + e.what());
  } catch (const TrainingFailure& e) {
    v.check(false, std::string("training failed: ") + e.what());
  }
  return v;
}

Verdict c9() {
  Verdict v;
  const TimeGrid grid(1.0, 50);
  const BaseDensity mu0 = BaseDensity::sine_ring(0.8, 1);
  const auto r = solve_traffic_fd(128, grid, 0.5, mu0);
  double mass = 0.0;
  for (std::size_t n = 0; n <= grid.N; ++n) mass = std::max(mass, std::abs(r.mass(n) - 1.0));
  v.check(mass <= 1e-10, fmt("max mass error %.2e (<= 1e-10)", mass));
  v.check(r.picard_residual < 1e-6,
          fmt("Picard residual %.2e after %.0f iterations (< 1e-6)", r.picard_residual,
              static_cast<double>(r.residual_history.size())));
  const double ratio = refinement_ratio(64, grid, 0.5, mu0);
  v.check(ratio >= 1.5 && ratio <= 2.5, fmt("refinement ratio J=64->128 %.3f (in [1.5, 2.5])", ratio));
  return v;
}

nlohmann::json tiny_config(const fs::path& out, std::size_t outer) {
  return {{"problem", "crowd2d"},
          {"seed", 7},
          {"out", out.string()},
          {"overrides", {{"N", 6}, {"sigma", 0.7}}},
          {"export_paths", 40},
          {"wdist_samples", 64},
          {"cost_samples", 64},
          {"train",
           {{"M", 32},
            {"M_prime", 16},
            {"outer_iters", outer},
            {"value_epochs", 5},
            {"flow_epochs", 5},
            {"warmup_steps", 5},
            {"conv_tol", 1e-12},
            {"grad_clip_value", 1.0},
            {"grad_clip_flow", 1.0},
            {"flow", {{"hidden", 8}}},
            {"value_net", {{"u0_hidden", {8}}, {"z_hidden", {8}}}}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Files of a and b (except manifest.json) that differ or exist on one side only.
std::vector<std::string> differing_files(const fs::path& a, const fs::path& b) {
  std::map<std::string, int> names;
  for (const auto& dir : {a, b})
    for (const auto& e : fs::directory_iterator(dir)) names[e.path().filename().string()]++;
  std::vector<std::string> out;
  for (const auto& [name, count] : names) {
    if (name == "manifest.json") continue;
    if (count != 2 || slurp(a / name) != slurp(b / name)) out.push_back(name);
  }
  return out;
}

Verdict c10() {
  Verdict v;
  const fs::path root = work_dir("C10");
  // the same command twice into the same directory (config.json echoes the output path)
  const fs::path run = root / "run", first = root / "first";
  run_solve(run_config_from_json(tiny_config(run, 4)));
  fs::rename(run, first);
  run_solve(run_config_from_json(tiny_config(run, 4)));
  const auto diff = differing_files(first, run);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(run)) ++files;
  v.check(diff.empty(), fmt("two identical-seed solves: %.0f of %.0f artifacts differ (manifest excluded)",
                            static_cast<double>(diff.size()), static_cast<double>(files - 1)));

  // 2 outer iterations, checkpoint, resume to 4, against 4 uninterrupted (the `run` directory)
  const fs::path half = root / "half", resumed = root / "resumed";
  run_solve(run_config_from_json(tiny_config(half, 2)));
  run_solve(run_config_from_json(tiny_config(resumed, 4)), (half / "checkpoint.json").string());
  std::string differ;
  for (const char* f : {"checkpoint.json", "metrics.json", "density.csv", "trajectories.csv", "wdist.csv"})
    if (slurp(run / f) != slurp(resumed / f)) differ += std::string(differ.empty() ? "" : ",") + f;
  v.check(differ.empty(), "2+2 resumed vs 4 uninterrupted: checkpoint, metrics, density and trajectories " +
                              (differ.empty() ? std::string("bitwise equal") : "differ in {" + differ + "}"));
  return v;
}

Verdict c11() {
  const auto r = solve_config("half_terminal", work_dir("C11"));
  Verdict v;
  const auto [mean, sd] = moments(flow_terminal(r));
  const auto [smean, ssd] = moments(r.paths.X.back());
  v.check(std::abs(mean[0] - 4.0) <= 0.5,
          fmt("flow terminal x1 mean %.3f (within 0.5 of 4) [simulated %.3f]", mean[0], smean[0]));
  const double sd0 = r.problem.mu0.descriptor()["std"][1].get<double>();
  v.check(sd[1] >= 3.0 * sd0, fmt("terminal x2 std %.3f vs initial %.3f, ratio %.1f (>= 3) [simulated %.3f]", sd[1],
                                  sd0, sd[1] / sd0) +
                                  fmt(" [simulated ratio %.1f]", ssd[1] / sd0));
  return v;
}

const std::map<std::string, std::pair<std::string, std::function<Verdict()>>>& criteria() {
  static const std::map<std::string, std::pair<std::string, std::function<Verdict()>>> m = {
      {"C1", {"flow round trip", c1}},        {"C2", {"gradient fidelity", c2}},
      {"C3", {"Euler-Maruyama orders", c3}},  {"C4", {"particle rate", c4}},
      {"C5", {"traffic flow", c5}},           {"C6", {"crowd motion d=2", c6}},
      {"C7", {"obstacle", c7}},               {"C8", {"crowd motion d=50 smoke run", c8}},
      {"C9", {"FD reference self-checks", c9}}, {"C10", {"determinism and persistence", c10}},
      {"C11", {"half-terminal", c11}}};
  return m;
}

// runtime budgets in seconds
const std::map<std::string, double> kBudget = {{"C1", 10},  {"C2", 60},   {"C3", 120}, {"C4", 60},
                                               {"C5", 900}, {"C6", 1200}, {"C9", 60}};

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2 || !criteria().count(argv[1])) {
    std::cerr << "usage: nfmkv_acceptance C1..C11\n";
    return 2;
  }
  const std::string id = argv[1];
  const auto& [name, fn] = criteria().at(id);
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v.check(false, std::string("error: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (kBudget.count(id)) v.check(secs <= kBudget.at(id), fmt("runtime %.1f s (budget %.0f s)", secs, kBudget.at(id)));
  else v.detail += fmt("; runtime %.1f s", secs);
  std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << v.detail << std::endl;
  return v.pass ? 0 : 1;
}
