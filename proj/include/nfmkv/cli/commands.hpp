#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfmkv/cli/checks.hpp"
#include "nfmkv/cli/csv.hpp"
#include "nfmkv/cli/run_config.hpp"
#include "nfmkv/metrics/report.hpp"
#include "nfmkv/reference/traffic_fd.hpp"
#include "nfmkv/sde/probes.hpp"
#include "nfmkv/trainer/checkpoint.hpp"

namespace nfmkv {

inline constexpr const char* kToolVersion = "0.1.0";

// Stable exit codes.
enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitRuntime = 3 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidInput*>(&e) || dynamic_cast<const ParseError*>(&e)) return kExitInput;
  return kExitRuntime;
}

// NFMKV_THREADS: unset or 1 selects ordered single-threaded evaluation.
inline std::size_t threads_from_env() {
  const char* v = std::getenv("NFMKV_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  try {
    std::size_t used = 0;
    const long n = std::stol(v, &used);
    if (used != std::string(v).size() || n < 1) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw InvalidInput(std::string("NFMKV_THREADS must be a positive integer, got '") + v + "'");
  }
}

namespace detail {

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InvalidInput("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// The manifest is the first artifact of every command and is rewritten with
// the wall-clock once the command finishes. It is the only artifact that
// depends on time.
class Manifest {
 public:
  Manifest(std::string dir, std::string command, nlohmann::json config, std::uint64_t seed)
      : path_(detail::join(dir, "manifest.json")), start_(std::chrono::steady_clock::now()) {
    doc_ = {{"tool", "nfmkv"},
            {"version", kToolVersion},
            {"command", std::move(command)},
            {"seed", seed},
            {"threads", threads_from_env()},
            {"ordered_reduction", true},
            {"config", std::move(config)},
            {"started", detail::utc_now()}};
    write();
  }

  nlohmann::json& doc() { return doc_; }

  void finish(const std::string& status) {
    doc_["status"] = status;
    doc_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
  }

 private:
  void write() const { write_text(path_, doc_.dump(2) + "\n"); }

  std::string path_;
  std::chrono::steady_clock::time_point start_;
  nlohmann::json doc_;
};

inline nlohmann::json train_report_json(const TrainReport& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : r.history)
    hist.push_back({{"l_mkv", h.l_mkv}, {"l_dis", h.l_dis}, {"l_T", h.l_T}, {"total", h.total()}});
  return {{"history", hist},
          {"value_curve", r.value_curve},
          {"flow_curve", r.flow_curve},
          {"warmup_initial_lT", r.warmup_initial_lT},
          {"warmup_final_lT", r.warmup_final_lT},
          {"converged", r.converged}};
}

// Density of a ring flow at the reference cell centres, one batch per step.
inline LogError flow_error_vs_reference(const TimeIndexedFlow& flow, const ReferenceSolution& ref) {
  if (!flow.on_ring()) throw InvalidInput("reference comparison needs a ring flow");
  if (flow.steps() + 1 != ref.mu.size()) throw InvalidInput("reference and flow time grids differ");
  Matrix x(ref.J, 1);
  for (std::size_t j = 0; j < ref.J; ++j) x.data[j] = ref.x(j);
  std::vector<std::vector<double>> dens(ref.mu.size());
  for (std::size_t n = 0; n < ref.mu.size(); ++n) {
    dens[n] = flow.logprob_at_step(x, n);
    for (double& v : dens[n]) v = std::exp(v);
  }
  return log_error(
      [&](std::size_t n, double xv) {
        const auto j = static_cast<std::size_t>(xv * static_cast<double>(ref.J));
        return dens[n][std::min(j, ref.J - 1)];
      },
      ref);
}

// max_j |mu_flow(x_j, T) - 1| on the reference cells.
inline double terminal_uniform_gap(const TimeIndexedFlow& flow, std::size_t cells) {
  Matrix x(cells, 1);
  for (std::size_t j = 0; j < cells; ++j) x.data[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(cells);
  double gap = 0.0;
  for (double lp : flow.logprob_at_step(x, flow.steps())) gap = std::max(gap, std::abs(std::exp(lp) - 1.0));
  return gap;
}

inline ReportOptions report_options(const RunConfig& rc) {
  ReportOptions o;
  o.wdist_samples = rc.wdist_samples;
  o.cost_samples = rc.cost_samples;
  o.seed = rc.train.seed;
  return o;
}

// The traffic problem carries its FD comparison inside the report.
inline MetricsReport evaluate(const MfgProblem& p, const TrainState& s, const std::string& run_id,
                              const ReportOptions& opt, std::size_t reference_cells,
                              std::optional<ReferenceSolution>* ref_out = nullptr,
                              std::optional<LogError>* err_out = nullptr) {
  MetricsReport r = build_report(p, s.flow, s.nets, run_id, opt);
  if (p.tag == "traffic") {
    ReferenceSolution ref = solve_traffic_fd(reference_cells, p.grid, p.sigma, p.mu0);
    LogError e = flow_error_vs_reference(s.flow, ref);
    r.ref_log_error_max = e.max;
    r.ref_log_error_mean = e.mean;
    if (ref_out) *ref_out = std::move(ref);
    if (err_out) *err_out = std::move(e);
  }
  return r;
}

inline void write_report_files(const std::string& dir, const MetricsReport& r, const TimeGrid& grid) {
  write_text(detail::join(dir, "metrics.json"), to_json(r).dump(2) + "\n");
  write_text(detail::join(dir, "metrics.txt"), report_table_text({r}));
  write_text(detail::join(dir, "log_integral.csv"), series_csv(r.log_integral, grid.T, grid.N));
  write_text(detail::join(dir, "wdist.csv"), series_csv(r.wdist, grid.T, grid.N));
}

// Forward paths under the trained nets and the flow's density path.
inline TrajectoryBatch export_paths(const MfgProblem& p, const TrainState& s, const RunConfig& rc) {
  const MeasurePath mu = measure_path(s.flow, rc.train.M_prime, StreamKey{rc.train.seed, "export-measure"});
  const WienerBatch w = gen_wiener(p.grid, rc.export_paths, p.dim, rc.train.seed ^ 0x6578706f7274ULL, 0);
  const Matrix X0 = p.mu0.sample(StreamKey{rc.train.seed, "export-x0"}, rc.export_paths);
  return simulate_forward(p, s.nets, mu, w, X0);
}

struct SolveResult {
  MfgProblem problem;
  TrainState state;
  TrainReport report;
  MetricsReport metrics;
  TrajectoryBatch paths;
};

// Trains, checkpoints every outer iteration and writes every artifact. The
// config is validated by the caller before the directory is touched.
inline SolveResult run_solve(const RunConfig& rc, const std::optional<std::string>& resume = {},
                             std::ostream* log = nullptr) {
  SolveResult res;
  res.problem = make_problem(rc);
  const MfgProblem& p = res.problem;
  std::optional<Checkpoint> loaded;
  if (resume) {
    loaded = load_checkpoint(*resume);
    if (loaded->problem != p.descriptor)
      throw InvalidInput("checkpoint '" + *resume + "' was written for a different problem");
    if (loaded->config.seed != rc.train.seed) throw InvalidInput("checkpoint seed differs from the config seed");
  }
  detail::ensure_dir(rc.out);
  Manifest manifest(rc.out, "solve", rc.source, rc.train.seed);
  write_text(detail::join(rc.out, "config.json"), rc.source.dump(2) + "\n");
  res.state = loaded ? std::move(loaded->state) : initial_state(p, rc.train);
  const std::string ck_path = detail::join(rc.out, "checkpoint.json");
  bool saved = false;
  auto save = [&](const TrainState& s) {
    save_checkpoint(ck_path, Checkpoint{p.descriptor, rc.train, s});
    saved = true;
    if (log) {
      const auto& h = s.history.back();
      *log << "outer " << s.outer << ": l_MKV " << h.l_mkv << "  l_dis " << h.l_dis << "  l_T " << h.l_T << std::endl;
    }
  };
  try {
    res.report = train(p, rc.train, res.state, save, [&](const TrainState&) { return saved ? ck_path : ""; });
  } catch (const TrainingFailure&) {
    manifest.finish("training failed");
    throw;
  }
  save_checkpoint(ck_path, Checkpoint{p.descriptor, rc.train, res.state});
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& t : res.report.timing) timing.push_back({{"value", t.value_seconds}, {"flow", t.flow_seconds}});
  manifest.doc()["phase_seconds"] = timing;
  write_text(detail::join(rc.out, "train_report.json"), train_report_json(res.report).dump(2) + "\n");
  write_text(detail::join(rc.out, "density.csv"), density_snapshot_csv(res.state.flow, p.grid, rc.train.seed));
  res.paths = export_paths(p, res.state, rc);
  write_text(detail::join(rc.out, "trajectories.csv"), trajectory_csv(res.paths, p.grid));
  std::optional<ReferenceSolution> ref;
  std::optional<LogError> err;
  res.metrics = evaluate(p, res.state, rc.problem, report_options(rc), rc.reference_cells, &ref, &err);
  write_report_files(rc.out, res.metrics, p.grid);
  if (ref) {
    write_text(detail::join(rc.out, "reference_density.csv"), reference_csv(*ref));
    write_text(detail::join(rc.out, "log_error.csv"), log_error_csv(*err, *ref));
  }
  manifest.finish("ok");
  return res;
}

struct ReferenceArgs {
  std::size_t J = 128;
  std::size_t N = 50;
  double T = 1.0;
  double sigma = 0.5;
  nlohmann::json mu0 = BaseDensity::sine_ring(0.8, 1).descriptor();
  std::string out = "runs/reference";
};

inline ReferenceSolution run_reference(const ReferenceArgs& a) {
  if (a.J < 16) throw InvalidInput("reference: J must be at least 16");
  BaseDensity mu0 = BaseDensity::uniform_ring();
  try {
    mu0 = BaseDensity::from_descriptor(a.mu0);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("reference: bad --mu0 descriptor: ") + e.what());
  }
  const TimeGrid grid(a.T, a.N);
  detail::ensure_dir(a.out);
  const nlohmann::json echo = {{"J", a.J}, {"N", a.N}, {"T", a.T}, {"sigma", a.sigma}, {"mu0", a.mu0}};
  Manifest manifest(a.out, "reference", echo, 0);
  ReferenceSolution r = solve_traffic_fd(a.J, grid, a.sigma, mu0);
  double mass_err = 0.0, gap0 = 0.0, gapT = 0.0;
  for (std::size_t n = 0; n <= grid.N; ++n) mass_err = std::max(mass_err, std::abs(r.mass(n) - 1.0));
  for (std::size_t j = 0; j < r.J; ++j) {
    gap0 = std::max(gap0, std::abs(r.mu.front()[j] - 1.0));
    gapT = std::max(gapT, std::abs(r.mu.back()[j] - 1.0));
  }
  write_text(detail::join(a.out, "reference_density.csv"), reference_csv(r));
  write_text(detail::join(a.out, "reference_value.csv"), reference_csv(r, true));
  const nlohmann::json summary = {{"J", r.J},
                                  {"N", grid.N},
                                  {"sigma", a.sigma},
                                  {"picard_iterations", r.residual_history.size()},
                                  {"picard_residual", r.picard_residual},
                                  {"max_mass_error", mass_err},
                                  {"sup_initial_deviation", gap0},
                                  {"sup_terminal_deviation", gapT}};
  write_text(detail::join(a.out, "reference.json"), summary.dump(2) + "\n");
  manifest.finish("ok");
  return r;
}

// Metrics for one or more checkpoints; returns the reports in order.
inline std::vector<MetricsReport> run_metrics(const std::vector<std::string>& checkpoints, const std::string& out,
                                              std::size_t reference_cells = 128) {
  std::vector<Checkpoint> cks;
  for (const auto& path : checkpoints) cks.push_back(load_checkpoint(path));
  detail::ensure_dir(out);
  Manifest manifest(out, "metrics", {{"checkpoints", checkpoints}}, cks.empty() ? 0 : cks.front().config.seed);
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const MfgProblem p = problem_from_descriptor(cks[i].problem);
    ReportOptions opt;
    opt.seed = cks[i].config.seed;
    std::optional<ReferenceSolution> ref;
    std::optional<LogError> err;
    reports.push_back(evaluate(p, cks[i].state, std::filesystem::path(checkpoints[i]).parent_path().filename().string(),
                               opt, reference_cells, &ref, &err));
    const std::string sub = cks.size() == 1 ? out : detail::join(out, std::to_string(i) + "-" + p.tag);
    detail::ensure_dir(sub);
    write_report_files(sub, reports.back(), p.grid);
    if (err) write_text(detail::join(sub, "log_error.csv"), log_error_csv(*err, *ref));
  }
  write_text(detail::join(out, "table.json"), report_table_json(reports).dump(2) + "\n");
  write_text(detail::join(out, "table.txt"), report_table_text(reports));
  manifest.finish("ok");
  return reports;
}

struct ProbeOutcome {
  nlohmann::json report;
  bool pass = false;
  std::string summary;
};

inline const std::vector<std::string>& probe_kinds() {
  static const std::vector<std::string> k = {"em-strong", "em-weak", "particle-rate", "grad-check", "flow-roundtrip"};
  return k;
}

inline ProbeOutcome run_probe(const std::string& kind, std::uint64_t seed) {
  ProbeOutcome o;
  char buf[160];
  if (kind == "em-strong" || kind == "em-weak") {
    std::vector<double> dts;
    for (int k = 4; k <= 9; ++k) dts.push_back(std::ldexp(1.0, -k));
    const EmProbeResult r = em_order_probe(dts, 10000, seed);
    const bool strong = kind == "em-strong";
    const double slope = strong ? r.strong_order : r.weak_order;
    o.pass = strong ? (slope >= 0.4 && slope <= 0.6) : (slope >= 0.8 && slope <= 1.2);
    o.report = {{"probe", kind},          {"dt", r.dt},       {"strong_error", r.strong_error},
                {"weak_error", r.weak_error}, {"strong_slope", r.strong_order}, {"weak_slope", r.weak_order}};
    std::snprintf(buf, sizeof buf, "%s slope %.4f (accepted range %s)", strong ? "strong" : "weak", slope,
                  strong ? "[0.4, 0.6]" : "[0.8, 1.2]");
  } else if (kind == "particle-rate") {
    const ParticleRateResult r = particle_rate_probe({100, 1000, 10000}, seed, 20);
    o.pass = r.slope >= -0.6 && r.slope <= -0.4;
    o.report = {{"probe", kind}, {"M", r.sample_sizes}, {"mean_w1", r.mean_w1}, {"slope", r.slope}};
    std::snprintf(buf, sizeof buf, "W1 slope %.4f (accepted range [-0.6, -0.4])", r.slope);
  } else if (kind == "grad-check") {
    const GradCheck g = grad_check(seed);
    o.pass = g.worst() < 1e-4;
    o.report = {{"probe", kind}, {"l_mkv", g.l_mkv}, {"l_dis", g.l_dis}, {"l_T", g.l_T}, {"max_rel_error", g.worst()}};
    std::snprintf(buf, sizeof buf, "max relative error %.3e (l_MKV %.2e, l_dis %.2e, l_T %.2e; limit 1e-4)",
                  g.worst(), g.l_mkv, g.l_dis, g.l_T);
  } else if (kind == "flow-roundtrip") {
    const auto checks = flow_roundtrip_check(seed);
    double err = 0.0, ld = 0.0;
    o.report = {{"probe", kind}, {"blocks", nlohmann::json::array()}};
    for (const auto& c : checks) {
      err = std::max(err, c.max_error);
      ld = std::max(ld, c.max_logdet_sum);
      o.report["blocks"].push_back({{"kind", c.kind}, {"max_error", c.max_error}, {"max_logdet_sum", c.max_logdet_sum}});
    }
    o.pass = err < 1e-6 && ld < 1e-8;
    std::snprintf(buf, sizeof buf, "round-trip error %.3e (limit 1e-6), log-det antisymmetry %.3e (limit 1e-8)", err,
                  ld);
  } else {
    throw InvalidInput("unknown probe '" + kind + "' (expected em-strong, em-weak, particle-rate, grad-check or "
                       "flow-roundtrip)");
  }
  o.summary = buf;
  o.report["pass"] = o.pass;
  return o;
}

}  // namespace nfmkv
