#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nfmkv/cli/commands.hpp"

using namespace nfmkv;

namespace {

int fail(const std::exception& e) {
  std::cerr << "error: " << e.what() << '\n';
  return exit_code_for(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nfmkv: mean-field games through time-indexed normalizing flows"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> checkpoints;
  bool table = false;

  auto* solve = app.add_subcommand("solve", "train a problem from a run config and export every artifact");
  solve->add_option("--config", config_path, "run config (JSON)")->required();
  solve->add_option("--out", out, "output directory (overrides the config)");
  solve->add_option("--seed", seed, "seed (overrides the config)");
  solve->add_option("--checkpoint", checkpoint, "resume from this checkpoint");

  ReferenceArgs ref;
  std::string mu0_text;
  auto* reference = app.add_subcommand("reference", "finite-difference solution of the ring traffic problem");
  reference->add_option("--J", ref.J, "spatial cells")->capture_default_str();
  reference->add_option("--N", ref.N, "time steps")->capture_default_str();
  reference->add_option("--T", ref.T, "horizon")->capture_default_str();
  reference->add_option("--sigma", ref.sigma, "diffusion")->capture_default_str();
  reference->add_option("--mu0", mu0_text, "initial density descriptor (JSON), default 1 + 0.8 sin(2 pi x)");
  reference->add_option("--out", ref.out, "output directory")->capture_default_str();

  auto* metrics = app.add_subcommand("metrics", "evaluation battery for trained checkpoints");
  metrics->add_option("--checkpoint", checkpoints, "checkpoint file (repeat for a multi-run table)");
  metrics->add_option("--out", out, "output directory");
  metrics->add_flag("--table", table, "print the aligned table");

  std::string kind;
  auto* probe = app.add_subcommand("probe", "convergence and consistency probes");
  probe->add_option("kind", kind, "em-strong | em-weak | particle-rate | grad-check | flow-roundtrip")->required();
  probe->add_option("--seed", seed, "seed");
  probe->add_option("--out", out, "write probe.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    threads_from_env();
    if (solve->parsed()) {
      RunConfig rc = load_run_config(config_path);
      if (!out.empty()) rc.out = out;
      if (seed) rc.train.seed = *seed;
      const auto res = run_solve(rc, checkpoint.empty() ? std::nullopt : std::optional<std::string>(checkpoint),
                                 &std::cout);
      std::cout << report_table_text({res.metrics});
      if (res.metrics.ref_log_error_max)
        std::cout << "max log10 relative error vs reference: " << *res.metrics.ref_log_error_max << '\n';
      std::cout << "artifacts in " << rc.out << '\n';
      return kExitOk;
    }
    if (reference->parsed()) {
      if (!mu0_text.empty()) {
        try {
          ref.mu0 = nlohmann::json::parse(mu0_text);
        } catch (const nlohmann::json::parse_error& e) {
          throw InvalidInput(std::string("--mu0 is not valid JSON: ") + e.what());
        }
      }
      const auto r = run_reference(ref);
      std::cout << "J " << r.J << ", " << r.residual_history.size() << " Picard iterations, residual "
                << r.picard_residual << "\nartifacts in " << ref.out << '\n';
      return kExitOk;
    }
    if (metrics->parsed()) {
      if (out.empty()) out = "runs/metrics";
      const auto reports = run_metrics(checkpoints, out);
      if (table) std::cout << report_table_text(reports);
      std::cout << reports.size() << " report(s) in " << out << '\n';
      return kExitOk;
    }
    if (probe->parsed()) {
      const ProbeOutcome o = run_probe(kind, seed.value_or(0));
      if (!out.empty()) {
        detail::ensure_dir(out);
        Manifest manifest(out, "probe " + kind, {{"kind", kind}}, seed.value_or(0));
        write_text(detail::join(out, "probe.json"), o.report.dump(2) + "\n");
        manifest.finish(o.pass ? "pass" : "outside tolerance");
      }
      std::cout << kind << ": " << o.summary << (o.pass ? "  [within range]" : "  [OUTSIDE RANGE]") << '\n';
      return o.pass ? kExitOk : kExitRuntime;
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return kExitOk;
}
