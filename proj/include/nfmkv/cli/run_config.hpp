#pragma once

#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nfmkv/errors.hpp"
#include "nfmkv/problems/catalog.hpp"
#include "nfmkv/trainer/config.hpp"

namespace nfmkv {

// Problem parameters a config may change. Unset fields keep the problem's
// defaults:
//   traffic        T=1 N=50  sigma=0.5     mu0 = 1 + 0.8 sin(2 pi x)
//   crowd2d        T=1 N=100 sigma=sqrt 2  mu0 = N((-2,0), 0.5^2 I)  x_T=(2,0)
//   crowd50d       T=1 N=100 sigma=sqrt 2  mu0 = N((-2,-2,0..), 0.5^2 I)  x_T=(2,2,0..)
//   obstacle       T=1 N=20  sigma=sqrt 2  mu0 = N((-4,0), 0.1^2 I)  x_T=(4,0)  lambda_obs=5
//   half_terminal  T=1 N=20  sigma=sqrt 2  mu0 = N((-4,0), 0.1^2 I)  g = exp((x_1-4)^2)
struct ProblemOverrides {
  std::optional<double> T, sigma, lambda_obs;
  std::optional<std::size_t> N;
  std::optional<std::vector<double>> x_T;
  std::optional<nlohmann::json> mu0;  // base density descriptor
};

struct RunConfig {
  std::string problem;
  ProblemOverrides overrides;
  TrainConfig train;
  std::string out;                   // default runs/<problem>
  std::size_t export_paths = 500;    // trajectories written to trajectories.csv
  std::size_t reference_cells = 128; // FD grid for the traffic error report
  std::size_t wdist_samples = 512;
  std::size_t cost_samples = 512;
  nlohmann::json source;             // the document as read, echoed verbatim
};

inline const std::vector<std::string>& problem_tags() {
  static const std::vector<std::string> tags = {"traffic", "crowd2d", "crowd50d", "obstacle", "half_terminal"};
  return tags;
}

inline MfgProblem make_problem(const std::string& tag, const ProblemOverrides& o) {
  auto mu0 = [&](BaseDensity fallback) { return o.mu0 ? BaseDensity::from_descriptor(*o.mu0) : fallback; };
  const double T = o.T.value_or(1.0);
  const double sigma = o.sigma.value_or(tag == "traffic" ? 0.5 : std::numbers::sqrt2);
  if (tag != "obstacle" && o.lambda_obs) throw InvalidInput("override 'lambda_obs' applies to obstacle only");
  if (tag == "half_terminal" && o.x_T) throw InvalidInput("half_terminal has no x_T override (g fixes x_1 = 4 only)");
  if (tag == "traffic") {
    if (o.x_T) throw InvalidInput("traffic has no x_T override");
    return make_traffic_flow(TimeGrid(T, o.N.value_or(50)), sigma, mu0(BaseDensity::sine_ring(0.8, 1)));
  }
  if (tag == "crowd2d") {
    auto p = make_crowd_motion(2, o.x_T.value_or(std::vector<double>{2.0, 0.0}), sigma, TimeGrid(T, o.N.value_or(100)),
                               mu0(BaseDensity::gaussian({-2.0, 0.0}, {0.5, 0.5})));
    p.tag = tag;
    p.descriptor["tag"] = tag;
    return p;
  }
  if (tag == "crowd50d") {
    std::vector<double> mean(50, 0.0), target(50, 0.0);
    mean[0] = mean[1] = -2.0;
    target[0] = target[1] = 2.0;
    auto p = make_crowd_motion(50, o.x_T.value_or(target), sigma, TimeGrid(T, o.N.value_or(100)),
                               mu0(BaseDensity::gaussian(mean, std::vector<double>(50, 0.5))));
    p.tag = tag;
    p.descriptor["tag"] = tag;
    return p;
  }
  if (tag == "obstacle")
    return make_crowd_obstacle(TimeGrid(T, o.N.value_or(20)), sigma, o.lambda_obs.value_or(5.0),
                               mu0(BaseDensity::gaussian({-4.0, 0.0}, {0.1, 0.1})),
                               o.x_T.value_or(std::vector<double>{4.0, 0.0}));
  if (tag == "half_terminal")
    return make_half_terminal(TimeGrid(T, o.N.value_or(20)), sigma,
                              mu0(BaseDensity::gaussian({-4.0, 0.0}, {0.1, 0.1})));
  throw InvalidInput("unknown problem '" + tag + "' (expected traffic, crowd2d, crowd50d, obstacle or half_terminal)");
}

inline MfgProblem make_problem(const RunConfig& rc) { return make_problem(rc.problem, rc.overrides); }

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"problem", "overrides", "train", "out", "seed", "export_paths", "reference_cells",
                          "wdist_samples", "cost_samples"},
                         "");
  RunConfig rc;
  rc.source = j;
  if (!j.contains("problem")) throw InvalidInput("config field 'problem' is required");
  detail::read_field(j, "problem", rc.problem, "");
  if (std::find(problem_tags().begin(), problem_tags().end(), rc.problem) == problem_tags().end())
    throw InvalidInput("config field 'problem': unknown problem '" + rc.problem + "'");
  if (j.contains("overrides")) {
    const auto& o = j.at("overrides");
    detail::reject_unknown(o, {"T", "N", "sigma", "x_T", "mu0", "lambda_obs"}, "overrides.");
    auto opt = [&](const char* key, auto& field) {
      if (!o.contains(key)) return;
      typename std::decay_t<decltype(field)>::value_type v{};
      detail::read_field(o, key, v, "overrides.");
      field = v;
    };
    opt("T", rc.overrides.T);
    opt("N", rc.overrides.N);
    opt("sigma", rc.overrides.sigma);
    opt("x_T", rc.overrides.x_T);
    opt("lambda_obs", rc.overrides.lambda_obs);
    if (o.contains("mu0")) rc.overrides.mu0 = o.at("mu0");
  }
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"), "train.");
  if (j.contains("seed")) detail::read_field(j, "seed", rc.train.seed, "");
  rc.out = "runs/" + rc.problem;
  detail::read_field(j, "out", rc.out, "");
  detail::read_field(j, "export_paths", rc.export_paths, "");
  detail::read_field(j, "reference_cells", rc.reference_cells, "");
  detail::read_field(j, "wdist_samples", rc.wdist_samples, "");
  detail::read_field(j, "cost_samples", rc.cost_samples, "");
  if (rc.export_paths == 0) throw InvalidInput("config field 'export_paths' must be at least 1");
  if (rc.wdist_samples == 0 || rc.wdist_samples > 2048)
    throw InvalidInput("config field 'wdist_samples' must lie in [1, 2048]");
  if (rc.cost_samples == 0) throw InvalidInput("config field 'cost_samples' must be at least 1");
  // build once so bad overrides surface as input errors before any output
  try {
    (void)make_problem(rc);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("config field 'overrides.mu0': ") + e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace nfmkv
