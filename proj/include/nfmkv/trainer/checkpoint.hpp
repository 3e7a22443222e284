#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nfmkv/errors.hpp"
#include "nfmkv/problems/catalog.hpp"
#include "nfmkv/trainer/trainer.hpp"

namespace nfmkv {

inline constexpr const char* kCheckpointFormat = "nfmkv-checkpoint";
inline constexpr const char* kCheckpointVersion = "1";

// A checkpoint carries the problem, the config and the full TrainState.
struct Checkpoint {
  nlohmann::json problem;
  TrainConfig config;
  TrainState state;
};

namespace detail {

inline nlohmann::json params_json(const ParamStore& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, seg] : s.segments()) {
    const auto v = s.view(seg);
    arr.push_back({{"name", name}, {"values", std::vector<double>(v.begin(), v.end())}});
  }
  return arr;
}

inline nlohmann::json adam_json(const AdamState& a) { return {{"m", a.m}, {"v", a.v}, {"step", a.step}}; }

// Field access that reports the dotted path of whatever is missing or mistyped.
template <class T>
T ck_get(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + key, e.what());
  }
}

inline const nlohmann::json& ck_at(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + key, "missing field");
  return j.at(key);
}

inline void load_params(const nlohmann::json& arr, ParamStore& store, const std::string& where) {
  if (!arr.is_array()) throw ParseError(where, "expected an array of named segments");
  const auto& segs = store.segments();
  if (arr.size() != segs.size())
    throw ParseError(where, "expected " + std::to_string(segs.size()) + " segments, found " +
                                std::to_string(arr.size()));
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "].";
    const auto name = ck_get<std::string>(arr[i], "name", w);
    if (name != segs[i].first) throw ParseError(w + "name", "expected '" + segs[i].first + "', found '" + name + "'");
    const auto vals = ck_get<std::vector<double>>(arr[i], "values", w);
    auto dst = store.view(segs[i].second);
    if (vals.size() != dst.size())
      throw ParseError(w + "values", "expected " + std::to_string(dst.size()) + " values");
    std::copy(vals.begin(), vals.end(), dst.begin());
  }
}

inline AdamState load_adam(const nlohmann::json& j, std::size_t size, const std::string& where) {
  AdamState a;
  a.m = ck_get<std::vector<double>>(j, "m", where);
  a.v = ck_get<std::vector<double>>(j, "v", where);
  a.step = ck_get<long>(j, "step", where);
  // a fresh optimizer has empty moments
  if (a.m.size() != a.v.size() || (!a.m.empty() && a.m.size() != size))
    throw ParseError(where + "m", "moment vectors do not match the parameter count");
  return a;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const Checkpoint& ck) {
  const TrainState& s = ck.state;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) hist.push_back({{"l_mkv", r.l_mkv}, {"l_dis", r.l_dis}, {"l_T", r.l_T}});
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"problem", ck.problem},
          {"config", to_json(ck.config)},
          {"value_params", detail::params_json(s.nets.params())},
          {"flow_params", detail::params_json(s.flow.params())},
          {"adam_value", detail::adam_json(s.adam_value)},
          {"adam_flow", detail::adam_json(s.adam_flow)},
          {"outer", s.outer},
          {"rng",
           {{"seed", ck.config.seed}, {"wiener_counter", s.wiener_counter}, {"flow_counter", s.flow_counter}}},
          {"warmed_up", s.warmed_up},
          {"warmup_initial_lT", s.warmup_initial_lT},
          {"warmup_final_lT", s.warmup_final_lT},
          {"history", hist}};
}

inline std::string checkpoint_text(const Checkpoint& ck) { return checkpoint_json(ck).dump(1) + "\n"; }

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("<root>", "checkpoint must be an object");
  if (detail::ck_get<std::string>(j, "format", "") != kCheckpointFormat)
    throw ParseError("format", "not an nfmkv checkpoint");
  const auto version = detail::ck_get<std::string>(j, "version", "");
  if (version != kCheckpointVersion) throw UnsupportedVersion(version);
  Checkpoint ck;
  ck.problem = detail::ck_at(j, "problem", "");
  MfgProblem p;
  try {
    p = problem_from_descriptor(ck.problem);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("problem", e.what());
  } catch (const InvalidInput& e) {
    throw ParseError("problem", e.what());
  }
  try {
    ck.config = train_config_from_json(detail::ck_at(j, "config", ""), "config.");
  } catch (const InvalidInput& e) {
    throw ParseError("config", e.what());
  }
  ck.state = initial_state(p, ck.config);
  TrainState& s = ck.state;
  detail::load_params(detail::ck_at(j, "value_params", ""), s.nets.params(), "value_params");
  detail::load_params(detail::ck_at(j, "flow_params", ""), s.flow.params(), "flow_params");
  s.adam_value = detail::load_adam(detail::ck_at(j, "adam_value", ""), s.nets.params().size(), "adam_value.");
  s.adam_flow = detail::load_adam(detail::ck_at(j, "adam_flow", ""), s.flow.params().size(), "adam_flow.");
  s.outer = detail::ck_get<std::size_t>(j, "outer", "");
  const auto& rng = detail::ck_at(j, "rng", "");
  if (detail::ck_get<std::uint64_t>(rng, "seed", "rng.") != ck.config.seed)
    throw ParseError("rng.seed", "does not match config.seed");
  s.wiener_counter = detail::ck_get<std::uint64_t>(rng, "wiener_counter", "rng.");
  s.flow_counter = detail::ck_get<std::uint64_t>(rng, "flow_counter", "rng.");
  s.warmed_up = detail::ck_get<bool>(j, "warmed_up", "");
  s.warmup_initial_lT = detail::ck_get<double>(j, "warmup_initial_lT", "");
  s.warmup_final_lT = detail::ck_get<double>(j, "warmup_final_lT", "");
  const auto& hist = detail::ck_at(j, "history", "");
  if (!hist.is_array()) throw ParseError("history", "expected an array");
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const std::string w = "history[" + std::to_string(i) + "].";
    s.history.push_back({detail::ck_get<double>(hist[i], "l_mkv", w), detail::ck_get<double>(hist[i], "l_dis", w),
                         detail::ck_get<double>(hist[i], "l_T", w)});
  }
  return ck;
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("<document>", e.what());
  }
  return checkpoint_from_json(j);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  for (const auto* store : {&ck.state.nets.params(), &ck.state.flow.params()})
    if (!store->all_finite()) throw NumericError("refusing to checkpoint non-finite parameters");
  // write-then-rename so a crash never leaves a truncated checkpoint behind
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write checkpoint '" + path + "'");
    out << checkpoint_text(ck);
    if (!out) throw InvalidInput("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InvalidInput("cannot move checkpoint into '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace nfmkv
