#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "nfmkv/errors.hpp"
#include "nfmkv/flows/time_flow.hpp"
#include "nfmkv/sde/value_nets.hpp"

namespace nfmkv {

struct TrainConfig {
  std::size_t M = 512;          // trajectories per value epoch / trace
  std::size_t M_prime = 512;    // flow samples describing mu_{t_n}
  std::size_t outer_iters = 30;
  std::size_t value_epochs = 200;
  std::size_t flow_epochs = 200;
  double lr_value = 1e-3;
  double lr_flow = 1e-3;
  double conv_tol = 1e-3;
  std::size_t conv_window = 3;
  std::uint64_t seed = 0;
  std::size_t warmup_steps = 200;  // l_T-only flow pre-fit; skipped when g = 0
  std::size_t dis_step_batch = 0;  // steps per l_dis evaluation (0 = all N)
  double lr_decay = 1.0;           // both rates scale by lr_decay^outer
  std::size_t trace_refresh = 0;   // flow epochs per trace redraw (0 = one trace per phase)
  double grad_clip_value = 0.0;    // global gradient-norm caps before Adam (0 = off)
  double grad_clip_flow = 0.0;
  ValueNetOptions value_net;
  FlowOptions flow;

  void validate() const {
    auto positive = [](std::size_t v, const char* f) {
      if (v == 0) throw InvalidInput(std::string("config field '") + f + "' must be at least 1");
    };
    positive(M, "M");
    positive(M_prime, "M_prime");
    positive(outer_iters, "outer_iters");
    positive(value_epochs, "value_epochs");
    positive(flow_epochs, "flow_epochs");
    if (!(lr_value > 0.0)) throw InvalidInput("config field 'lr_value' must be positive");
    if (!(lr_flow > 0.0)) throw InvalidInput("config field 'lr_flow' must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidInput("config field 'lr_decay' must lie in (0, 1]");
    if (!(conv_tol > 0.0)) throw InvalidInput("config field 'conv_tol' must be positive");
    if (!(grad_clip_value >= 0.0)) throw InvalidInput("config field 'grad_clip_value' must be non-negative");
    if (!(grad_clip_flow >= 0.0)) throw InvalidInput("config field 'grad_clip_flow' must be non-negative");
    if (conv_window < 2) throw InvalidInput("config field 'conv_window' must be at least 2");
    if (flow.blocks_per_step == 0 || flow.hidden == 0 || flow.spline_bins < 2)
      throw InvalidInput("config field 'flow' has an empty architecture");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidInput("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw InvalidInput("unknown config field '" + where + it.key() + "'");
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("config field '" + where + key + "' has the wrong type: " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"M", c.M},
          {"M_prime", c.M_prime},
          {"outer_iters", c.outer_iters},
          {"value_epochs", c.value_epochs},
          {"flow_epochs", c.flow_epochs},
          {"lr_value", c.lr_value},
          {"lr_flow", c.lr_flow},
          {"conv_tol", c.conv_tol},
          {"conv_window", c.conv_window},
          {"seed", c.seed},
          {"warmup_steps", c.warmup_steps},
          {"dis_step_batch", c.dis_step_batch},
          {"lr_decay", c.lr_decay},
          {"trace_refresh", c.trace_refresh},
          {"grad_clip_value", c.grad_clip_value},
          {"grad_clip_flow", c.grad_clip_flow},
          {"value_net",
           {{"u0_hidden", c.value_net.u0_hidden},
            {"z_hidden", c.value_net.z_hidden},
            {"activation", c.value_net.activation == Activation::tanh ? "tanh" : "relu"},
            {"z_output_gain", c.value_net.z_output_gain}}},
          {"flow",
           {{"blocks_per_step", c.flow.blocks_per_step},
            {"hidden", c.flow.hidden},
            {"spline_bins", c.flow.spline_bins},
            {"output_gain", c.flow.output_gain}}}};
}

// Missing fields keep their defaults; unknown fields are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train.") {
  detail::reject_unknown(j,
                         {"M", "M_prime", "outer_iters", "value_epochs", "flow_epochs", "lr_value", "lr_flow",
                          "conv_tol", "conv_window", "seed", "warmup_steps", "dis_step_batch",
                          "lr_decay", "trace_refresh", "grad_clip_value", "grad_clip_flow", "value_net", "flow"},
                         where);
  TrainConfig c;
  detail::read_field(j, "M", c.M, where);
  detail::read_field(j, "M_prime", c.M_prime, where);
  detail::read_field(j, "outer_iters", c.outer_iters, where);
  detail::read_field(j, "value_epochs", c.value_epochs, where);
  detail::read_field(j, "flow_epochs", c.flow_epochs, where);
  detail::read_field(j, "lr_value", c.lr_value, where);
  detail::read_field(j, "lr_flow", c.lr_flow, where);
  detail::read_field(j, "conv_tol", c.conv_tol, where);
  detail::read_field(j, "conv_window", c.conv_window, where);
  detail::read_field(j, "seed", c.seed, where);
  detail::read_field(j, "warmup_steps", c.warmup_steps, where);
  detail::read_field(j, "dis_step_batch", c.dis_step_batch, where);
  detail::read_field(j, "lr_decay", c.lr_decay, where);
  detail::read_field(j, "trace_refresh", c.trace_refresh, where);
  detail::read_field(j, "grad_clip_value", c.grad_clip_value, where);
  detail::read_field(j, "grad_clip_flow", c.grad_clip_flow, where);
  if (j.contains("value_net")) {
    const auto& v = j.at("value_net");
    const std::string w = where + "value_net.";
    detail::reject_unknown(v, {"u0_hidden", "z_hidden", "activation", "z_output_gain"}, w);
    detail::read_field(v, "u0_hidden", c.value_net.u0_hidden, w);
    detail::read_field(v, "z_hidden", c.value_net.z_hidden, w);
    detail::read_field(v, "z_output_gain", c.value_net.z_output_gain, w);
    std::string act = "tanh";
    detail::read_field(v, "activation", act, w);
    if (act == "tanh") c.value_net.activation = Activation::tanh;
    else if (act == "relu") c.value_net.activation = Activation::relu;
    else throw InvalidInput("config field '" + w + "activation' must be tanh or relu");
  }
  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    const std::string w = where + "flow.";
    detail::reject_unknown(f, {"blocks_per_step", "hidden", "spline_bins", "output_gain"}, w);
    detail::read_field(f, "blocks_per_step", c.flow.blocks_per_step, w);
    detail::read_field(f, "hidden", c.flow.hidden, w);
    detail::read_field(f, "spline_bins", c.flow.spline_bins, w);
    detail::read_field(f, "output_gain", c.flow.output_gain, w);
  }
  c.validate();
  return c;
}

}  // namespace nfmkv
