#pragma once

// Scenario configuration: a flat "key = value" text format with dotted
// section names. Unknown keys, malformed values and duplicate keys are errors.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dopo/dopo_model.hpp"
#include "dopo/errors.hpp"
#include "dopo/lindblad.hpp"

namespace dopo {

struct SweepAxis {
  std::string key;
  std::vector<double> values;

  bool operator==(const SweepAxis&) const = default;
};

struct ScenarioConfig {
  std::string scenario = "custom";
  std::string protocol = "adiabatic";  // adiabatic | nonequilibrium
  std::string initial = "vacuum";      // vacuum | cat

  double S = -1.0;
  double gamma_d = 1.0;
  double gamma_s = 0.0;
  double gd_over_gc = 3.0;  // 0 means an instantaneous interaction stage
  double g_nl = 15.0;
  int n_modes = 2;

  double t_p = 3.0;   // units of 1/Gamma_d
  int n_p = 9;
  int n_i = 1;
  double t_nl = 0.5;  // units of 1/g_nl

  int signal_cutoff = 16;
  int pump_cutoff = 8;

  std::string method = "rk4";  // rk4 | dopri5
  double dt = 0.0;             // 0 selects the automatic step rule
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;

  bool trajectory = false;
  int trajectory_samples = 200;

  std::vector<SweepAxis> sweep;

  int workers = 1;
  double max_cost = 0.0;  // 0 disables the guard
  std::string output_dir = "out";

  bool operator==(const ScenarioConfig&) const = default;

  DopoParams dopo_params() const {
    DopoParams p;
    p.S = S;
    p.gamma_d = gamma_d;
    p.gamma_s = gamma_s;
    p.g_c = gd_over_gc > 0.0 ? gamma_d / gd_over_gc : std::numeric_limits<double>::infinity();
    p.g_nl = g_nl;
    p.n_modes = n_modes;
    return p;
  }

  double interaction_time() const { return gd_over_gc > 0.0 ? M_PI * gd_over_gc / gamma_d : 0.0; }

  /// Step rule: min(1e-2/Gamma_d, 5e-2/g_c, 5e-2/|S|, 5e-2/g_nl) unless dt is set.
  IntegratorConfig integrator() const {
    IntegratorConfig cfg;
    double h = dt;
    if (h == 0.0) {
      h = 1e-2 / gamma_d;
      if (gd_over_gc > 0.0) h = std::min(h, 5e-2 * gd_over_gc / gamma_d);
      if (S != 0.0) h = std::min(h, 5e-2 / std::abs(S));
      if (protocol == "nonequilibrium" && g_nl > 0.0) h = std::min(h, 5e-2 / g_nl);
    }
    cfg.dt = h;
    cfg.method = method == "dopri5" ? IntegratorConfig::Method::Dopri5 : IntegratorConfig::Method::Rk4;
    cfg.rel_tol = rel_tol;
    cfg.abs_tol = abs_tol;
    return cfg;
  }

  void validate() const;
};

namespace detail {

using ConfigField = std::variant<double ScenarioConfig::*, int ScenarioConfig::*, bool ScenarioConfig::*,
                                 std::string ScenarioConfig::*>;

struct ConfigKey {
  const char* name;
  ConfigField field;
  bool sweepable;
  bool physical;  // part of the config hash
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ScenarioConfig;
  static const std::vector<ConfigKey> keys = {
      {"scenario", &C::scenario, false, true},
      {"protocol", &C::protocol, false, true},
      {"initial", &C::initial, false, true},
      {"params.S", &C::S, true, true},
      {"params.gamma_d", &C::gamma_d, true, true},
      {"params.gamma_s", &C::gamma_s, true, true},
      {"params.gd_over_gc", &C::gd_over_gc, true, true},
      {"params.g_nl", &C::g_nl, true, true},
      {"params.n_modes", &C::n_modes, false, true},
      {"stage.t_p", &C::t_p, true, true},
      {"stage.n_p", &C::n_p, true, true},
      {"stage.n_i", &C::n_i, true, true},
      {"stage.t_nl", &C::t_nl, true, true},
      {"cutoff.signal", &C::signal_cutoff, false, true},
      {"cutoff.pump", &C::pump_cutoff, false, true},
      {"integrator.method", &C::method, false, true},
      {"integrator.dt", &C::dt, false, true},
      {"integrator.rel_tol", &C::rel_tol, false, true},
      {"integrator.abs_tol", &C::abs_tol, false, true},
      {"record.trajectory", &C::trajectory, false, true},
      {"record.trajectory_samples", &C::trajectory_samples, false, true},
      {"run.workers", &C::workers, false, false},
      {"run.max_cost", &C::max_cost, false, false},
      {"output.dir", &C::output_dir, false, false},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view key, std::string_view text) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

inline int parse_int(std::string_view key, std::string_view text) {
  text = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Sets one key (including "sweep.<key>" axes) from its text value.
inline void set_config_value(ScenarioConfig& cfg, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  value = detail::trim(value);
  if (key.starts_with("sweep.")) {
    const std::string_view target = key.substr(6);
    const detail::ConfigKey* k = detail::find_config_key(target);
    if (!k) throw ConfigError("unknown sweep axis '" + std::string(target) + "'");
    if (!k->sweepable) throw ConfigError("'" + std::string(target) + "' cannot be swept");
    SweepAxis axis{std::string(target), {}};
    std::size_t pos = 0;
    while (pos <= value.size()) {
      const std::size_t comma = value.find(',', pos);
      const std::string_view item = value.substr(pos, comma == std::string_view::npos ? value.npos : comma - pos);
      if (detail::trim(item).empty()) {
        if (comma == std::string_view::npos && axis.values.empty() && detail::trim(value).empty()) break;
        throw ConfigError(std::string(key) + ": empty list element");
      }
      const double v = detail::parse_double(key, item);
      if (std::holds_alternative<int ScenarioConfig::*>(k->field) && v != std::round(v)) {
        throw ConfigError(std::string(key) + ": values must be integers");
      }
      axis.values.push_back(v);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (axis.values.empty()) throw ConfigError(std::string(key) + ": sweep axis must list at least one value");
    auto it = std::find_if(cfg.sweep.begin(), cfg.sweep.end(), [&](const SweepAxis& a) { return a.key == target; });
    if (it != cfg.sweep.end()) {
      *it = std::move(axis);
    } else {
      cfg.sweep.push_back(std::move(axis));
    }
    return;
  }
  const detail::ConfigKey* k = detail::find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, double>) {
          cfg.*member = detail::parse_double(key, value);
        } else if constexpr (std::is_same_v<T, int>) {
          cfg.*member = detail::parse_int(key, value);
        } else if constexpr (std::is_same_v<T, bool>) {
          cfg.*member = detail::parse_bool(key, value);
        } else {
          cfg.*member = std::string(value);
        }
      },
      k->field);
}

/// Sets a numeric key from a sweep value.
inline void set_config_number(ScenarioConfig& cfg, std::string_view key, double v) {
  const detail::ConfigKey* k = detail::find_config_key(key);
  if (!k || !k->sweepable) throw ConfigError("'" + std::string(key) + "' is not a sweepable key");
  if (auto* d = std::get_if<double ScenarioConfig::*>(&k->field)) {
    cfg.**d = v;
  } else if (auto* i = std::get_if<int ScenarioConfig::*>(&k->field)) {
    cfg.**i = static_cast<int>(std::lround(v));
  }
}

inline std::string get_config_value(const ScenarioConfig& cfg, std::string_view key) {
  const detail::ConfigKey* k = detail::find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, double>) {
          return detail::format_double(cfg.*member);
        } else if constexpr (std::is_same_v<T, int>) {
          return std::to_string(cfg.*member);
        } else if constexpr (std::is_same_v<T, bool>) {
          return cfg.*member ? "true" : "false";
        } else {
          return cfg.*member;
        }
      },
      k->field);
}

inline void ScenarioConfig::validate() const {
  static const std::vector<std::string> scenarios = {"fig3", "fig4", "fig5", "fig6", "fig7",
                                                     "fig8", "fig9a", "fig9b", "custom"};
  if (std::find(scenarios.begin(), scenarios.end(), scenario) == scenarios.end()) {
    throw ConfigError("scenario: unknown scenario '" + scenario + "'");
  }
  if (protocol != "adiabatic" && protocol != "nonequilibrium") {
    throw ConfigError("protocol: expected adiabatic or nonequilibrium");
  }
  if (initial != "vacuum" && initial != "cat") throw ConfigError("initial: expected vacuum or cat");
  if (method != "rk4" && method != "dopri5") throw ConfigError("integrator.method: expected rk4 or dopri5");
  if (!(gamma_d > 0.0)) throw ConfigError("params.gamma_d must be > 0");
  if (!(gamma_s >= 0.0)) throw ConfigError("params.gamma_s must be >= 0");
  if (!(gd_over_gc >= 0.0)) throw ConfigError("params.gd_over_gc must be >= 0");
  if (!(g_nl >= 0.0)) throw ConfigError("params.g_nl must be >= 0");
  if (n_modes < 2 || n_modes > 3) throw ConfigError("params.n_modes must be 2 or 3");
  if (!(S < 0.0) || !std::isfinite(S)) throw ConfigError("params.S must be finite and < 0");
  if (!(t_p >= 0.0) || !(t_nl >= 0.0)) throw ConfigError("stage durations must be >= 0");
  if (n_p < 0) throw ConfigError("stage.n_p must be >= 0");
  if (n_i < 1) throw ConfigError("stage.n_i must be >= 1");
  if (signal_cutoff < 2 || pump_cutoff < 2) throw ConfigError("cutoffs must be >= 2");
  if (!(dt >= 0.0)) throw ConfigError("integrator.dt must be >= 0");
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ConfigError("integrator tolerances must be > 0");
  if (trajectory_samples < 2) throw ConfigError("record.trajectory_samples must be >= 2");
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
  if (!(max_cost >= 0.0)) throw ConfigError("run.max_cost must be >= 0");
  if (protocol == "nonequilibrium" && !(g_nl > 0.0)) throw ConfigError("params.g_nl must be > 0 for nonequilibrium");
  if (protocol == "nonequilibrium" && initial != "vacuum") throw ConfigError("nonequilibrium runs start from vacuum");
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const SweepAxis& axis = sweep[i];
    const detail::ConfigKey* k = detail::find_config_key(axis.key);
    if (!k || !k->sweepable) throw ConfigError("sweep." + axis.key + ": not a sweepable key");
    if (axis.values.empty()) throw ConfigError("sweep." + axis.key + ": axis is empty");
    for (std::size_t j = 0; j < i; ++j) {
      if (sweep[j].key == axis.key) throw ConfigError("sweep." + axis.key + ": duplicate axis");
    }
    for (double v : axis.values) {
      ScenarioConfig probe = *this;
      probe.sweep.clear();
      set_config_number(probe, axis.key, v);
      probe.validate();
    }
  }
}

inline std::string serialize_config(const ScenarioConfig& cfg, bool physical_only = false) {
  std::ostringstream os;
  for (const auto& k : detail::config_keys()) {
    if (physical_only && !k.physical) continue;
    os << k.name << " = " << get_config_value(cfg, k.name) << '\n';
  }
  for (const auto& axis : cfg.sweep) {
    os << "sweep." << axis.key << " =";
    for (std::size_t i = 0; i < axis.values.size(); ++i) {
      os << (i ? ", " : " ") << detail::format_double(axis.values[i]);
    }
    os << '\n';
  }
  return os.str();
}

/// Applies every "key = value" line of `text` on top of `base`.
inline ScenarioConfig parse_config(std::string_view text, ScenarioConfig base = {}) {
  std::vector<std::string> seen;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    seen.push_back(key);
    try {
      set_config_value(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline ScenarioConfig load_config(const std::string& path, ScenarioConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// 64-bit FNV-1a of the physical part of the serialized config, as 16 hex digits.
inline std::string config_hash(const ScenarioConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_config(cfg, true)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
  return v;
}

struct ScenarioInfo {
  std::string name;
  std::string description;
};

inline std::vector<ScenarioInfo> list_scenarios() {
  return {
      {"fig3", "fidelity trajectory through the pump and interaction stages"},
      {"fig4", "witness, purity and fidelities versus Gamma_d/g_c without single-photon loss"},
      {"fig5", "witness versus pump intensity S starting from two-mode cat states"},
      {"fig6", "witness heatmap over T_p and Gamma_d/g_c at fixed single-photon loss"},
      {"fig7", "witness heatmap over Gamma_s and Gamma_d/g_c at T_p = 1.6"},
      {"fig8", "witness heatmap over S and Gamma_s at T_p = 1.5"},
      {"fig9a", "nonequilibrium pumping: witness over N_i and Gamma_s with N_p = 9"},
      {"fig9b", "nonequilibrium pumping: witness over N_p and Gamma_s with N_i = 1"},
      {"custom", "single adiabatic run with library defaults"},
  };
}

inline ScenarioConfig scenario_defaults(const std::string& name) {
  ScenarioConfig c;
  c.scenario = name;
  if (name == "fig3") {
    c.signal_cutoff = 20;
    c.trajectory = true;
  } else if (name == "fig4") {
    c.sweep = {{"params.gd_over_gc", {0.1, 0.2, 0.5, 1, 2, 3, 5}}};
  } else if (name == "fig5") {
    c.initial = "cat";
    c.t_p = 0.0;
    c.gd_over_gc = 1.5;
    c.signal_cutoff = 20;
    c.sweep = {{"params.S", {-0.25, -0.5, -1, -1.5, -2}}};
  } else if (name == "fig6") {
    c.gamma_s = 0.01;
    c.signal_cutoff = 14;
    c.sweep = {{"stage.t_p", linspace(0.2, 4.0, 15)}, {"params.gd_over_gc", linspace(0.2, 5.0, 15)}};
  } else if (name == "fig7") {
    c.t_p = 1.6;
    c.signal_cutoff = 14;
    c.sweep = {{"params.gamma_s", linspace(0.0, 0.08, 15)}, {"params.gd_over_gc", linspace(0.2, 5.0, 15)}};
  } else if (name == "fig8") {
    c.t_p = 1.5;
    c.gd_over_gc = 1.5;
    c.signal_cutoff = 18;
    c.sweep = {{"params.S", linspace(-2.0, -0.5, 15)}, {"params.gamma_s", linspace(0.0, 0.08, 15)}};
  } else if (name == "fig9a" || name == "fig9b") {
    c.protocol = "nonequilibrium";
    c.signal_cutoff = 14;
    c.pump_cutoff = 8;
    c.n_p = 9;
    c.n_i = 1;
    if (name == "fig9a") {
      c.sweep = {{"stage.n_i", {1, 2, 3, 4, 5}}, {"params.gamma_s", linspace(0.0, 0.4, 15)}};
    } else {
      c.sweep = {{"stage.n_p", linspace(1, 15, 15)}, {"params.gamma_s", linspace(0.0, 0.4, 15)}};
    }
  } else if (name != "custom") {
    throw ConfigError("unknown scenario '" + name + "'");
  }
  return c;
}

}  // namespace dopo
