#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dopo/config.hpp"
#include "dopo/errors.hpp"
#include "dopo/experiments.hpp"
#include "dopo/output.hpp"
#include "dopo/version.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalFailure = 3;

dopo::ScenarioConfig apply_overrides(dopo::ScenarioConfig cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw dopo::ConfigError("--set expects key=value, got '" + s + "'");
    dopo::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

dopo::ScenarioConfig load_for_scenario(const std::string& path) {
  const dopo::ScenarioConfig probe = dopo::load_config(path);
  return dopo::load_config(path, dopo::scenario_defaults(probe.scenario));
}

int run(const std::string& scenario, const std::string& config_path, const std::vector<std::string>& sets,
        const std::string& out_dir, int workers, double max_cost) {
  dopo::ScenarioConfig cfg = dopo::scenario_defaults(scenario);
  if (!config_path.empty()) {
    cfg = dopo::load_config(config_path, cfg);
    if (cfg.scenario != scenario) {
      throw dopo::ConfigError("config file is for scenario '" + cfg.scenario + "', not '" + scenario + "'");
    }
  }
  cfg = apply_overrides(std::move(cfg), sets);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (workers > 0) cfg.workers = workers;
  if (max_cost >= 0.0) cfg.max_cost = max_cost;
  cfg.validate();

  const double cost = dopo::estimate_cost(cfg);
  std::printf("scenario %s: %zu grid point(s), estimated cost %.3g\n", cfg.scenario.c_str(), dopo::grid_size(cfg),
              cost);
  if (cfg.max_cost > 0.0 && cost > cfg.max_cost) {
    throw dopo::ConfigError("estimated cost exceeds --max-cost; reduce the grid or the cutoffs");
  }

  const dopo::SweepResult result = dopo::run_sweep(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path base = std::filesystem::path(cfg.output_dir) / cfg.scenario;
  dopo::emit_csv(result, base.string() + ".csv");
  dopo::emit_plot(result, base.string() + ".svg");
  dopo::emit_meta(result, base.string() + ".meta");
  if (result.points.size() == 1 && result.points[0].trajectory) {
    dopo::detail::write_file(base.string() + "_trajectory.csv",
                             dopo::trajectory_csv_text(*result.points[0].trajectory));
  }
  std::printf("wrote %s.{csv,svg,meta}\n", base.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DOPO-network coherent cluster state experiments"};
  app.set_version_flag("--version", dopo::kVersion);
  app.require_subcommand(1);

  std::string scenario, config_path, out_dir;
  std::vector<std::string> sets;
  int workers = 0;
  double max_cost = -1.0;
  auto* run_cmd = app.add_subcommand("run", "run a scenario and write <scenario>.csv/.svg/.meta");
  run_cmd->add_option("scenario", scenario, "scenario name (see list-scenarios)")->required();
  run_cmd->add_option("--config", config_path, "config file applied on top of the scenario defaults");
  run_cmd->add_option("--set", sets, "override a key, e.g. --set params.gamma_s=0.02");
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_option("--workers", workers, "number of worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_option("--max-cost", max_cost, "abort when the cost estimate exceeds this")->check(CLI::NonNegativeNumber);

  auto* list_cmd = app.add_subcommand("list-scenarios", "list the built-in scenarios");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "check a config file and print the resolved config");
  validate_cmd->add_option("--config", validate_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*list_cmd) {
      for (const auto& s : dopo::list_scenarios()) std::printf("%-7s %s\n", s.name.c_str(), s.description.c_str());
      return 0;
    }
    if (*validate_cmd) {
      const dopo::ScenarioConfig cfg = load_for_scenario(validate_path);
      cfg.validate();
      std::cout << dopo::serialize_config(cfg);
      std::printf("# %zu grid point(s), estimated cost %.3g, hash %s\n", dopo::grid_size(cfg),
                  dopo::estimate_cost(cfg), dopo::config_hash(cfg).c_str());
      return 0;
    }
    return run(scenario, config_path, sets, out_dir, workers, max_cost);
  } catch (const dopo::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const dopo::GridPointError& e) {
    std::fprintf(stderr, "%s: %s\n", e.numerical() ? "numerical failure" : "config error", e.what());
    return e.numerical() ? kNumericalFailure : kConfigError;
  } catch (const dopo::InvalidArgument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const dopo::Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
