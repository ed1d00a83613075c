#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "impstab/app/config.hpp"

namespace impstab::app {

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitNegative = 2, kExitUsage = 64 };

struct ResultRecord {
  std::string task;
  nlohmann::json body = nlohmann::json::object();  // verdicts and scalars
  nlohmann::json provenance = nlohmann::json::object();
  double seconds = 0;
  int exit_code = kExitOk;
  std::optional<Trajectory<double>> trajectory;

  /// Everything except timing; byte-identical across runs of the same config.
  nlohmann::json deterministic_json() const;
  nlohmann::json to_json() const;
};

/// Overrides from command-line flags, applied on top of the config file.
struct Overrides {
  std::optional<double> tol;
  std::optional<int> max_periods;
  std::optional<std::uint64_t> seed;
  std::optional<WeakObsMode> mode;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

ResultRecord run_synthesize(const RunConfig& cfg);
ResultRecord run_simulate(const RunConfig& cfg);
ResultRecord run_check_obs(const RunConfig& cfg, std::optional<WeakObsMode> mode = std::nullopt);
ResultRecord run_heat_analyze(const RunConfig& cfg);
ResultRecord run_battery(const RunConfig& cfg);

/// Columns j, t_j, norm_pre, norm_post.
std::string trajectory_csv(const Trajectory<double>& traj);

}  // namespace impstab::app
