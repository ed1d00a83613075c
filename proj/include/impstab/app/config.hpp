#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "impstab/battery.hpp"
#include "impstab/core.hpp"
#include "impstab/heat.hpp"
#include "impstab/observability.hpp"
#include "impstab/riccati.hpp"

namespace impstab::app {

/// Malformed or inconsistent configuration document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ProblemKind { kAbstract, kHeat };

struct SolverKnobs {
  double tol = 1e-10;
  int max_periods = 10000;
  double rank_threshold = 1e-10;
  int k_max = 8;
  std::uint64_t seed = 1;
};

struct TaskParams {
  std::optional<double> sigma;
  double epsilon = 1e-6;
  std::optional<long> horizon;  // observation index k
  ObsRange range = ObsRange::kThroughHorizon;
  std::optional<double> theta;
  std::optional<std::vector<double>> x0;
  long periods = 30;
  bool steer = false;
  std::optional<long> steer_periods;  // K in blocks of K hbar instants
  bool concatenate = false;
  double concat_tol = 1e-10;
  bool cross_check = false;
  std::string feedback = "riccati";  // simulate: riccati | zero
};

struct BatteryParams {
  int count = 50;
  int max_dim = 4;
  std::vector<Stratum> strata{Stratum::kControllable, Stratum::kUncontrollableStable,
                              Stratum::kUncontrollableUnstable};
  // Set on serialized failing instances so a replay uses the same chain seed.
  std::optional<std::uint64_t> replay_seed;
};

struct WeightSpec {
  std::optional<std::vector<MatrixX<double>>> Q;
  std::optional<std::vector<MatrixX<double>>> R;
  double q_scalar = 1;
  double r_scalar = 1;
};

struct RunConfig {
  ProblemKind kind = ProblemKind::kAbstract;
  std::optional<ImpulseSystem<double>> system;
  std::optional<HeatConfig<double>> heat;
  std::optional<std::vector<double>> heat_times;
  double period_hint = 1.0;
  WeightSpec weights;
  SolverKnobs solver;
  TaskParams task;
  BatteryParams battery;
  std::string digest;
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

/// FNV-1a 64-bit digest of the canonical JSON dump, as 16 hex digits.
std::string config_digest(const nlohmann::json& doc);

/// The impulse system described by the config; heat configs are truncated
/// and scheduled here.
ImpulseSystem<double> materialize_system(const RunConfig& cfg);
PeriodicSchedule<double> heat_schedule(const RunConfig& cfg);
CostWeights<double> materialize_weights(const RunConfig& cfg, const ImpulseSystem<double>& sys);
RiccatiOptions<double> riccati_options(const RunConfig& cfg);

nlohmann::json matrix_to_json(const MatrixX<double>& m);
MatrixX<double> matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what);

/// Replayable abstract config for a system.
nlohmann::json system_to_config(const ImpulseSystem<double>& sys, const SolverKnobs& solver);

}  // namespace impstab::app
