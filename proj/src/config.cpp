#include "impstab/app/config.hpp"

#include <cstdio>
#include <limits>
#include <fstream>

namespace impstab::app {

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ConfigError(where + ": missing \"" + key + "\"");
  return obj.at(key);
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field \"") + key + "\": " + e.what());
  }
}

std::vector<double> number_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(what + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<MatrixX<double>> matrix_list(const json& j, std::size_t count, Eigen::Index rows, Eigen::Index cols,
                                         const std::string& what) {
  if (!j.is_array() || j.size() != count) {
    throw ConfigError(what + ": expected " + std::to_string(count) + " row-major matrices");
  }
  std::vector<MatrixX<double>> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(matrix_from_json(j[k], rows, cols, what + "[" + std::to_string(k) + "]"));
  }
  return out;
}

ObsRange parse_range(const std::string& s) {
  if (s == "full") return ObsRange::kThroughHorizon;
  if (s == "strict") return ObsRange::kBeforeHorizon;
  throw ConfigError("task.range must be \"full\" or \"strict\"");
}

ImpulseSystem<double> parse_abstract(const json& sj) {
  const auto d = get_or<long>(sj, "state_dim", 0);
  const auto m = get_or<long>(sj, "input_dim", 0);
  if (d < 1 || m < 1) throw ConfigError("system: state_dim and input_dim must be positive");
  const auto times = number_list(require(sj, "times", "system"), "system.times");
  if (sj.contains("hbar") && sj.at("hbar").get<long>() != static_cast<long>(times.size())) {
    throw ConfigError("system: hbar disagrees with the number of times");
  }
  ImpulseSystem<double> sys;
  try {
    sys.schedule = make_schedule(times);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("system.times: ") + e.what());
  }
  sys.flows = matrix_list(require(sj, "flows", "system"), times.size(), d, d, "system.flows");
  sys.inputs = matrix_list(require(sj, "inputs", "system"), times.size(), d, m, "system.inputs");
  return sys;
}

HeatConfig<double> parse_heat(const json& hj, std::optional<std::vector<double>>& times, double& period_hint) {
  HeatConfig<double> h;
  h.n = get_or<int>(hj, "n", 0);
  h.m = get_or<int>(hj, "m", 0);
  h.N = get_or<int>(hj, "modes", 0);
  h.control_modes = get_or<int>(hj, "control_modes", 0);
  if (h.n < 1 || h.m < 1 || h.N < 1) throw ConfigError("heat: n, m, modes must be positive");
  if (h.control_modes < 0) throw ConfigError("heat: control_modes must be nonnegative");
  h.S = matrix_from_json(require(hj, "S", "heat"), h.n, h.n, "heat.S");
  const auto& Dj = require(hj, "D", "heat");
  if (!Dj.is_array() || Dj.empty()) throw ConfigError("heat.D: expected one matrix per slot");
  h.D = matrix_list(Dj, Dj.size(), h.n, h.m, "heat.D");
  const auto& oj = require(hj, "omegas", "heat");
  if (!oj.is_array() || oj.size() != h.D.size()) throw ConfigError("heat.omegas: expected one interval per slot");
  for (const auto& w : oj) {
    const auto ab = number_list(w, "heat.omegas");
    if (ab.size() != 2) throw ConfigError("heat.omegas: each interval is [a, b]");
    h.omegas.emplace_back(ab[0], ab[1]);
  }
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (hj.contains("times")) {
    times = number_list(hj.at("times"), "heat.times");
    if (times->size() != h.D.size()) throw ConfigError("heat.times: expected one instant per slot");
  } else if (hj.contains("auto_schedule")) {
    period_hint = get_or<double>(hj.at("auto_schedule"), "period_hint", 1.0);
    if (!(period_hint > 0)) throw ConfigError("heat.auto_schedule.period_hint must be positive");
  }
  return h;
}

}  // namespace

MatrixX<double> matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const auto flat = number_list(j, what);
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw ConfigError(what + ": expected " + std::to_string(rows * cols) + " entries, got " +
                      std::to_string(flat.size()));
  }
  MatrixX<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

json matrix_to_json(const MatrixX<double>& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

std::string config_digest(const json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  cfg.digest = config_digest(doc);
  const auto kind = get_or<std::string>(doc, "kind", "abstract");
  if (kind == "abstract") {
    cfg.kind = ProblemKind::kAbstract;
    if (doc.contains("system")) cfg.system = parse_abstract(doc.at("system"));
  } else if (kind == "heat") {
    cfg.kind = ProblemKind::kHeat;
    cfg.heat = parse_heat(require(doc, "heat", "config"), cfg.heat_times, cfg.period_hint);
  } else {
    throw ConfigError("kind must be \"abstract\" or \"heat\"");
  }

  if (doc.contains("weights")) {
    const auto& wj = doc.at("weights");
    cfg.weights.q_scalar = get_or<double>(wj, "q_scalar", 1.0);
    cfg.weights.r_scalar = get_or<double>(wj, "r_scalar", 1.0);
    if (!(cfg.weights.q_scalar > 0) || !(cfg.weights.r_scalar > 0)) {
      throw ConfigError("weights: q_scalar and r_scalar must be positive");
    }
    if (wj.contains("Q")) cfg.weights.Q = std::vector<MatrixX<double>>{};
    if (wj.contains("R")) cfg.weights.R = std::vector<MatrixX<double>>{};
  }

  if (doc.contains("solver")) {
    const auto& sj = doc.at("solver");
    cfg.solver.tol = get_or<double>(sj, "tol", cfg.solver.tol);
    cfg.solver.max_periods = get_or<int>(sj, "max_periods", cfg.solver.max_periods);
    cfg.solver.rank_threshold = get_or<double>(sj, "rank_threshold", cfg.solver.rank_threshold);
    cfg.solver.k_max = get_or<int>(sj, "k_max", cfg.solver.k_max);
    cfg.solver.seed = get_or<std::uint64_t>(sj, "seed", cfg.solver.seed);
    if (!(cfg.solver.tol > 0) || cfg.solver.max_periods < 1 || cfg.solver.k_max < 1) {
      throw ConfigError("solver: tol, max_periods, k_max must be positive");
    }
  }

  if (doc.contains("task")) {
    const auto& tj = doc.at("task");
    auto& t = cfg.task;
    if (tj.contains("sigma")) {
      t.sigma = get_or<double>(tj, "sigma", 0.5);
      if (!(*t.sigma > 0 && *t.sigma < 1)) throw ConfigError("task.sigma must lie in (0, 1)");
    }
    t.epsilon = get_or<double>(tj, "epsilon", t.epsilon);
    if (!(t.epsilon > 0)) throw ConfigError("task.epsilon must be positive");
    if (tj.contains("horizon")) {
      t.horizon = get_or<long>(tj, "horizon", 1);
      if (*t.horizon < 1) throw ConfigError("task.horizon must be >= 1");
    }
    t.range = parse_range(get_or<std::string>(tj, "range", "full"));
    if (tj.contains("theta")) {
      t.theta = get_or<double>(tj, "theta", 0.5);
      if (!(*t.theta > 0 && *t.theta <= 1)) throw ConfigError("task.theta must lie in (0, 1]");
    }
    if (tj.contains("x0")) t.x0 = number_list(tj.at("x0"), "task.x0");
    t.periods = get_or<long>(tj, "periods", t.periods);
    if (t.periods < 1) throw ConfigError("task.periods must be >= 1");
    t.steer = get_or<bool>(tj, "steer", t.steer);
    if (tj.contains("steer_periods")) t.steer_periods = get_or<long>(tj, "steer_periods", 1);
    t.concatenate = get_or<bool>(tj, "concatenate", t.concatenate);
    t.concat_tol = get_or<double>(tj, "concat_tol", t.concat_tol);
    t.cross_check = get_or<bool>(tj, "cross_check", t.cross_check);
    t.feedback = get_or<std::string>(tj, "feedback", t.feedback);
    if (t.feedback != "riccati" && t.feedback != "zero") throw ConfigError("task.feedback must be riccati or zero");
  }

  if (doc.contains("battery")) {
    const auto& bj = doc.at("battery");
    cfg.battery.count = get_or<int>(bj, "count", cfg.battery.count);
    cfg.battery.max_dim = get_or<int>(bj, "max_dim", cfg.battery.max_dim);
    if (cfg.battery.count < 0 || cfg.battery.max_dim < 2) {
      throw ConfigError("battery: count must be >= 0 and max_dim >= 2");
    }
    if (bj.contains("replay_seed")) cfg.battery.replay_seed = get_or<std::uint64_t>(bj, "replay_seed", 0);
    if (bj.contains("strata")) {
      cfg.battery.strata.clear();
      for (const auto& s : bj.at("strata")) {
        if (!s.is_string()) throw ConfigError("battery.strata: expected strings");
        const auto st = stratum_from_string(s.get<std::string>());
        if (!st) throw ConfigError("battery.strata: unknown stratum " + s.get<std::string>());
        cfg.battery.strata.push_back(*st);
      }
      if (cfg.battery.strata.empty()) throw ConfigError("battery.strata must not be empty");
    }
  }

  // Weight matrices need the system dimensions.
  if (cfg.weights.Q || cfg.weights.R) {
    const auto sys = materialize_system(cfg);
    const auto h = static_cast<std::size_t>(sys.hbar());
    const auto& wj = doc.at("weights");
    if (cfg.weights.Q) cfg.weights.Q = matrix_list(wj.at("Q"), h, sys.state_dim(), sys.state_dim(), "weights.Q");
    if (cfg.weights.R) cfg.weights.R = matrix_list(wj.at("R"), h, sys.input_dim(), sys.input_dim(), "weights.R");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return parse_config(doc);
}

PeriodicSchedule<double> heat_schedule(const RunConfig& cfg) {
  if (!cfg.heat) throw ConfigError("heat section required");
  if (cfg.heat_times) {
    try {
      return make_schedule(*cfg.heat_times);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("heat.times: ") + e.what());
    }
  }
  return generate_admissible_schedule(cfg.heat->S, cfg.heat->Dcat(), cfg.heat->hbar(), cfg.period_hint,
                                      cfg.solver.rank_threshold);
}

ImpulseSystem<double> materialize_system(const RunConfig& cfg) {
  if (cfg.kind == ProblemKind::kHeat) return build_heat_system(*cfg.heat, heat_schedule(cfg));
  if (!cfg.system) throw ConfigError("system section required");
  try {
    cfg.system->validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return *cfg.system;
}

CostWeights<double> materialize_weights(const RunConfig& cfg, const ImpulseSystem<double>& sys) {
  auto w = identity_weights(sys, cfg.weights.q_scalar, cfg.weights.r_scalar);
  if (cfg.weights.Q) {
    w.Q = *cfg.weights.Q;
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& q : w.Q) margin = std::min(margin, min_eigenvalue(q));
    w.q_margin = margin;
  }
  if (cfg.weights.R) {
    w.R = *cfg.weights.R;
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& r : w.R) margin = std::min(margin, min_eigenvalue(r));
    w.r_margin = margin;
  }
  try {
    w.validate(sys);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return w;
}

RiccatiOptions<double> riccati_options(const RunConfig& cfg) {
  RiccatiOptions<double> opt;
  opt.tol = cfg.solver.tol;
  opt.max_periods = cfg.solver.max_periods;
  return opt;
}

json system_to_config(const ImpulseSystem<double>& sys, const SolverKnobs& solver) {
  json flows = json::array();
  json inputs = json::array();
  for (const auto& e : sys.flows) flows.push_back(matrix_to_json(e));
  for (const auto& b : sys.inputs) inputs.push_back(matrix_to_json(b));
  return json{{"kind", "abstract"},
              {"system",
               {{"state_dim", sys.state_dim()},
                {"input_dim", sys.input_dim()},
                {"hbar", sys.hbar()},
                {"times", sys.schedule.times},
                {"flows", flows},
                {"inputs", inputs}}},
              {"solver",
               {{"tol", solver.tol},
                {"max_periods", solver.max_periods},
                {"rank_threshold", solver.rank_threshold},
                {"k_max", solver.k_max},
                {"seed", solver.seed}}}};
}

}  // namespace impstab::app
