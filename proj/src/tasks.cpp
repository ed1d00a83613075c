#include "impstab/app/tasks.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace impstab::app {

namespace {

using nlohmann::json;

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json rows_json(const MatrixX<double>& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
    out.push_back(row);
  }
  return out;
}

json vector_json(const VectorX<double>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(v(i)));
  return out;
}

/// Small matrices are emitted whole; large ones as a summary.
json matrix_summary(const MatrixX<double>& m) {
  if (m.rows() * m.cols() <= 36) return rows_json(m);
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"norm", num(operator_norm(m))}, {"trace", num(m.trace())}};
}

VectorX<double> initial_state(const RunConfig& cfg, Eigen::Index d) {
  if (cfg.task.x0) {
    if (static_cast<Eigen::Index>(cfg.task.x0->size()) != d) {
      throw ConfigError("task.x0 has " + std::to_string(cfg.task.x0->size()) + " entries, state_dim is " +
                        std::to_string(d));
    }
    return Eigen::Map<const VectorX<double>>(cfg.task.x0->data(), d);
  }
  return VectorX<double>::Ones(d) / std::sqrt(static_cast<double>(d));
}

ResultRecord start(const std::string& task, const RunConfig& cfg) {
  ResultRecord rec;
  rec.task = task;
  rec.provenance = json{{"config_digest", cfg.digest}, {"seed", cfg.solver.seed}};
  return rec;
}

template <typename F>
ResultRecord timed(F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = body();
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

json decay_json(const DecayFit<double>& fit) { return json{{"C", num(fit.C)}, {"mu", num(fit.mu)}}; }

json steering_json(const SteeringResult<double>& s) {
  json j{{"achieved_norm", num(s.achieved_norm)}, {"target", num(s.target)},
         {"control_norm", num(s.control_norm)},   {"epsilon", num(s.epsilon)},
         {"within_target", s.within_target},      {"phi_star", vector_json(s.phi_star)}};
  if (s.control_bound_ok) j["control_bound_ok"] = *s.control_bound_ok;
  return j;
}

json chain_json(const VerdictChain<double>& c) {
  json j{{"riccati_status", to_string(c.riccati_status)},
         {"riccati", c.riccati_verdict},
         {"weak_obs", c.weak_obs_verdict},
         {"concatenation", c.concatenation_verdict},
         {"agree", c.agree()}};
  if (c.rho) j["rho"] = num(*c.rho);
  if (c.weak_obs_K) j["weak_obs_K"] = *c.weak_obs_K;
  if (c.weak_obs_C) j["weak_obs_C"] = num(*c.weak_obs_C);
  if (c.concatenation_K) j["concatenation_K"] = *c.concatenation_K;
  if (c.decision_holds) j["decision_holds"] = *c.decision_holds;
  if (c.steering_state_bound_ok) j["steering_state_bound_ok"] = *c.steering_state_bound_ok;
  if (c.steering_control_bound_ok) j["steering_control_bound_ok"] = *c.steering_control_bound_ok;
  return j;
}

ChainOptions<double> chain_options(const RunConfig& cfg) {
  ChainOptions<double> opt;
  opt.riccati = riccati_options(cfg);
  opt.k_max = cfg.solver.k_max;
  opt.seed = cfg.solver.seed;
  if (cfg.task.sigma) opt.sigma = *cfg.task.sigma;
  return opt;
}

}  // namespace

json ResultRecord::deterministic_json() const {
  return json{{"task", task}, {"result", body}, {"provenance", provenance}, {"exit_code", exit_code}};
}

json ResultRecord::to_json() const {
  json j = deterministic_json();
  j["timing"] = json{{"seconds", seconds}};
  return j;
}

std::string trajectory_csv(const Trajectory<double>& traj) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "j,t_j,norm_pre,norm_post\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << (i + 1) << ',' << traj.times[i] << ',' << traj.norms_pre[i] << ',' << traj.norms_post[i] << '\n';
  }
  return out.str();
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.tol) {
    if (!(*o.tol > 0)) throw ConfigError("--tol must be positive");
    cfg.solver.tol = *o.tol;
  }
  if (o.max_periods) {
    if (*o.max_periods < 1) throw ConfigError("--max-periods must be positive");
    cfg.solver.max_periods = *o.max_periods;
  }
  if (o.seed) cfg.solver.seed = *o.seed;
}

ResultRecord run_synthesize(const RunConfig& cfg) {
  return timed([&] {
    auto rec = start("synthesize", cfg);
    const auto sys = materialize_system(cfg);
    const auto w = materialize_weights(cfg, sys);
    const auto ric = periodic_riccati_solve(sys, w, riccati_options(cfg));
    auto& b = rec.body;
    b["state_dim"] = sys.state_dim();
    b["input_dim"] = sys.input_dim();
    b["hbar"] = sys.hbar();
    b["status"] = to_string(ric.status);
    b["periods"] = ric.periods;
    b["message"] = ric.message;
    if (!ric.converged()) {
      b["verdict"] = to_string(ric.status);
      b["growth_rate"] = num(ric.growth_rate);
      rec.exit_code = kExitNegative;
      return rec;
    }
    const auto& sol = *ric.solution;
    const auto F = synthesize_feedback(sys, w, sol);
    const double rho = spectral_radius(monodromy(sys, F));
    json Ps = json::array();
    for (int l = 0; l < sys.hbar(); ++l) Ps.push_back(matrix_summary(sol.P[static_cast<std::size_t>(l)]));
    json Fs = json::array();
    for (const auto& g : F.gains) Fs.push_back(matrix_summary(g));
    b["P"] = Ps;
    b["F"] = Fs;
    b["residual"] = num(sol.residual);
    b["rho"] = num(rho);
    const auto x0 = initial_state(cfg, sys.state_dim());
    auto traj = simulate_closed_loop(sys, F, x0, cfg.task.periods);
    if (traj.size() >= 3) b["decay"] = decay_json(decay_rate_fit(traj));
    rec.trajectory = std::move(traj);
    b["verdict"] = rho < 1 ? "stabilizable" : "not-stabilizable";
    rec.exit_code = rho < 1 ? kExitOk : kExitNegative;
    return rec;
  });
}

ResultRecord run_simulate(const RunConfig& cfg) {
  return timed([&] {
    auto rec = start("simulate", cfg);
    const auto sys = materialize_system(cfg);
    auto F = zero_feedback(sys);
    auto& b = rec.body;
    b["feedback"] = cfg.task.feedback;
    if (cfg.task.feedback == "riccati") {
      const auto w = materialize_weights(cfg, sys);
      const auto ric = periodic_riccati_solve(sys, w, riccati_options(cfg));
      b["status"] = to_string(ric.status);
      if (!ric.converged()) {
        b["verdict"] = to_string(ric.status);
        rec.exit_code = kExitNegative;
        return rec;
      }
      F = synthesize_feedback(sys, w, *ric.solution);
    }
    b["rho"] = num(spectral_radius(monodromy(sys, F)));
    const auto x0 = initial_state(cfg, sys.state_dim());
    auto traj = simulate_closed_loop(sys, F, x0, cfg.task.periods);
    b["steps"] = traj.size();
    b["final_norm"] = num(traj.norms_post.back());
    if (traj.size() >= 3) {
      const auto fit = decay_rate_fit(traj);
      b["decay"] = decay_json(fit);
      b["verdict"] = fit.stable() ? "decaying" : "not-decaying";
    }
    rec.trajectory = std::move(traj);
    return rec;
  });
}

ResultRecord run_check_obs(const RunConfig& cfg, std::optional<WeakObsMode> mode) {
  return timed([&] {
    auto rec = start("check-obs", cfg);
    if (!cfg.task.sigma) throw ConfigError("check-obs requires task.sigma");
    const double sigma = *cfg.task.sigma;
    const auto sys = materialize_system(cfg);
    const long k = cfg.task.horizon.value_or(sys.hbar());
    const auto pair = build_observability_pair(sys, k, cfg.task.range);
    WeakObsOptions<double> wopt;
    wopt.seed = cfg.solver.seed;
    wopt.rank_threshold = cfg.solver.rank_threshold;

    auto& b = rec.body;
    b["sigma"] = sigma;
    b["horizon"] = k;
    b["range"] = cfg.task.range == ObsRange::kThroughHorizon ? "full" : "strict";
    b["state_dim"] = sys.state_dim();
    if (cfg.kind == ProblemKind::kHeat) b["modes"] = cfg.heat->N;

    std::vector<WeakObsMode> modes;
    if (mode) {
      modes.push_back(*mode);
    } else {
      modes = {WeakObsMode::kSearch, WeakObsMode::kSufficient};
    }
    bool feasible = true;
    std::optional<double> certified_C;
    json reports = json::object();
    for (const auto md : modes) {
      const auto rep = weak_obs_minimal_C(pair, sigma, md, wopt);
      json r{{"feasible", rep.feasible}, {"witness", vector_json(rep.witness)}};
      if (rep.feasible) {
        r["C"] = num(rep.C);
        if (md == WeakObsMode::kSufficient) certified_C = rep.C;
      }
      feasible = feasible && rep.feasible;
      reports[to_string(md)] = r;
    }
    b["weak_obs"] = reports;
    if (certified_C) {
      const auto dec = weak_obs_holds(pair, sigma, *certified_C, wopt);
      b["decision"] = json{{"C", num(*certified_C)}, {"holds", dec.holds}, {"max_violation", num(dec.max_violation)}};
    }

    std::vector<double> thetas;
    if (cfg.task.theta) {
      thetas.push_back(*cfg.task.theta);
    } else {
      for (int i = 1; i <= 9; ++i) thetas.push_back(0.1 * i);
    }
    json holder = json::array();
    for (const double th : thetas) {
      const auto hr = holder_obs_check(pair, th, wopt);
      json h{{"theta", th}, {"feasible", hr.feasible}};
      if (hr.feasible) h["C"] = num(hr.C);
      holder.push_back(h);
    }
    b["holder"] = holder;

    const long K = cfg.task.steer_periods.value_or((k + sys.hbar() - 1) / sys.hbar());
    if (cfg.task.steer || cfg.task.concatenate) b["steer_periods"] = K;
    if (cfg.task.steer) {
      const auto x0 = initial_state(cfg, sys.state_dim());
      try {
        b["steering"] = steering_json(steering_control(sys, x0, K, sigma, cfg.task.epsilon, certified_C));
      } catch (const SteeringError& e) {
        b["steering"] = json{{"error", e.what()}};
      }
    }
    if (cfg.task.concatenate) {
      const auto x0 = initial_state(cfg, sys.state_dim());
      try {
        auto c = concatenated_stabilizing_control(sys, x0, K, sigma, cfg.task.epsilon, cfg.task.concat_tol, certified_C);
        json blocks = json::array();
        for (const double v : c.block_state_norms) blocks.push_back(num(v));
        json sums = json::array();
        for (const double v : c.state_sq_partial_sums) sums.push_back(num(v));
        json cj{{"blocks", c.blocks()},
                {"block_state_norms", blocks},
                {"state_sq_partial_sums", sums},
                {"state_sq_tail_estimate", num(c.state_sq_tail_estimate)},
                {"control_sq_sum", num(c.control_sq_sum)},
                {"fitted_ratio", num(c.fitted_ratio)},
                {"certified", c.certified}};
        if (c.control_bound_ok) cj["control_bound_ok"] = *c.control_bound_ok;
        b["concatenation"] = cj;
        if (c.trajectory.size() > 0) rec.trajectory = std::move(c.trajectory);
      } catch (const SteeringError& e) {
        b["concatenation"] = json{{"error", e.what()}};
      }
    }
    b["verdict"] = feasible ? "feasible" : "infeasible";
    rec.exit_code = feasible ? kExitOk : kExitNegative;
    return rec;
  });
}

ResultRecord run_heat_analyze(const RunConfig& cfg) {
  return timed([&] {
    auto rec = start("heat-analyze", cfg);
    if (cfg.kind != ProblemKind::kHeat) throw ConfigError("heat-analyze requires kind \"heat\"");
    const auto& h = *cfg.heat;
    const double rel = cfg.solver.rank_threshold;
    const MatrixX<double> Dcat = h.Dcat();
    auto& b = rec.body;
    b["n"] = h.n;
    b["m"] = h.m;
    b["hbar"] = h.hbar();
    b["modes"] = h.N;
    b["control_modes"] = h.control_dim();
    b["common_region_nonempty"] = h.common_region_nonempty();
    if (!h.common_region_nonempty()) b["warning"] = "control regions have empty intersection";
    b["kalman_rank"] = kalman_rank(h.S, Dcat, rel);

    const auto hv = hautus_verdict(h.S, Dcat, 1.0, rel);
    json checked = json::array();
    for (const auto& lam : hv.checked) checked.push_back(json{{"re", lam.real()}, {"im", lam.imag()}});
    json hj{{"stabilizable", hv.stabilizable}, {"checked_eigenvalues", checked}};
    if (hv.witness) hj["witness"] = json{{"re", hv.witness->real()}, {"im", hv.witness->imag()}};
    b["hautus"] = hj;

    const auto dec = kalman_decomposition(h.S, Dcat, rel);
    b["decomposition"] = json{{"n1", dec.n1},
                              {"fully_controllable", dec.fully_controllable},
                              {"J", rows_json(dec.J)},
                              {"S1", rows_json(dec.S1)},
                              {"S3", rows_json(dec.S3)}};

    const auto sched = heat_schedule(cfg);
    const auto sc = schedule_in_class(sched, h.S, Dcat, h.hbar(), rel);
    json sj{{"times", sched.times},
            {"d_S", num(sc.d_E)},
            {"d_S_infinite", std::isinf(sc.d_E)},
            {"q", sc.q_EF},
            {"required", sc.required},
            {"admissible", sc.admissible}};
    if (sc.min_window_count) sj["min_window_count"] = *sc.min_window_count;
    b["schedule"] = sj;

    rec.exit_code = hv.stabilizable ? kExitOk : kExitNegative;
    b["verdict"] = hv.stabilizable ? "stabilizable" : "not-stabilizable";
    if (cfg.task.cross_check) {
      const auto sys = build_heat_system(h, sched);
      CrossCheckOptions<double> copt;
      copt.riccati = riccati_options(cfg);
      copt.rank_threshold = rel;
      copt.seed = cfg.solver.seed;
      const auto cc = verdict_cross_check(h, sched, materialize_weights(cfg, sys), copt);
      json cj{{"agree", cc.agree}, {"riccati_status", to_string(cc.riccati_status)}, {"message", cc.message}};
      if (cc.rho) cj["rho"] = num(*cc.rho);
      if (cc.decay) cj["decay"] = decay_json(*cc.decay);
      if (cc.expected_growth) cj["expected_growth"] = num(*cc.expected_growth);
      if (cc.growth_zero_feedback) cj["growth_zero_feedback"] = num(*cc.growth_zero_feedback);
      if (cc.growth_random_feedback) cj["growth_random_feedback"] = num(*cc.growth_random_feedback);
      b["cross_check"] = cj;
      if (!cc.agree) rec.exit_code = kExitInternal;
    }
    return rec;
  });
}

ResultRecord run_battery(const RunConfig& cfg) {
  return timed([&] {
    auto rec = start("battery", cfg);
    auto& b = rec.body;
    auto opt = chain_options(cfg);

    if (cfg.system) {
      // Replay of a single serialized instance.
      opt.seed = cfg.battery.replay_seed.value_or(cfg.solver.seed);
      const auto chain = evaluate_chain(*cfg.system, opt);
      b["replay"] = chain_json(chain);
      b["verdict"] = chain.agree() ? "agree" : "disagree";
      rec.exit_code = chain.agree() ? kExitOk : kExitInternal;
      return rec;
    }

    const auto instances = generate_battery<double>(cfg.battery.count, cfg.battery.max_dim, cfg.battery.strata,
                                                    cfg.solver.seed);
    const auto results = impstab::run_battery(instances, opt);
    int agree = 0;
    int ric_obs = 0;
    int ric_cat = 0;
    int obs_cat = 0;
    int bound_checked = 0;
    int bound_ok = 0;
    json per_stratum = json::object();
    json list = json::array();
    json failures = json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      const auto& inst = instances[i];
      agree += r.agree();
      ric_obs += r.riccati_verdict == r.weak_obs_verdict;
      ric_cat += r.riccati_verdict == r.concatenation_verdict;
      obs_cat += r.weak_obs_verdict == r.concatenation_verdict;
      if (r.steering_state_bound_ok) {
        ++bound_checked;
        bound_ok += *r.steering_state_bound_ok && *r.steering_control_bound_ok;
      }
      auto& ps = per_stratum[to_string(inst.stratum)];
      if (ps.is_null()) ps = json{{"count", 0}, {"stabilizable", 0}};
      ps["count"] = ps["count"].get<int>() + 1;
      ps["stabilizable"] = ps["stabilizable"].get<int>() + (r.riccati_verdict ? 1 : 0);
      json entry = chain_json(r);
      entry["index"] = inst.index;
      entry["stratum"] = to_string(inst.stratum);
      entry["state_dim"] = inst.system.state_dim();
      entry["hbar"] = inst.system.hbar();
      list.push_back(entry);
      if (!r.agree()) {
        json replay = system_to_config(inst.system, cfg.solver);
        replay["battery"] = json{{"replay_seed", cfg.solver.seed * 1000003ull + static_cast<std::uint64_t>(inst.index)}};
        if (cfg.task.sigma) replay["task"] = json{{"sigma", *cfg.task.sigma}};
        failures.push_back(json{{"index", inst.index}, {"verdicts", chain_json(r)}, {"config", replay}});
      }
    }
    b["count"] = results.size();
    b["agreement"] = agree;
    b["agreement_matrix"] = json{{"riccati_vs_weak_obs", ric_obs},
                                 {"riccati_vs_concatenation", ric_cat},
                                 {"weak_obs_vs_concatenation", obs_cat}};
    b["steering_bounds"] = json{{"checked", bound_checked}, {"passed", bound_ok}};
    b["strata"] = per_stratum;
    b["instances"] = list;
    b["failures"] = failures;
    const bool ok = agree == static_cast<int>(results.size()) && bound_ok == bound_checked;
    b["verdict"] = ok ? "agree" : "disagree";
    rec.exit_code = ok ? kExitOk : kExitInternal;
    return rec;
  });
}

}  // namespace impstab::app
