#pragma once

// Random small systems in three strata and the chain of stabilizability
// verdicts evaluated on each: Riccati convergence, weak observability with a
// certified constant, and a certified concatenated control.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "impstab/core.hpp"
#include "impstab/observability.hpp"
#include "impstab/riccati.hpp"

namespace impstab {

enum class Stratum { kControllable, kUncontrollableStable, kUncontrollableUnstable };

inline const char* to_string(Stratum s) {
  switch (s) {
    case Stratum::kControllable:
      return "controllable";
    case Stratum::kUncontrollableStable:
      return "uncontrollable-stable";
    case Stratum::kUncontrollableUnstable:
      return "uncontrollable-unstable";
  }
  return "unknown";
}

inline std::optional<Stratum> stratum_from_string(const std::string& s) {
  if (s == "controllable") return Stratum::kControllable;
  if (s == "uncontrollable-stable") return Stratum::kUncontrollableStable;
  if (s == "uncontrollable-unstable") return Stratum::kUncontrollableUnstable;
  return std::nullopt;
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> gaussian_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixX<Scalar> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(gauss(rng));
  return m;
}

template <typename Scalar>
MatrixX<Scalar> random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(gaussian_matrix<Scalar>(n, n, rng));
  MatrixX<Scalar> Q = qr.householderQ();
  return Q;
}

}  // namespace detail

/// Random system of the given stratum. Uncontrollable strata are built as
/// T [[A11, A12], [0, A22]] T^T with inputs T [B1; 0]; A22 is a scaled
/// orthogonal block whose modulus is at most 0.7 (stable) or at least 1.3.
template <typename Scalar>
ImpulseSystem<Scalar> random_instance(Stratum stratum, int max_dim, std::mt19937_64& rng) {
  const int min_dim = stratum == Stratum::kControllable ? 1 : 2;
  if (max_dim < min_dim) throw std::invalid_argument("random_instance: max_dim too small for stratum");
  std::uniform_int_distribution<int> dim_dist(min_dim, max_dim);
  std::uniform_int_distribution<int> hbar_dist(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = dim_dist(rng);
  const int hbar = hbar_dist(rng);

  ImpulseSystem<Scalar> sys;
  std::vector<Scalar> times;
  Scalar t = 0;
  for (int k = 0; k < hbar; ++k) {
    t += Scalar(0.5 + unit(rng));
    times.push_back(t);
  }
  sys.schedule = make_schedule(std::move(times));

  if (stratum == Stratum::kControllable) {
    const int m = std::uniform_int_distribution<int>(1, std::min(2, d))(rng);
    for (int k = 0; k < hbar; ++k) {
      const Scalar scale = Scalar(0.5 + unit(rng)) / std::sqrt(Scalar(d));
      sys.flows.push_back(scale * detail::gaussian_matrix<Scalar>(d, d, rng));
      sys.inputs.push_back(detail::gaussian_matrix<Scalar>(d, m, rng));
    }
    return sys;
  }

  const int d2 = std::uniform_int_distribution<int>(1, std::min(2, d - 1))(rng);
  const int d1 = d - d2;
  const int m = std::uniform_int_distribution<int>(1, std::min(2, d1))(rng);
  const MatrixX<Scalar> T = detail::random_orthogonal<Scalar>(d, rng);
  for (int k = 0; k < hbar; ++k) {
    MatrixX<Scalar> A = MatrixX<Scalar>::Zero(d, d);
    A.topLeftCorner(d1, d1) = Scalar(0.5 + unit(rng)) / std::sqrt(Scalar(d1)) * detail::gaussian_matrix<Scalar>(d1, d1, rng);
    A.topRightCorner(d1, d2) = Scalar(0.5) * detail::gaussian_matrix<Scalar>(d1, d2, rng);
    const Scalar modulus = stratum == Stratum::kUncontrollableStable ? Scalar(0.3 + 0.4 * unit(rng))
                                                                      : Scalar(1.3 + 0.5 * unit(rng));
    A.bottomRightCorner(d2, d2) = modulus * detail::random_orthogonal<Scalar>(d2, rng);
    MatrixX<Scalar> B = MatrixX<Scalar>::Zero(d, m);
    B.topRows(d1) = detail::gaussian_matrix<Scalar>(d1, m, rng);
    sys.flows.push_back(T * A * T.transpose());
    sys.inputs.push_back(T * B);
  }
  return sys;
}

template <typename Scalar>
struct ChainOptions {
  RiccatiOptions<Scalar> riccati;
  Scalar sigma = Scalar(0.5);
  Scalar epsilon = Scalar(1e-3);
  Scalar tol = Scalar(1e-6);
  int k_max = 8;
  int random_initial_states = 2;
  std::uint64_t seed = 1;
};

template <typename Scalar>
struct VerdictChain {
  // Riccati
  RiccatiStatus riccati_status = RiccatiStatus::kNotStabilizable;
  std::optional<Scalar> rho;
  bool riccati_verdict = false;
  // Weak observability (sufficient mode, range 1..K hbar - 1)
  bool weak_obs_verdict = false;
  std::optional<long> weak_obs_K;
  std::optional<Scalar> weak_obs_C;
  // Concatenated control
  bool concatenation_verdict = false;
  std::optional<long> concatenation_K;
  // Steering bounds where the decision holds at (sigma, C)
  std::optional<bool> decision_holds;
  std::optional<bool> steering_state_bound_ok;
  std::optional<bool> steering_control_bound_ok;

  bool agree() const { return riccati_verdict == weak_obs_verdict && weak_obs_verdict == concatenation_verdict; }
};

template <typename Scalar>
VerdictChain<Scalar> evaluate_chain(const ImpulseSystem<Scalar>& sys, const ChainOptions<Scalar>& opt) {
  VerdictChain<Scalar> out;
  const auto w = identity_weights(sys);
  const auto ric = periodic_riccati_solve(sys, w, opt.riccati);
  out.riccati_status = ric.status;
  if (ric.converged()) {
    out.rho = spectral_radius(monodromy(sys, synthesize_feedback(sys, w, *ric.solution)));
    out.riccati_verdict = *out.rho < 1;
  }

  for (long K = 1; K <= opt.k_max; ++K) {
    const auto pair = build_observability_pair(sys, K * sys.hbar(), ObsRange::kBeforeHorizon);
    const auto rep = weak_obs_minimal_C(pair, opt.sigma, WeakObsMode::kSufficient);
    if (rep.feasible) {
      out.weak_obs_verdict = true;
      out.weak_obs_K = K;
      out.weak_obs_C = rep.C;
      WeakObsOptions<Scalar> wopt;
      wopt.seed = opt.seed;
      out.decision_holds = weak_obs_holds(pair, opt.sigma, rep.C, wopt).holds;
      break;
    }
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<VectorX<Scalar>> starts;
  for (Eigen::Index i = 0; i < sys.state_dim(); ++i) starts.push_back(VectorX<Scalar>::Unit(sys.state_dim(), i));
  for (int i = 0; i < opt.random_initial_states; ++i) {
    starts.push_back(detail::gaussian_matrix<Scalar>(sys.state_dim(), 1, rng).col(0));
  }

  if (out.decision_holds && *out.decision_holds) {
    bool state_ok = true;
    bool control_ok = true;
    for (const auto& x0 : starts) {
      const auto s = steering_control(sys, x0, *out.weak_obs_K, opt.sigma, opt.epsilon, out.weak_obs_C);
      state_ok = state_ok && s.within_target;
      control_ok = control_ok && s.control_bound_ok.value_or(false);
    }
    out.steering_state_bound_ok = state_ok;
    out.steering_control_bound_ok = control_ok;
  }

  for (long K = 1; K <= opt.k_max && !out.concatenation_verdict; ++K) {
    bool all = true;
    for (const auto& x0 : starts) {
      try {
        const auto c = concatenated_stabilizing_control(sys, x0, K, opt.sigma, opt.epsilon, opt.tol);
        all = all && c.certified;
      } catch (const SteeringError&) {
        all = false;
      }
      if (!all) break;
    }
    if (all) {
      out.concatenation_verdict = true;
      out.concatenation_K = K;
    }
  }
  return out;
}

template <typename Scalar>
struct BatteryInstance {
  int index = 0;
  Stratum stratum = Stratum::kControllable;
  ImpulseSystem<Scalar> system;
};

/// Instances are drawn sequentially from one generator, cycling through the
/// requested strata, so the battery is reproducible from the seed alone.
template <typename Scalar>
std::vector<BatteryInstance<Scalar>> generate_battery(int count, int max_dim, const std::vector<Stratum>& strata,
                                                      std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("generate_battery: count must be nonnegative");
  if (count > 0 && strata.empty()) throw std::invalid_argument("generate_battery: no strata requested");
  std::mt19937_64 rng(seed);
  std::vector<BatteryInstance<Scalar>> out;
  for (int i = 0; i < count; ++i) {
    const Stratum s = strata[static_cast<std::size_t>(i) % strata.size()];
    out.push_back({i, s, random_instance<Scalar>(s, max_dim, rng)});
  }
  return out;
}

/// Evaluates instances on a bounded worker pool; results come back in index
/// order and do not depend on scheduling.
template <typename Scalar>
std::vector<VerdictChain<Scalar>> run_battery(const std::vector<BatteryInstance<Scalar>>& instances,
                                              const ChainOptions<Scalar>& opt, unsigned workers = 0) {
  std::vector<VerdictChain<Scalar>> out(instances.size());
  if (instances.empty()) return out;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(instances.size()));
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      ChainOptions<Scalar> local = opt;
      local.seed = opt.seed * 1000003ull + static_cast<std::uint64_t>(instances[i].index);
      out[i] = evaluate_chain(instances[i].system, local);
    }
  };
  std::vector<std::future<void>> jobs;
  for (unsigned w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, work));
  for (auto& j : jobs) j.get();
  return out;
}

}  // namespace impstab
