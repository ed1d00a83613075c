#pragma once

// Weak observability of the dual system and the steering controls built from
// it.
//
// For a horizon index k, the pair (L, G) encodes
//   ||e^{A^T t_k} phi|| = ||L^T phi||,   L = E_{nu(k)} ... E_1,
//   ||G phi||^2 = sum_j ||B_{nu(j)}^T (E_{nu(k)} ... E_{nu(j+1)})^T phi||^2,
// with j ranging over 1..k or 1..k-1. The inequality under study is
//   ||L^T phi|| <= C ||G phi|| + sigma ||phi||   for all phi.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "impstab/core.hpp"
#include "impstab/linalg.hpp"

namespace impstab {

enum class ObsRange {
  kThroughHorizon,  // j = 1..k
  kBeforeHorizon,   // j = 1..k-1
};

template <typename Scalar>
struct ObservabilityPair {
  MatrixX<Scalar> L;       // d x d
  MatrixX<Scalar> G;       // (blocks * m) x d
  long horizon = 0;        // k
  Eigen::Index block_rows = 0;  // m
  long blocks = 0;
  ObsRange range = ObsRange::kThroughHorizon;

  auto block(long j) const { return G.middleRows((j - 1) * block_rows, block_rows); }
};

template <typename Scalar>
ObservabilityPair<Scalar> build_observability_pair(const ImpulseSystem<Scalar>& sys, long k,
                                                   ObsRange range = ObsRange::kThroughHorizon) {
  sys.validate();
  if (k < 1) throw std::invalid_argument("build_observability_pair: horizon must be >= 1");
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  ObservabilityPair<Scalar> pair;
  pair.horizon = k;
  pair.range = range;
  pair.block_rows = m;
  pair.blocks = range == ObsRange::kThroughHorizon ? k : k - 1;
  pair.G.resize(pair.blocks * m, d);
  // Walk backwards so the flow product from j+1 to k accumulates.
  MatrixX<Scalar> tail = MatrixX<Scalar>::Identity(d, d);  // E_{nu(k)} ... E_{nu(j+1)}
  for (long j = k; j >= 1; --j) {
    if (j <= pair.blocks) pair.G.middleRows((j - 1) * m, m) = sys.input_at(j).transpose() * tail.transpose();
    tail = (tail * sys.flow_at(j)).eval();
  }
  pair.L = tail;
  return pair;
}

namespace detail {

template <typename Scalar>
using SphereObjective = std::function<Scalar(const VectorX<Scalar>&, VectorX<Scalar>*)>;

template <typename Scalar>
struct SphereMax {
  Scalar value = -std::numeric_limits<Scalar>::infinity();
  VectorX<Scalar> argmax;
};

/// Projected gradient ascent with backtracking from one start on the unit sphere.
template <typename Scalar>
SphereMax<Scalar> ascend_on_sphere(const SphereObjective<Scalar>& f, VectorX<Scalar> phi, int max_iter = 400) {
  phi.normalize();
  VectorX<Scalar> grad(phi.size());
  Scalar val = f(phi, &grad);
  Scalar step = 1;
  for (int it = 0; it < max_iter; ++it) {
    VectorX<Scalar> tangent = grad - grad.dot(phi) * phi;
    if (!tangent.allFinite() || tangent.norm() <= Scalar(1e-13) * (Scalar(1) + std::abs(val))) break;
    bool moved = false;
    while (step > Scalar(1e-14)) {
      VectorX<Scalar> trial = (phi + step * tangent).normalized();
      VectorX<Scalar> trial_grad(phi.size());
      const Scalar tv = f(trial, &trial_grad);
      if (tv > val) {
        const Scalar gain = tv - val;
        phi = trial;
        grad = trial_grad;
        val = tv;
        step = std::min(step * 2, Scalar(1e6));
        moved = gain > Scalar(1e-16) * (Scalar(1) + std::abs(val));
        break;
      }
      step /= 2;
    }
    if (!moved) break;
  }
  return {val, phi};
}

/// Best of deterministic seeded random starts plus caller-supplied starts.
/// Ties keep the lowest start index.
template <typename Scalar>
SphereMax<Scalar> multistart_sphere_max(const SphereObjective<Scalar>& f, Eigen::Index d,
                                        const std::vector<VectorX<Scalar>>& seeded_starts, int random_starts,
                                        std::uint64_t seed) {
  std::vector<VectorX<Scalar>> starts;
  for (const auto& s : seeded_starts) {
    if (s.size() == d && s.norm() > 0 && s.allFinite()) starts.push_back(s);
  }
  for (int i = 0; i < random_starts; ++i) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorX<Scalar> v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = Scalar(gauss(rng));
    if (v.norm() == 0) v(0) = 1;
    starts.push_back(v);
  }
  SphereMax<Scalar> best;
  for (const auto& s : starts) {
    auto r = ascend_on_sphere(f, s);
    if (r.value > best.value) best = std::move(r);
  }
  return best;
}

template <typename Scalar>
std::vector<VectorX<Scalar>> structural_starts(const ObservabilityPair<Scalar>& pair) {
  std::vector<VectorX<Scalar>> starts;
  const Eigen::Index d = pair.L.rows();
  const MatrixX<Scalar> LLt = symmetrized(pair.L * pair.L.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(LLt);
  for (Eigen::Index i = 0; i < d; ++i) starts.push_back(es.eigenvectors().col(d - 1 - i));
  const MatrixX<Scalar> N = null_space_basis(pair.G);
  for (Eigen::Index i = 0; i < N.cols(); ++i) starts.push_back(N.col(i));
  if (pair.G.rows() > 0) {
    const MatrixX<Scalar> GtG = pair.G.transpose() * pair.G;
    const Scalar reg = std::max(Scalar(1e-300), Scalar(1e-8) * std::max(Scalar(1), operator_norm(GtG)));
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixX<Scalar>> ges(
        LLt, symmetrized(GtG + reg * MatrixX<Scalar>::Identity(d, d)));
    if (ges.info() == Eigen::Success) {
      for (Eigen::Index i = 0; i < d; ++i) starts.push_back(ges.eigenvectors().col(d - 1 - i));
    }
  }
  return starts;
}

template <typename Scalar>
void check_sigma(Scalar sigma) {
  if (!(sigma > 0 && sigma < 1)) throw std::invalid_argument("sigma must lie in (0, 1)");
}

}  // namespace detail

enum class WeakObsMode { kSearch, kSufficient };

inline const char* to_string(WeakObsMode m) { return m == WeakObsMode::kSearch ? "search" : "sufficient"; }

template <typename Scalar>
struct WeakObsReport {
  Scalar sigma = 0;
  long horizon = 0;
  WeakObsMode mode = WeakObsMode::kSearch;
  bool feasible = false;
  Scalar C = 0;  // meaningful when feasible
  VectorX<Scalar> witness;
};

template <typename Scalar>
struct WeakObsOptions {
  int random_starts = 32;
  std::uint64_t seed = 1;
  Scalar rank_threshold = Scalar(1e-10);
};

/// Null-space obstruction: sup of ||L^T phi|| over unit phi in ker G.
template <typename Scalar>
detail::SphereMax<Scalar> null_obstruction(const ObservabilityPair<Scalar>& pair, Scalar rel) {
  detail::SphereMax<Scalar> out;
  out.value = 0;
  const MatrixX<Scalar> N = null_space_basis(pair.G, rel);
  if (N.cols() == 0) return out;
  const MatrixX<Scalar> LtN = pair.L.transpose() * N;
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(LtN, Eigen::ComputeFullV);
  out.value = svd.singularValues()(0);
  out.argmax = N * svd.matrixV().col(0);
  return out;
}

/// Smallest C for which the inequality holds: estimated by multi-start ascent
/// (search) or certified through C^2 G^T G + sigma^2 I - L L^T >= 0 (sufficient).
template <typename Scalar>
WeakObsReport<Scalar> weak_obs_minimal_C(const ObservabilityPair<Scalar>& pair, Scalar sigma, WeakObsMode mode,
                                         const WeakObsOptions<Scalar>& opt = {}) {
  detail::check_sigma(sigma);
  const Eigen::Index d = pair.L.rows();
  WeakObsReport<Scalar> rep;
  rep.sigma = sigma;
  rep.horizon = pair.horizon;
  rep.mode = mode;
  rep.witness = VectorX<Scalar>::Unit(d, 0);

  const auto obstruction = null_obstruction(pair, opt.rank_threshold);
  if (obstruction.value > sigma) {
    rep.feasible = false;
    rep.witness = obstruction.argmax;
    return rep;
  }
  if (operator_norm(pair.L) <= sigma) {
    rep.feasible = true;
    rep.C = 0;
    return rep;
  }

  if (mode == WeakObsMode::kSearch) {
    const MatrixX<Scalar> LLt = pair.L * pair.L.transpose();
    const MatrixX<Scalar> GtG = pair.G.transpose() * pair.G;
    const detail::SphereObjective<Scalar> ratio = [&](const VectorX<Scalar>& phi, VectorX<Scalar>* grad) {
      const VectorX<Scalar> lphi = LLt * phi;
      const VectorX<Scalar> gphi = GtG * phi;
      const Scalar a = std::sqrt(std::max(Scalar(0), phi.dot(lphi)));
      const Scalar b = std::max(std::sqrt(std::max(Scalar(0), phi.dot(gphi))), Scalar(1e-150));
      const Scalar val = (a - sigma) / b;
      if (grad) {
        const VectorX<Scalar> da = a > 0 ? VectorX<Scalar>(lphi / a) : VectorX<Scalar>::Zero(d);
        *grad = (da * b - (a - sigma) * gphi / b) / (b * b);
      }
      return val;
    };
    const auto best = detail::multistart_sphere_max<Scalar>(ratio, d, detail::structural_starts(pair),
                                                            opt.random_starts, opt.seed);
    rep.feasible = true;
    rep.C = std::max(Scalar(0), best.value);
    rep.witness = best.argmax;
    return rep;
  }

  // Sufficient mode: M(C) = C^2 G^T G + sigma^2 I - L L^T is monotone in C.
  const MatrixX<Scalar> LLt = symmetrized(pair.L * pair.L.transpose());
  const MatrixX<Scalar> GtG = symmetrized(pair.G.transpose() * pair.G);
  const Scalar scale = std::max(Scalar(1), operator_norm(LLt));
  const auto certified = [&](Scalar C) {
    const MatrixX<Scalar> M = C * C * GtG + sigma * sigma * MatrixX<Scalar>::Identity(d, d) - LLt;
    return min_eigenvalue(M) >= -Scalar(1e-13) * scale;
  };
  if (certified(0)) {
    rep.feasible = true;
    rep.C = 0;
    return rep;
  }
  Scalar hi = 1;
  while (!certified(hi)) {
    hi *= 2;
    if (hi > Scalar(1e12)) {
      rep.feasible = false;
      Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(symmetrized(
          MatrixX<Scalar>(hi * hi * GtG + sigma * sigma * MatrixX<Scalar>::Identity(d, d) - LLt)));
      rep.witness = es.eigenvectors().col(0);
      return rep;
    }
  }
  Scalar lo = hi / 2;
  if (certified(lo)) lo = 0;
  for (int it = 0; it < 200 && (hi - lo) > Scalar(1e-9) * hi; ++it) {
    const Scalar mid = lo > 0 ? std::sqrt(lo * hi) : hi / 2;
    if (certified(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  rep.feasible = true;
  rep.C = hi;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(
      symmetrized(MatrixX<Scalar>(lo * lo * GtG + sigma * sigma * MatrixX<Scalar>::Identity(d, d) - LLt)));
  rep.witness = es.eigenvectors().col(0);
  return rep;
}

template <typename Scalar>
struct WeakObsDecision {
  bool holds = false;
  Scalar max_violation = 0;  // max over the sphere of ||L^T phi|| - C ||G phi|| - sigma
  VectorX<Scalar> witness;
};

template <typename Scalar>
WeakObsDecision<Scalar> weak_obs_holds(const ObservabilityPair<Scalar>& pair, Scalar sigma, Scalar C,
                                       const WeakObsOptions<Scalar>& opt = {}) {
  detail::check_sigma(sigma);
  if (C < 0) throw std::invalid_argument("weak_obs_holds: C must be nonnegative");
  const Eigen::Index d = pair.L.rows();
  const MatrixX<Scalar> LLt = symmetrized(pair.L * pair.L.transpose());
  const MatrixX<Scalar> GtG = symmetrized(pair.G.transpose() * pair.G);
  const detail::SphereObjective<Scalar> gap = [&](const VectorX<Scalar>& phi, VectorX<Scalar>* grad) {
    const VectorX<Scalar> lphi = LLt * phi;
    const VectorX<Scalar> gphi = GtG * phi;
    const Scalar a = std::sqrt(std::max(Scalar(0), phi.dot(lphi)));
    const Scalar b = std::sqrt(std::max(Scalar(0), phi.dot(gphi)));
    if (grad) {
      grad->setZero(d);
      if (a > 0) *grad += lphi / a;
      if (b > 0) *grad -= C * gphi / b;
    }
    return a - C * b - sigma;
  };
  auto starts = detail::structural_starts(pair);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(
      symmetrized(MatrixX<Scalar>(C * C * GtG + sigma * sigma * MatrixX<Scalar>::Identity(d, d) - LLt)));
  for (Eigen::Index i = 0; i < d; ++i) starts.push_back(es.eigenvectors().col(i));
  const auto best = detail::multistart_sphere_max<Scalar>(gap, d, starts, opt.random_starts, opt.seed);
  WeakObsDecision<Scalar> out;
  out.max_violation = best.value;
  out.witness = best.argmax;
  out.holds = best.value <= Scalar(1e-9) * std::max(Scalar(1), operator_norm(pair.L));
  return out;
}

template <typename Scalar>
struct HolderReport {
  Scalar theta = 0;
  bool feasible = false;
  Scalar C = 0;
  VectorX<Scalar> witness;
};

/// sup over unit phi of ||L^T phi|| / (sum_j ||G_j phi||)^theta.
template <typename Scalar>
HolderReport<Scalar> holder_obs_check(const ObservabilityPair<Scalar>& pair, Scalar theta,
                                      const WeakObsOptions<Scalar>& opt = {}) {
  if (!(theta > 0 && theta <= 1)) throw std::invalid_argument("holder_obs_check: theta must lie in (0, 1]");
  const Eigen::Index d = pair.L.rows();
  HolderReport<Scalar> rep;
  rep.theta = theta;
  const Scalar lnorm = operator_norm(pair.L);
  if (lnorm == 0) {
    rep.feasible = true;
    rep.witness = VectorX<Scalar>::Unit(d, 0);
    return rep;
  }
  const auto obstruction = null_obstruction(pair, opt.rank_threshold);
  if (obstruction.value > Scalar(1e-12) * std::max(Scalar(1), lnorm)) {
    rep.witness = obstruction.argmax;
    return rep;
  }
  const MatrixX<Scalar> LLt = pair.L * pair.L.transpose();
  const detail::SphereObjective<Scalar> log_ratio = [&](const VectorX<Scalar>& phi, VectorX<Scalar>* grad) {
    const VectorX<Scalar> lphi = LLt * phi;
    const Scalar a2 = std::max(phi.dot(lphi), Scalar(1e-300));
    Scalar s = 0;
    VectorX<Scalar> ds = VectorX<Scalar>::Zero(d);
    for (long j = 1; j <= pair.blocks; ++j) {
      const VectorX<Scalar> gj = pair.block(j) * phi;
      const Scalar nj = gj.norm();
      s += nj;
      if (nj > 0) ds += pair.block(j).transpose() * gj / nj;
    }
    s = std::max(s, Scalar(1e-300));
    if (grad) *grad = lphi / a2 - theta * ds / s;
    return Scalar(0.5) * std::log(a2) - theta * std::log(s);
  };
  const auto best = detail::multistart_sphere_max<Scalar>(log_ratio, d, detail::structural_starts(pair),
                                                          opt.random_starts, opt.seed);
  rep.feasible = true;
  rep.C = std::exp(best.value);
  rep.witness = best.argmax;
  return rep;
}

// ---------------------------------------------------------------------------
// Steering controls.

class SteeringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct SteeringResult {
  ControlSequence<Scalar> u;   // u_1..u_{K hbar}, last entry zero
  VectorX<Scalar> phi_star;
  VectorX<Scalar> final_state;  // x(t_{K hbar})
  Scalar achieved_norm = 0;
  Scalar control_norm = 0;
  Scalar target = 0;           // sigma ||x0|| + eps
  Scalar epsilon = 0;
  bool within_target = false;
  std::optional<bool> control_bound_ok;  // ||u|| <= 2 C ||x0|| + 1e-8 when C supplied
};

/// Minimizes J_eps(phi) = 1/2 ||G phi||^2 + <phi, L x0> + (sigma ||x0|| + eps) ||phi||
/// over the horizon K hbar (observation range 1..K hbar - 1) and emits
/// u_j = G_j phi*. For phi* != 0 the optimality condition is
/// (G^T G + lambda I) phi = -L x0 with lambda ||phi|| = sigma ||x0|| + eps,
/// monotone in lambda; phi* = 0 iff ||L x0|| <= sigma ||x0|| + eps.
template <typename Scalar>
SteeringResult<Scalar> steering_control(const ImpulseSystem<Scalar>& sys, const std::type_identity_t<VectorX<Scalar>>& x0, long K,
                                        Scalar sigma, Scalar eps, std::type_identity_t<std::optional<Scalar>> C = std::nullopt,
                                        Scalar rank_threshold = Scalar(1e-10)) {
  detail::check_sigma(sigma);
  detail::check_state(sys, x0);
  if (K < 1) throw std::invalid_argument("steering_control: K must be >= 1");
  if (!(eps > 0)) throw std::invalid_argument("steering_control: eps must be positive");
  const long k = K * sys.hbar();
  const Eigen::Index d = sys.state_dim();
  const auto pair = build_observability_pair(sys, k, ObsRange::kBeforeHorizon);

  SteeringResult<Scalar> res;
  res.epsilon = eps;
  res.target = sigma * x0.norm() + eps;
  const VectorX<Scalar> b = pair.L * x0;
  res.phi_star = VectorX<Scalar>::Zero(d);

  if (b.norm() > res.target) {
    // Eigenbasis of G^T G through the SVD of G.
    VectorX<Scalar> lambda_g = VectorX<Scalar>::Zero(d);
    MatrixX<Scalar> V = MatrixX<Scalar>::Identity(d, d);
    if (pair.G.rows() > 0) {
      Eigen::JacobiSVD<MatrixX<Scalar>> svd(pair.G, Eigen::ComputeFullV);
      V = svd.matrixV();
      const auto& s = svd.singularValues();
      const Scalar cut = s.size() > 0 ? rank_threshold * s(0) : Scalar(0);
      for (Eigen::Index i = 0; i < s.size(); ++i) lambda_g(i) = s(i) > cut ? s(i) * s(i) : Scalar(0);
    }
    const VectorX<Scalar> beta = V.transpose() * b;
    Scalar null_sq = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (lambda_g(i) == 0) null_sq += beta(i) * beta(i);
    }
    if (std::sqrt(null_sq) >= res.target) {
      throw SteeringError("steering_control: functional is not coercive; unobservable component " +
                          std::to_string(static_cast<double>(std::sqrt(null_sq))) + " >= target " +
                          std::to_string(static_cast<double>(res.target)));
    }
    // g(lambda) = ||lambda (G^T G + lambda I)^{-1} b||, increasing from the
    // null component to ||b||.
    const auto g = [&](Scalar lam) {
      Scalar acc = 0;
      for (Eigen::Index i = 0; i < d; ++i) {
        const Scalar t = lam * beta(i) / (lambda_g(i) + lam);
        acc += t * t;
      }
      return std::sqrt(acc);
    };
    const Scalar ref = std::max(lambda_g.maxCoeff(), Scalar(1));
    Scalar lo = ref;
    Scalar hi = ref;
    while (g(lo) >= res.target) lo /= 4;
    while (g(hi) < res.target) hi *= 4;
    for (int it = 0; it < 300; ++it) {
      const Scalar mid = std::sqrt(lo * hi);
      if (g(mid) < res.target) {
        lo = mid;
      } else {
        hi = mid;
      }
      if (hi - lo <= std::numeric_limits<Scalar>::epsilon() * hi) break;
    }
    const Scalar lam = std::sqrt(lo * hi);
    VectorX<Scalar> coeff(d);
    for (Eigen::Index i = 0; i < d; ++i) coeff(i) = -beta(i) / (lambda_g(i) + lam);
    res.phi_star = V * coeff;
  }

  for (long j = 1; j <= k; ++j) {
    if (j <= pair.blocks) {
      res.u.values.push_back(pair.block(j) * res.phi_star);
    } else {
      res.u.values.push_back(VectorX<Scalar>::Zero(sys.input_dim()));
    }
  }
  const auto traj = simulate_open_loop(sys, x0, res.u, k);
  res.final_state = traj.post.back();
  res.achieved_norm = traj.norms_pre.back();
  res.control_norm = res.u.prefix_norm();
  res.within_target = res.achieved_norm <= res.target + Scalar(1e-8);
  if (C) res.control_bound_ok = res.control_norm <= Scalar(2) * (*C) * x0.norm() + Scalar(1e-8);
  return res;
}

/// Directional derivative of J_eps at phi in direction xi.
template <typename Scalar>
Scalar steering_directional_derivative(const ObservabilityPair<Scalar>& pair, const VectorX<Scalar>& Lx0,
                                       Scalar weight, const VectorX<Scalar>& phi, const VectorX<Scalar>& xi) {
  const Scalar smooth = Lx0.dot(xi) + (pair.G * phi).dot(pair.G * xi);
  const Scalar pn = phi.norm();
  return smooth + (pn > 0 ? weight * phi.dot(xi) / pn : weight * xi.norm());
}

template <typename Scalar>
struct ConcatenationResult {
  ControlSequence<Scalar> u;
  Trajectory<Scalar> trajectory;
  std::vector<Scalar> block_state_norms;    // ||x_l(t_{K hbar}^+)||, l = 0..blocks
  std::vector<Scalar> block_control_norms;  // ||v^l||
  std::vector<Scalar> state_sq_partial_sums;  // sum ||x(t_j)||^2 through block l
  Scalar control_sq_sum = 0;
  Scalar fitted_ratio = 0;
  Scalar state_sq_tail_estimate = 0;
  std::optional<bool> control_bound_ok;  // sum ||v^l||^2 <= (2C)^2 sum ||x_{l-1}||^2
  bool certified = false;
  long blocks() const { return static_cast<long>(block_control_norms.size()); }
};

/// Concatenates steering blocks of K hbar instants until the block-end
/// state falls below tol ||x0||. Each block uses eps scaled by its starting
/// state norm, so the per-block contraction is sigma + eps.
template <typename Scalar>
ConcatenationResult<Scalar> concatenated_stabilizing_control(const ImpulseSystem<Scalar>& sys, const std::type_identity_t<VectorX<Scalar>>& x0,
                                                             long K, Scalar sigma, Scalar eps, Scalar tol,
                                                             std::type_identity_t<std::optional<Scalar>> C = std::nullopt,
                                                             int max_blocks = 1000) {
  detail::check_sigma(sigma);
  detail::check_state(sys, x0);
  if (!(sigma + eps < 1)) throw std::invalid_argument("concatenated_stabilizing_control: need sigma + eps < 1");
  ConcatenationResult<Scalar> out;
  out.trajectory.x0 = x0;
  const Scalar x0n = x0.norm();
  out.block_state_norms.push_back(x0n);
  if (x0n == 0) {
    out.certified = true;
    return out;
  }
  const long k = K * sys.hbar();
  VectorX<Scalar> x = x0;
  Scalar bound_lhs = 0;
  Scalar bound_rhs = 0;
  while (x.norm() >= tol * x0n) {
    if (out.blocks() >= max_blocks) throw SteeringError("concatenated_stabilizing_control: block limit reached");
    const Scalar xn = x.norm();
    const auto block = steering_control(sys, x, K, sigma, eps * xn, C);
    if (!(block.achieved_norm < xn)) {
      throw SteeringError("steering contraction violated at block " + std::to_string(out.blocks() + 1));
    }
    for (const auto& v : block.u.values) out.u.values.push_back(v);
    out.block_control_norms.push_back(block.control_norm);
    out.control_sq_sum += block.control_norm * block.control_norm;
    bound_lhs += block.control_norm * block.control_norm;
    if (C) bound_rhs += Scalar(4) * (*C) * (*C) * xn * xn;
    x = block.final_state;
    out.block_state_norms.push_back(x.norm());
    if (x.norm() == 0) break;
  }

  // Independent recomputation of the whole concatenated trajectory.
  const long steps = static_cast<long>(out.u.size());
  if (steps > 0) out.trajectory = simulate_open_loop(sys, x0, out.u, steps);
  Scalar acc = 0;
  for (long j = 1; j <= steps; ++j) {
    acc += out.trajectory.norms_pre[static_cast<std::size_t>(j - 1)] * out.trajectory.norms_pre[static_cast<std::size_t>(j - 1)];
    if (j % k == 0) out.state_sq_partial_sums.push_back(acc);
  }

  // Geometric fit of block-end norms.
  std::vector<Scalar> ys;
  for (const Scalar n : out.block_state_norms) {
    if (n > 0) ys.push_back(std::log(n));
  }
  if (ys.size() >= 2) {
    const Scalar n = static_cast<Scalar>(ys.size());
    Scalar tm = (n - 1) / 2;
    Scalar ym = 0;
    for (const Scalar y : ys) ym += y;
    ym /= n;
    Scalar sxy = 0;
    Scalar sxx = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      sxy += (Scalar(i) - tm) * (ys[i] - ym);
      sxx += (Scalar(i) - tm) * (Scalar(i) - tm);
    }
    out.fitted_ratio = std::exp(sxy / sxx);
  }
  const Scalar r = out.fitted_ratio;
  const Scalar last_block = out.state_sq_partial_sums.size() >= 2
                                ? out.state_sq_partial_sums.back() - out.state_sq_partial_sums[out.state_sq_partial_sums.size() - 2]
                                : acc;
  out.state_sq_tail_estimate = (r < 1) ? last_block * r * r / (1 - r * r) : std::numeric_limits<Scalar>::infinity();
  if (C) out.control_bound_ok = bound_lhs <= bound_rhs + Scalar(1e-8);
  const Scalar final_norm = out.trajectory.size() ? out.trajectory.norms_post.back() : x0n;
  out.certified = r < 1 && std::isfinite(acc) && final_norm < tol * x0n * (1 + Scalar(1e-6)) + Scalar(1e-300);
  return out;
}

}  // namespace impstab
