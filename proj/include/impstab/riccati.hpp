#pragma once

// Discrete LQ problems attached to an impulse system and the periodic
// Riccati-type equation
//
//   P_{k-1} = E_k^T ( P_k + Q_k - P_k B_k (R_k + B_k^T P_k B_k)^{-1} B_k^T P_k ) E_k,
//   k = 1..hbar,  P_0 = P_hbar,
//
// solved as the limit of zero-terminal-weight finite-horizon recursions.
// P_l is the value matrix of the post-impulse state x(t_l^+).

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "impstab/core.hpp"
#include "impstab/linalg.hpp"

namespace impstab {

template <typename Scalar>
struct CostWeights {
  std::vector<MatrixX<Scalar>> Q;  // Q_1..Q_hbar, d x d
  std::vector<MatrixX<Scalar>> R;  // R_1..R_hbar, m x m
  Scalar q_margin = Scalar(0);
  Scalar r_margin = Scalar(0);

  const MatrixX<Scalar>& Q_at(long j) const { return Q[nu(j, static_cast<int>(Q.size())) - 1]; }
  const MatrixX<Scalar>& R_at(long j) const { return R[nu(j, static_cast<int>(R.size())) - 1]; }

  /// Checks shapes, symmetry and Q_k - q_margin I >= 0, R_k - r_margin I >= 0.
  void validate(const ImpulseSystem<Scalar>& sys) const {
    const auto h = static_cast<std::size_t>(sys.hbar());
    if (Q.size() != h || R.size() != h) throw std::invalid_argument("weights: need hbar Q and R matrices");
    if (!(q_margin > 0) || !(r_margin > 0)) throw std::invalid_argument("weights: margins must be positive");
    const Eigen::Index d = sys.state_dim();
    const Eigen::Index m = sys.input_dim();
    for (std::size_t k = 0; k < h; ++k) {
      if (Q[k].rows() != d || Q[k].cols() != d) throw std::invalid_argument("weights: Q_k must be d x d");
      if (R[k].rows() != m || R[k].cols() != m) throw std::invalid_argument("weights: R_k must be m x m");
      if (!is_symmetric(Q[k]) || !is_symmetric(R[k])) throw std::invalid_argument("weights: Q_k, R_k must be symmetric");
      const Scalar slack = Scalar(1e-12);
      if (min_eigenvalue(Q[k]) < q_margin * (1 - slack)) throw std::invalid_argument("weights: Q_k below its margin");
      if (min_eigenvalue(R[k]) < r_margin * (1 - slack)) throw std::invalid_argument("weights: R_k below its margin");
    }
  }
};

/// Q_k = q I, R_k = r I on every slot.
template <typename Scalar>
CostWeights<Scalar> identity_weights(const ImpulseSystem<Scalar>& sys, Scalar q = 1, Scalar r = 1) {
  CostWeights<Scalar> w;
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  w.Q.assign(sys.hbar(), q * MatrixX<Scalar>::Identity(d, d));
  w.R.assign(sys.hbar(), r * MatrixX<Scalar>::Identity(m, m));
  w.q_margin = q;
  w.r_margin = r;
  return w;
}

template <typename Scalar>
struct RiccatiSolution {
  std::vector<MatrixX<Scalar>> P;  // P_0..P_hbar with P_0 == P_hbar
  Scalar residual = 0;
  int iterations = 0;

  const MatrixX<Scalar>& at_slot(long l) const {
    const long h = static_cast<long>(P.size()) - 1;
    return P[static_cast<std::size_t>(l % h)];
  }
};

namespace detail {

/// One backward step: returns E^T (P + Q - P B S^{-1} B^T P) E with
/// S = R + B^T P B factored by LLT.
template <typename Scalar>
MatrixX<Scalar> riccati_step(const MatrixX<Scalar>& E, const MatrixX<Scalar>& B, const MatrixX<Scalar>& Q,
                             const MatrixX<Scalar>& R, const MatrixX<Scalar>& P) {
  const MatrixX<Scalar> BtP = B.transpose() * P;
  const MatrixX<Scalar> S = symmetrized(R + BtP * B);
  Eigen::LLT<MatrixX<Scalar>> llt(S);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("riccati: R + B^T P B is not positive definite (corrupted weights)");
  }
  const MatrixX<Scalar> inner = P + Q - BtP.transpose() * llt.solve(BtP);
  return symmetrized(E.transpose() * inner * E);
}

template <typename Scalar>
MatrixX<Scalar> feedback_gain(const MatrixX<Scalar>& B, const MatrixX<Scalar>& R, const MatrixX<Scalar>& P) {
  const MatrixX<Scalar> BtP = B.transpose() * P;
  Eigen::LLT<MatrixX<Scalar>> llt(symmetrized(R + BtP * B));
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("riccati: R + B^T P B is not positive definite (corrupted weights)");
  }
  return -llt.solve(BtP);
}

}  // namespace detail

/// Backward recursion from P_khat = M; returns P_0..P_khat (size khat + 1).
template <typename Scalar>
std::vector<MatrixX<Scalar>> finite_horizon_riccati(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                                    const std::type_identity_t<MatrixX<Scalar>>& M, long khat) {
  sys.validate();
  if (khat < 1) throw std::invalid_argument("finite_horizon_riccati: khat must be >= 1");
  if (M.rows() != sys.state_dim() || M.cols() != sys.state_dim()) {
    throw std::invalid_argument("finite_horizon_riccati: terminal weight must be d x d");
  }
  if (!is_symmetric(M) || !is_psd(M)) throw std::invalid_argument("finite_horizon_riccati: terminal weight must be symmetric PSD");
  std::vector<MatrixX<Scalar>> P(static_cast<std::size_t>(khat + 1));
  P[static_cast<std::size_t>(khat)] = symmetrized(M);
  for (long j = khat; j >= 1; --j) {
    P[static_cast<std::size_t>(j - 1)] =
        detail::riccati_step(sys.flow_at(j), sys.input_at(j), w.Q_at(j), w.R_at(j), P[static_cast<std::size_t>(j)]);
  }
  return P;
}

/// <P x0, x0>: the optimal finite-horizon cost from x0 placed at t_l^+.
template <typename Scalar>
Scalar finite_horizon_value(const MatrixX<Scalar>& P, const std::type_identity_t<VectorX<Scalar>>& x0) {
  return x0.dot(P * x0);
}

/// J(v; x0, l, khat): stage costs over j = l+1..khat plus <M x(t_khat^+), x(t_khat^+)>.
/// v.values[i] is the control at instant l + 1 + i.
template <typename Scalar>
Scalar finite_horizon_cost(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w, const std::type_identity_t<MatrixX<Scalar>>& M,
                           const std::type_identity_t<VectorX<Scalar>>& x0, long ell, long khat, const ControlSequence<Scalar>& v) {
  if (ell < 0 || ell >= khat) throw std::invalid_argument("finite_horizon_cost: need 0 <= l < khat");
  if (v.size() < static_cast<std::size_t>(khat - ell)) throw std::invalid_argument("finite_horizon_cost: control too short");
  VectorX<Scalar> x = x0;
  Scalar cost = 0;
  for (long j = ell + 1; j <= khat; ++j) {
    const auto& vj = v.values[static_cast<std::size_t>(j - ell - 1)];
    const VectorX<Scalar> before = sys.flow_at(j) * x;
    cost += before.dot(w.Q_at(j) * before) + vj.dot(w.R_at(j) * vj);
    x = before + sys.input_at(j) * vj;
  }
  return cost + x.dot(M * x);
}

/// Closed-loop optimal control v_j = -(R_j + B_j^T P_j B_j)^{-1} B_j^T P_j x(t_j), j = l+1..khat.
template <typename Scalar>
ControlSequence<Scalar> finite_horizon_optimal_control(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                                       const std::vector<MatrixX<Scalar>>& Ps,
                                                       const std::type_identity_t<VectorX<Scalar>>& x0, long ell, long khat) {
  if (ell < 0 || ell >= khat) throw std::invalid_argument("finite_horizon_optimal_control: need 0 <= l < khat");
  if (Ps.size() != static_cast<std::size_t>(khat + 1)) {
    throw std::invalid_argument("finite_horizon_optimal_control: expected khat + 1 Riccati matrices");
  }
  ControlSequence<Scalar> v;
  VectorX<Scalar> x = x0;
  for (long j = ell + 1; j <= khat; ++j) {
    const VectorX<Scalar> before = sys.flow_at(j) * x;
    const MatrixX<Scalar> F = detail::feedback_gain(sys.input_at(j), w.R_at(j), Ps[static_cast<std::size_t>(j)]);
    VectorX<Scalar> vj = F * before;
    x = before + sys.input_at(j) * vj;
    v.values.push_back(std::move(vj));
  }
  return v;
}

/// Max over k of the operator-norm defect of the periodic equation, plus ||P_0 - P_hbar||.
template <typename Scalar>
Scalar riccati_residual(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                        const RiccatiSolution<Scalar>& sol) {
  const int h = sys.hbar();
  if (sol.P.size() != static_cast<std::size_t>(h + 1)) throw std::invalid_argument("riccati_residual: need hbar + 1 matrices");
  Scalar worst = 0;
  for (int k = 1; k <= h; ++k) {
    const MatrixX<Scalar> rhs = detail::riccati_step(sys.flows[k - 1], sys.inputs[k - 1], w.Q[k - 1], w.R[k - 1], sol.P[k]);
    worst = std::max(worst, operator_norm(sol.P[k - 1] - rhs));
  }
  return worst + operator_norm(sol.P[0] - sol.P[h]);
}

enum class RiccatiStatus { kConverged, kNotStabilizable, kMaxPeriods };

inline const char* to_string(RiccatiStatus s) {
  switch (s) {
    case RiccatiStatus::kConverged: return "converged";
    case RiccatiStatus::kNotStabilizable: return "not_stabilizable";
    case RiccatiStatus::kMaxPeriods: return "max_periods";
  }
  return "unknown";
}

template <typename Scalar>
struct RiccatiOptions {
  Scalar tol = Scalar(1e-10);
  int max_periods = 10000;
  Scalar divergence_cap = Scalar(1e12);
};

template <typename Scalar>
struct RiccatiResult {
  RiccatiStatus status = RiccatiStatus::kMaxPeriods;
  std::optional<RiccatiSolution<Scalar>> solution;
  int periods = 0;
  Scalar last_norm = 0;
  /// Mean of log(||P^{(N)}||) increments over the last periods; positive and
  /// steady for divergent iterations.
  Scalar growth_rate = 0;
  std::string message;

  bool converged() const { return status == RiccatiStatus::kConverged; }
};

/// Value iteration in whole periods with zero terminal weight.
template <typename Scalar>
RiccatiResult<Scalar> periodic_riccati_solve(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                             const RiccatiOptions<Scalar>& opt = {}) {
  sys.validate();
  w.validate(sys);
  const int h = sys.hbar();
  const Eigen::Index d = sys.state_dim();

  RiccatiResult<Scalar> result;
  std::vector<MatrixX<Scalar>> period(static_cast<std::size_t>(h + 1));
  MatrixX<Scalar> anchor = MatrixX<Scalar>::Zero(d, d);
  Scalar prev_diff = std::numeric_limits<Scalar>::infinity();
  int shrinking = 0;
  std::vector<Scalar> log_norms;

  for (int n = 1; n <= opt.max_periods; ++n) {
    period[static_cast<std::size_t>(h)] = anchor;
    for (int k = h; k >= 1; --k) {
      period[static_cast<std::size_t>(k - 1)] =
          detail::riccati_step(sys.flows[k - 1], sys.inputs[k - 1], w.Q[k - 1], w.R[k - 1], period[static_cast<std::size_t>(k)]);
    }
    const MatrixX<Scalar>& next = period[0];
    if (!next.allFinite()) {
      throw std::runtime_error("periodic_riccati_solve: non-finite iterate after " + std::to_string(n) +
                               " periods (last norm " + std::to_string(static_cast<double>(result.last_norm)) + ")");
    }
    const Scalar norm = operator_norm(next);
    const Scalar diff = operator_norm(next - anchor);
    result.periods = n;
    result.last_norm = norm;
    log_norms.push_back(std::log(std::max(norm, std::numeric_limits<Scalar>::min())));
    if (log_norms.size() >= 2) {
      const std::size_t span = std::min<std::size_t>(log_norms.size() - 1, 10);
      result.growth_rate = (log_norms.back() - log_norms[log_norms.size() - 1 - span]) / Scalar(span);
    }

    if (norm > opt.divergence_cap) {
      result.status = RiccatiStatus::kNotStabilizable;
      result.message = "value iteration exceeded divergence cap";
      return result;
    }

    const Scalar scale = std::max(Scalar(1), norm);
    if (diff < opt.tol * scale) {
      RiccatiSolution<Scalar> sol;
      sol.P = period;
      sol.P[static_cast<std::size_t>(h)] = sol.P[0];
      sol.iterations = n;
      sol.residual = riccati_residual(sys, w, sol);
      if (sol.residual < opt.tol * scale) {
        result.status = RiccatiStatus::kConverged;
        result.solution = std::move(sol);
        return result;
      }
    }
    shrinking = (diff < prev_diff) ? shrinking + 1 : 0;
    prev_diff = diff;
    anchor = next;
  }

  // Increments that kept shrinking over the last window indicate slow
  // convergence; steady positive growth without shrinking indicates
  // divergence; anything else is left undecided.
  const bool slow = shrinking >= std::min(10, result.periods);
  const bool growing = !slow && result.growth_rate > 0;
  result.status = growing ? RiccatiStatus::kNotStabilizable : RiccatiStatus::kMaxPeriods;
  result.message = slow      ? "max_periods reached while still converging"
                   : growing ? "max_periods reached with steady growth"
                             : "max_periods reached without a clear trend";
  return result;
}

/// F_k = -(R_k + B_k^T P_k B_k)^{-1} B_k^T P_k.
template <typename Scalar>
FeedbackLaw<Scalar> synthesize_feedback(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                        const RiccatiSolution<Scalar>& sol) {
  FeedbackLaw<Scalar> f;
  for (int k = 1; k <= sys.hbar(); ++k) {
    f.gains.push_back(detail::feedback_gain(sys.inputs[k - 1], w.R[k - 1], sol.P[k]));
  }
  return f;
}

/// Infinite-horizon optimal control from x0: u_k = F_{nu(k)} x(t_k), first `steps` values.
template <typename Scalar>
ControlSequence<Scalar> optimal_feedback_control(const ImpulseSystem<Scalar>& sys, const FeedbackLaw<Scalar>& f,
                                                 const std::type_identity_t<VectorX<Scalar>>& x0, long steps) {
  const auto traj = simulate_closed_loop(sys, f, x0, (steps + sys.hbar() - 1) / sys.hbar());
  ControlSequence<Scalar> u;
  for (long j = 1; j <= steps; ++j) u.values.push_back(f.at(j) * traj.pre[static_cast<std::size_t>(j - 1)]);
  return u;
}

// ---------------------------------------------------------------------------
// Infinite-horizon costs and admissibility.

/// Sum over j > `after` of <W_j x(t_j), x(t_j)> along the closed loop from
/// the post-impulse state x at instant `after`, where W_j is the periodic
/// state weight. Computed exactly through the periodic Lyapunov recursion;
/// +inf if the closed loop is not stable and x is nonzero.
template <typename Scalar>
Scalar closed_loop_state_tail(const ImpulseSystem<Scalar>& sys, const FeedbackLaw<Scalar>& f,
                              const std::vector<MatrixX<Scalar>>& weights, const std::type_identity_t<VectorX<Scalar>>& x, long after,
                              Scalar tol = Scalar(1e-14)) {
  if (x.squaredNorm() == 0) return 0;
  if (spectral_radius(monodromy(sys, f)) >= 1) return std::numeric_limits<Scalar>::infinity();
  const int h = sys.hbar();
  const Eigen::Index d = sys.state_dim();
  // W_l = sum_{j>l} (closed-loop pre-impulse transition)^T weight (transition).
  std::vector<MatrixX<Scalar>> W(static_cast<std::size_t>(h + 1), MatrixX<Scalar>::Zero(d, d));
  for (int n = 0; n < 1000000; ++n) {
    const MatrixX<Scalar> old = W[0];
    for (int k = h; k >= 1; --k) {
      const MatrixX<Scalar>& E = sys.flows[k - 1];
      const MatrixX<Scalar> cl = MatrixX<Scalar>::Identity(d, d) + sys.inputs[k - 1] * f.gains[k - 1];
      W[k - 1] = symmetrized(E.transpose() * (weights[k - 1] + cl.transpose() * W[k] * cl) * E);
    }
    W[h] = W[0];
    if (operator_norm(W[0] - old) <= tol * std::max(Scalar(1), operator_norm(W[0]))) break;
  }
  return x.dot(W[static_cast<std::size_t>(after % h)] * x);
}

/// Schur-test bound h such that || (x(t_j) driven by controls u_i, i > n) ||_{l2} <= h ||u||_{l2}
/// under the free flow. +inf if the free flow is not stable.
template <typename Scalar>
Scalar impulse_response_gain(const ImpulseSystem<Scalar>& sys) {
  const auto zero = zero_feedback(sys);
  const MatrixX<Scalar> phi = monodromy(sys, zero);
  if (spectral_radius(phi) >= 1) return std::numeric_limits<Scalar>::infinity();
  const int h = sys.hbar();
  // Smallest p with ||Phi_s^p|| <= 1/2 for every starting slot s.
  int p = 1;
  for (; p <= 100000; ++p) {
    bool ok = true;
    for (int s = 0; s < h && ok; ++s) {
      const MatrixX<Scalar> ps = flow_product(sys, s, s + static_cast<long>(p) * h);
      ok = operator_norm(ps) <= Scalar(0.5);
    }
    if (ok) break;
  }
  const long window = static_cast<long>(p) * h;
  Scalar max_col = 0;
  Scalar max_row = 0;
  for (int s = 1; s <= h; ++s) {
    const Scalar bnorm = operator_norm(sys.input_at(s));
    // Column sums: fixed input instant s, later state instants s + k.
    Scalar col_exact = 0;
    Scalar col_tail = 0;
    // Row sums: fixed state instant j = s (mod hbar), earlier input instants j - k.
    Scalar row_exact = 0;
    Scalar row_tail = 0;
    for (long k = 1; k <= window; ++k) {
      const MatrixX<Scalar> fwd = flow_product(sys, s, s + k);
      col_exact += operator_norm((fwd * sys.input_at(s)).eval());
      col_tail += operator_norm(fwd) * bnorm;
      const long j = s + window;  // any instant with slot s, far enough from 0
      const MatrixX<Scalar> back = flow_product(sys, j - k, j);
      row_exact += operator_norm((back * sys.input_at(j - k)).eval());
      row_tail += operator_norm(back) * operator_norm(sys.input_at(j - k));
    }
    // Remaining windows are bounded by ||Phi^p||^r <= 2^{-r}, summing to 1.
    max_col = std::max(max_col, col_exact + col_tail);
    max_row = std::max(max_row, row_exact + row_tail);
  }
  return std::sqrt(max_col * max_row);
}

template <typename Scalar>
struct CostInterval {
  Scalar lower = 0;
  Scalar upper = 0;
  Scalar prefix = 0;
};

/// Cost sum_j <Q_j x(t_j), x(t_j)> + <R_j u_j, u_j>. A finite horizon sums
/// instants 1..horizon; std::nullopt means the infinite sum, bracketed using
/// the control's tail bound.
template <typename Scalar>
CostInterval<Scalar> lq_cost(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w, const std::type_identity_t<VectorX<Scalar>>& x0,
                             const ControlSequence<Scalar>& u, std::optional<long> horizon) {
  detail::check_state(sys, x0);
  const long n = horizon ? *horizon : static_cast<long>(u.size());
  if (horizon && static_cast<std::size_t>(*horizon) > u.size()) throw std::invalid_argument("lq_cost: control shorter than horizon");
  if (!horizon && !u.tail_bound) throw std::invalid_argument("lq_cost: infinite horizon requires a control tail bound");
  CostInterval<Scalar> out;
  VectorX<Scalar> x = x0;
  for (long j = 1; j <= n; ++j) {
    const auto& uj = u.values[static_cast<std::size_t>(j - 1)];
    const VectorX<Scalar> before = sys.flow_at(j) * x;
    out.prefix += before.dot(w.Q_at(j) * before) + uj.dot(w.R_at(j) * uj);
    x = before + sys.input_at(j) * uj;
  }
  out.lower = out.upper = out.prefix;
  if (horizon) return out;

  const Scalar tau = *u.tail_bound;
  const Scalar free_tail = closed_loop_state_tail(sys, zero_feedback(sys), w.Q, x, n);
  if (tau == 0) {
    out.lower += free_tail;
    out.upper += free_tail;
    return out;
  }
  Scalar qmax = 0;
  Scalar rmax = 0;
  for (const auto& q : w.Q) qmax = std::max(qmax, operator_norm(q));
  for (const auto& r : w.R) rmax = std::max(rmax, operator_norm(r));
  const Scalar gain = impulse_response_gain(sys);
  const Scalar driven = std::sqrt(free_tail) + std::sqrt(qmax) * gain * tau;
  out.upper += driven * driven + rmax * tau * tau;
  return out;
}

template <typename Scalar>
struct AdmissibilityReport {
  bool admissible = false;
  bool inconclusive = false;
  std::vector<Scalar> partial_sums;  // sum_{i<=j} ||x(t_i)||^2
  Scalar tail_upper = 0;
};

/// Whether sum_j ||x(t_j)||^2 is finite for the given control. The tail beyond
/// the prefix is either supplied by the caller (`state_tail`, an upper bound on
/// sum_{j>n} ||x(t_j)||^2) or bounded from the free dynamics and u's tail bound.
template <typename Scalar>
AdmissibilityReport<Scalar> is_admissible(const ImpulseSystem<Scalar>& sys, const std::type_identity_t<VectorX<Scalar>>& x0,
                                          const ControlSequence<Scalar>& u, Scalar tol,
                                          std::type_identity_t<std::optional<Scalar>> state_tail = std::nullopt) {
  AdmissibilityReport<Scalar> rep;
  if (!u.tail_bound) {
    rep.inconclusive = true;
    return rep;
  }
  detail::check_state(sys, x0);
  VectorX<Scalar> x = x0;
  Scalar acc = 0;
  for (std::size_t j = 1; j <= u.size(); ++j) {
    const VectorX<Scalar> before = sys.flow_at(static_cast<long>(j)) * x;
    acc += before.squaredNorm();
    rep.partial_sums.push_back(acc);
    x = before + sys.input_at(static_cast<long>(j)) * u.values[j - 1];
  }
  if (state_tail) {
    rep.tail_upper = *state_tail;
  } else {
    const std::vector<MatrixX<Scalar>> unit(static_cast<std::size_t>(sys.hbar()),
                                            MatrixX<Scalar>::Identity(sys.state_dim(), sys.state_dim()));
    const long n = static_cast<long>(u.size());
    const Scalar free_tail = closed_loop_state_tail(sys, zero_feedback(sys), unit, x, n);
    const Scalar tau = *u.tail_bound;
    if (tau == 0 || !std::isfinite(free_tail)) {
      rep.tail_upper = free_tail;
    } else {
      const Scalar driven = std::sqrt(free_tail) + impulse_response_gain(sys) * tau;
      rep.tail_upper = driven * driven;
    }
    if (!std::isfinite(rep.tail_upper)) {
      rep.inconclusive = tau > 0;
      return rep;
    }
  }
  if (!std::isfinite(rep.tail_upper)) {
    rep.inconclusive = true;
    return rep;
  }
  rep.admissible = rep.tail_upper <= tol * (Scalar(1) + acc);
  rep.inconclusive = !rep.admissible;
  return rep;
}

// ---------------------------------------------------------------------------
// Numeric checks of the LQ identities.

template <typename Scalar>
struct SquaresCheck {
  Scalar cost = 0;          // J_n(u) + <P x(t_n^+), x(t_n^+)>
  Scalar value = 0;         // <P_0 x0, x0>
  Scalar squares = 0;       // sum of ||S^{1/2}(u_k + S^{-1} B^T P x(t_k))||^2
  Scalar defect = 0;
};

/// Completion of squares along u over instants 1..horizon, continued by the
/// optimal feedback afterwards (whose cost is <P x(t_n^+), x(t_n^+)>).
template <typename Scalar>
SquaresCheck<Scalar> completion_of_squares_check(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                                 const RiccatiSolution<Scalar>& sol, const std::type_identity_t<VectorX<Scalar>>& x0,
                                                 const ControlSequence<Scalar>& u, long horizon) {
  detail::check_state(sys, x0);
  if (u.size() < static_cast<std::size_t>(horizon)) throw std::invalid_argument("completion_of_squares_check: control too short");
  SquaresCheck<Scalar> out;
  out.value = x0.dot(sol.P[0] * x0);
  VectorX<Scalar> x = x0;
  for (long k = 1; k <= horizon; ++k) {
    const auto& uk = u.values[static_cast<std::size_t>(k - 1)];
    const MatrixX<Scalar>& B = sys.input_at(k);
    const MatrixX<Scalar>& P = sol.at_slot(k);
    const VectorX<Scalar> before = sys.flow_at(k) * x;
    out.cost += before.dot(w.Q_at(k) * before) + uk.dot(w.R_at(k) * uk);
    const MatrixX<Scalar> S = symmetrized(w.R_at(k) + B.transpose() * P * B);
    Eigen::LLT<MatrixX<Scalar>> llt(S);
    const VectorX<Scalar> shift = uk + llt.solve((B.transpose() * (P * before)).eval());
    out.squares += shift.dot(S * shift);
    x = before + B * uk;
  }
  out.cost += x.dot(sol.at_slot(horizon) * x);
  out.defect = std::abs(out.cost - out.value - out.squares);
  return out;
}

template <typename Scalar>
struct DynamicProgrammingCheck {
  Scalar gap = 0;             // |<P^{k}_0 x0, x0> - <P_0 x0, x0>| with terminal weight P_{nu(k)}
  Scalar min_sample_excess = 0;  // min over sampled first-k controls of (cost - <P_0 x0, x0>)
};

/// V(x0; 0) = min over the first k controls of stage costs + V(x(t_k^+); k).
template <typename Scalar, typename Rng>
DynamicProgrammingCheck<Scalar> dynamic_programming_check(const ImpulseSystem<Scalar>& sys, const CostWeights<Scalar>& w,
                                                          const RiccatiSolution<Scalar>& sol, const std::type_identity_t<VectorX<Scalar>>& x0,
                                                          long k, int samples, Rng& rng) {
  if (k < 1) throw std::invalid_argument("dynamic_programming_check: k must be >= 1");
  const MatrixX<Scalar>& terminal = sol.at_slot(k);
  const auto Ps = finite_horizon_riccati(sys, w, terminal, k);
  const Scalar value = x0.dot(sol.P[0] * x0);
  DynamicProgrammingCheck<Scalar> out;
  out.gap = std::abs(x0.dot(Ps[0] * x0) - value);

  const auto opt = finite_horizon_optimal_control(sys, w, Ps, x0, 0, k);
  out.min_sample_excess = finite_horizon_cost(sys, w, terminal, x0, 0, k, opt) - value;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Scalar scale = std::max(Scalar(1e-3), x0.norm());
  for (int s = 0; s < samples; ++s) {
    ControlSequence<Scalar> trial = opt;
    for (auto& v : trial.values) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += scale * Scalar(gauss(rng));
    }
    out.min_sample_excess = std::min(out.min_sample_excess, finite_horizon_cost(sys, w, terminal, x0, 0, k, trial) - value);
  }
  return out;
}

}  // namespace impstab
