#pragma once

// Impulse-controlled linear systems on a periodic schedule of instants.
//
// Between consecutive instants the state evolves by the flow map of the
// slot, x(t_j) = E_{nu(j)} x(t_{j-1}^+), and at each instant an impulse is
// added, x(t_j^+) = x(t_j) + B_{nu(j)} u_j. The generator itself is never
// stored; only the hbar flow maps are.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "impstab/linalg.hpp"

namespace impstab {

/// Slot index nu(j) in {1..hbar} of the j-th instant (j >= 1).
inline int nu(long j, int hbar) {
  if (j < 1 || hbar < 1) throw std::invalid_argument("nu: requires j >= 1 and hbar >= 1");
  return static_cast<int>((j - 1) % hbar) + 1;
}

template <typename Scalar>
struct PeriodicSchedule {
  /// t_1 < ... < t_hbar, with t_0 = 0 implicit.
  std::vector<Scalar> times;

  int hbar() const { return static_cast<int>(times.size()); }
  Scalar period() const { return times.back(); }

  void validate() const {
    if (times.empty()) throw std::invalid_argument("schedule: at least one instant required");
    Scalar prev = Scalar(0);
    for (const Scalar t : times) {
      if (!(t > prev)) {
        throw std::invalid_argument("schedule: instants must satisfy 0 < t_1 < ... < t_hbar");
      }
      prev = t;
    }
  }

  /// Length of the k-th interval (t_k - t_{k-1}), k in {1..hbar}.
  Scalar gap(int k) const { return times[k - 1] - (k == 1 ? Scalar(0) : times[k - 2]); }
};

template <typename Scalar>
PeriodicSchedule<Scalar> make_schedule(std::vector<Scalar> times) {
  PeriodicSchedule<Scalar> s{std::move(times)};
  s.validate();
  return s;
}

/// Periodic extension t_{j + k hbar} = t_j + k t_hbar; t_0 = 0.
template <typename Scalar>
Scalar extend_schedule(const PeriodicSchedule<Scalar>& sched, long j) {
  if (j < 0) throw std::invalid_argument("extend_schedule: j must be >= 0");
  if (j == 0) return Scalar(0);
  const long h = sched.hbar();
  const long k = (j - 1) / h;
  return sched.times[static_cast<std::size_t>((j - 1) % h)] + Scalar(k) * sched.period();
}

template <typename Scalar>
struct ImpulseSystem {
  PeriodicSchedule<Scalar> schedule;
  std::vector<MatrixX<Scalar>> flows;   // E_1..E_hbar
  std::vector<MatrixX<Scalar>> inputs;  // B_1..B_hbar

  int hbar() const { return schedule.hbar(); }
  Eigen::Index state_dim() const { return flows.empty() ? 0 : flows.front().rows(); }
  Eigen::Index input_dim() const { return inputs.empty() ? 0 : inputs.front().cols(); }

  /// Flow and input acting at instant j >= 1.
  const MatrixX<Scalar>& flow_at(long j) const { return flows[nu(j, hbar()) - 1]; }
  const MatrixX<Scalar>& input_at(long j) const { return inputs[nu(j, hbar()) - 1]; }

  void validate() const {
    schedule.validate();
    const auto h = static_cast<std::size_t>(hbar());
    if (flows.size() != h || inputs.size() != h) {
      throw std::invalid_argument("system: need exactly hbar flows and hbar input matrices");
    }
    const Eigen::Index d = state_dim();
    const Eigen::Index m = input_dim();
    if (d < 1 || m < 1) throw std::invalid_argument("system: dimensions must be positive");
    for (std::size_t k = 0; k < h; ++k) {
      if (flows[k].rows() != d || flows[k].cols() != d) {
        throw std::invalid_argument("system: flow " + std::to_string(k + 1) + " is not d x d");
      }
      if (inputs[k].rows() != d || inputs[k].cols() != m) {
        throw std::invalid_argument("system: input " + std::to_string(k + 1) + " is not d x m");
      }
    }
  }
};

/// Finite prefix of an l2 control plus an l2 bound on the untruncated tail.
/// An empty tail bound means the tail is unknown.
template <typename Scalar>
struct ControlSequence {
  std::vector<VectorX<Scalar>> values;  // u_1, u_2, ...
  std::optional<Scalar> tail_bound = Scalar(0);

  std::size_t size() const { return values.size(); }

  Scalar prefix_norm() const {
    Scalar s = 0;
    for (const auto& u : values) s += u.squaredNorm();
    return std::sqrt(s);
  }

  /// Upper bound on the l2 norm; +inf when the tail is unknown.
  Scalar l2_norm() const {
    if (!tail_bound) return std::numeric_limits<Scalar>::infinity();
    return prefix_norm() + *tail_bound;
  }
};

template <typename Scalar>
ControlSequence<Scalar> zero_control(Eigen::Index input_dim, std::size_t steps) {
  ControlSequence<Scalar> u;
  u.values.assign(steps, VectorX<Scalar>::Zero(input_dim));
  return u;
}

template <typename Scalar>
struct FeedbackLaw {
  std::vector<MatrixX<Scalar>> gains;  // F_1..F_hbar, each m x d

  const MatrixX<Scalar>& at(long j) const {
    return gains[nu(j, static_cast<int>(gains.size())) - 1];
  }
};

template <typename Scalar>
FeedbackLaw<Scalar> zero_feedback(const ImpulseSystem<Scalar>& sys) {
  FeedbackLaw<Scalar> f;
  f.gains.assign(sys.hbar(), MatrixX<Scalar>::Zero(sys.input_dim(), sys.state_dim()));
  return f;
}

/// States sampled at the instants: pre[j-1] = x(t_j), post[j-1] = x(t_j^+).
template <typename Scalar>
struct Trajectory {
  VectorX<Scalar> x0;
  std::vector<Scalar> times;
  std::vector<VectorX<Scalar>> pre;
  std::vector<VectorX<Scalar>> post;
  std::vector<Scalar> norms_pre;
  std::vector<Scalar> norms_post;

  std::size_t size() const { return pre.size(); }

  void push(Scalar t, VectorX<Scalar> before, VectorX<Scalar> after) {
    times.push_back(t);
    norms_pre.push_back(before.norm());
    norms_post.push_back(after.norm());
    pre.push_back(std::move(before));
    post.push_back(std::move(after));
  }
};

namespace detail {

template <typename Scalar>
void check_state(const ImpulseSystem<Scalar>& sys, const std::type_identity_t<VectorX<Scalar>>& x0) {
  sys.validate();
  if (x0.size() != sys.state_dim()) throw std::invalid_argument("initial state has wrong dimension");
}

template <typename Scalar>
void check_feedback(const ImpulseSystem<Scalar>& sys, const FeedbackLaw<Scalar>& f) {
  if (f.gains.size() != static_cast<std::size_t>(sys.hbar())) {
    throw std::invalid_argument("feedback law must have hbar gains");
  }
  for (const auto& g : f.gains) {
    if (g.rows() != sys.input_dim() || g.cols() != sys.state_dim()) {
      throw std::invalid_argument("feedback gain must be m x d");
    }
  }
}

}  // namespace detail

template <typename Scalar>
Trajectory<Scalar> simulate_open_loop(const ImpulseSystem<Scalar>& sys, const std::type_identity_t<VectorX<Scalar>>& x0,
                                      const ControlSequence<Scalar>& u, long steps) {
  detail::check_state(sys, x0);
  if (steps < 1) throw std::invalid_argument("simulate_open_loop: steps must be positive");
  if (static_cast<std::size_t>(steps) > u.size()) {
    throw std::invalid_argument("simulate_open_loop: control sequence shorter than requested steps");
  }
  Trajectory<Scalar> traj;
  traj.x0 = x0;
  VectorX<Scalar> x = x0;
  for (long j = 1; j <= steps; ++j) {
    const auto& uj = u.values[static_cast<std::size_t>(j - 1)];
    if (uj.size() != sys.input_dim()) throw std::invalid_argument("control value has wrong dimension");
    VectorX<Scalar> before = sys.flow_at(j) * x;
    VectorX<Scalar> after = before + sys.input_at(j) * uj;
    x = after;
    traj.push(extend_schedule(sys.schedule, j), std::move(before), std::move(after));
  }
  return traj;
}

/// Feedback is evaluated at the pre-impulse state x(t_j).
template <typename Scalar>
Trajectory<Scalar> simulate_closed_loop(const ImpulseSystem<Scalar>& sys, const FeedbackLaw<Scalar>& f,
                                        const std::type_identity_t<VectorX<Scalar>>& x0, long periods) {
  detail::check_state(sys, x0);
  detail::check_feedback(sys, f);
  if (periods < 1) throw std::invalid_argument("simulate_closed_loop: periods must be positive");
  Trajectory<Scalar> traj;
  traj.x0 = x0;
  VectorX<Scalar> x = x0;
  const long steps = periods * sys.hbar();
  for (long j = 1; j <= steps; ++j) {
    VectorX<Scalar> before = sys.flow_at(j) * x;
    VectorX<Scalar> after = before + sys.input_at(j) * (f.at(j) * before);
    x = after;
    traj.push(extend_schedule(sys.schedule, j), std::move(before), std::move(after));
  }
  return traj;
}

/// One-period closed-loop map (I + B_h F_h) E_h ... (I + B_1 F_1) E_1.
template <typename Scalar>
MatrixX<Scalar> monodromy(const ImpulseSystem<Scalar>& sys, const FeedbackLaw<Scalar>& f) {
  sys.validate();
  detail::check_feedback(sys, f);
  const Eigen::Index d = sys.state_dim();
  MatrixX<Scalar> phi = MatrixX<Scalar>::Identity(d, d);
  for (int k = 0; k < sys.hbar(); ++k) {
    MatrixX<Scalar> step = sys.flows[k] + sys.inputs[k] * (f.gains[k] * sys.flows[k]);
    phi = (step * phi).eval();
  }
  return phi;
}

/// Flow product E_{nu(to)} ... E_{nu(from+1)}; identity when to == from.
template <typename Scalar>
MatrixX<Scalar> flow_product(const ImpulseSystem<Scalar>& sys, long from, long to) {
  const Eigen::Index d = sys.state_dim();
  MatrixX<Scalar> p = MatrixX<Scalar>::Identity(d, d);
  for (long j = from + 1; j <= to; ++j) p = (sys.flow_at(j) * p).eval();
  return p;
}

template <typename Derived>
typename Derived::Scalar spectral_radius(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw std::invalid_argument("spectral_radius: matrix must be square");
  const Eigen::Index d = m.rows();
  if (d == 0) return Scalar(0);
  MatrixX<Scalar> a = m;
  if (d <= 400) {
    Eigen::EigenSolver<MatrixX<Scalar>> es(a, false);
    if (es.info() == Eigen::Success) return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  // Gelfand's formula through repeated squaring in the Frobenius norm,
  // rescaling to avoid overflow.
  Scalar log_scale = 0;
  Scalar estimate = a.norm();
  for (int i = 1; i <= 40; ++i) {
    const Scalar n = a.norm();
    if (n == 0) return Scalar(0);
    a /= n;
    log_scale = Scalar(2) * (log_scale + std::log(n));
    a = (a * a).eval();
    const Scalar an = a.norm();
    if (an == 0) return Scalar(0);
    estimate = std::exp((log_scale + std::log(an)) / std::ldexp(Scalar(1), i));
  }
  return estimate;
}

template <typename Scalar>
struct DecayFit {
  Scalar C;
  Scalar mu;
  bool stable() const { return mu > 0; }
};

/// Least-squares fit of log ||x(t_j^+)|| = log(C ||x0||) - mu t_j.
template <typename Scalar>
DecayFit<Scalar> decay_rate_fit(const Trajectory<Scalar>& traj) {
  if (traj.size() < 3) throw std::invalid_argument("decay_rate_fit: need at least 3 samples");
  const Scalar x0n = traj.x0.norm();
  if (x0n == 0) return {Scalar(0), std::numeric_limits<Scalar>::infinity()};
  std::vector<Scalar> ts;
  std::vector<Scalar> ys;
  for (std::size_t j = 0; j < traj.size(); ++j) {
    if (traj.norms_post[j] == 0) break;
    ts.push_back(traj.times[j]);
    ys.push_back(std::log(traj.norms_post[j]));
  }
  if (ts.size() < 2) return {Scalar(0), std::numeric_limits<Scalar>::infinity()};
  const Scalar n = static_cast<Scalar>(ts.size());
  const Scalar tm = std::accumulate(ts.begin(), ts.end(), Scalar(0)) / n;
  const Scalar ym = std::accumulate(ys.begin(), ys.end(), Scalar(0)) / n;
  Scalar sxy = 0;
  Scalar sxx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxy += (ts[i] - tm) * (ys[i] - ym);
    sxx += (ts[i] - tm) * (ts[i] - tm);
  }
  const Scalar slope = sxy / sxx;
  const Scalar intercept = ym - slope * tm;
  return {std::exp(intercept) / x0n, -slope};
}

}  // namespace impstab
