#pragma once

// Spectral truncations of the coupled heat system
//   x_t - Laplacian x - S x = 0 on (0, pi), Dirichlet, impulses chi_{omega_k} D_k u
// and the rank tests, schedule classes and stabilizability verdicts for it.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "impstab/core.hpp"
#include "impstab/linalg.hpp"
#include "impstab/riccati.hpp"

namespace impstab {

template <typename Scalar>
struct HeatConfig {
  int n = 1;
  int m = 1;
  MatrixX<Scalar> S;
  std::vector<MatrixX<Scalar>> D;                  // one n x m matrix per slot
  std::vector<std::pair<Scalar, Scalar>> omegas;  // one (a, b) per slot
  int N = 1;
  int control_modes = 0;  // sine modes in the control expansion; 0 means N

  int hbar() const { return static_cast<int>(D.size()); }
  int control_dim() const { return control_modes > 0 ? control_modes : N; }

  void validate() const {
    if (n < 1 || m < 1 || N < 1 || control_modes < 0) throw std::invalid_argument("HeatConfig: n, m, N must be positive");
    if (S.rows() != n || S.cols() != n) throw std::invalid_argument("HeatConfig: S must be n x n");
    if (D.empty() || D.size() != omegas.size()) {
      throw std::invalid_argument("HeatConfig: need one D_k and one omega_k per slot");
    }
    for (const auto& Dk : D) {
      if (Dk.rows() != n || Dk.cols() != m) throw std::invalid_argument("HeatConfig: D_k must be n x m");
    }
    const Scalar pi = std::numbers::pi_v<Scalar>;
    for (const auto& [a, b] : omegas) {
      if (!(a >= 0 && a < b && b <= pi)) throw std::invalid_argument("HeatConfig: omega_k must satisfy 0 <= a < b <= pi");
    }
  }

  /// The standing assumption that all control regions overlap.
  bool common_region_nonempty() const {
    Scalar lo = 0;
    Scalar hi = std::numbers::pi_v<Scalar>;
    for (const auto& [a, b] : omegas) {
      lo = std::max(lo, a);
      hi = std::min(hi, b);
    }
    return lo < hi;
  }

  /// D = (D_1, ..., D_hbar), n x (m hbar).
  MatrixX<Scalar> Dcat() const {
    MatrixX<Scalar> out(n, m * hbar());
    for (int k = 0; k < hbar(); ++k) out.middleCols(k * m, m) = D[static_cast<std::size_t>(k)];
    return out;
  }
};

/// Gamma_{ij} = integral over (a, b) of e_i e_j, e_i = sqrt(2/pi) sin(i x).
template <typename Scalar>
MatrixX<Scalar> gamma_matrix(Scalar a, Scalar b, int N) {
  const Scalar pi = std::numbers::pi_v<Scalar>;
  if (!(a >= 0 && a < b && b <= pi)) throw std::invalid_argument("gamma_matrix: need 0 <= a < b <= pi");
  if (N < 1) throw std::invalid_argument("gamma_matrix: N must be positive");
  const auto antiderivative = [](int i, int j, Scalar x) {
    if (i == j) return Scalar(0.5) * (x - std::sin(Scalar(2 * i) * x) / Scalar(2 * i));
    return Scalar(0.5) * (std::sin(Scalar(i - j) * x) / Scalar(i - j) - std::sin(Scalar(i + j) * x) / Scalar(i + j));
  };
  MatrixX<Scalar> g(N, N);
  for (int i = 1; i <= N; ++i) {
    for (int j = i; j <= N; ++j) {
      const Scalar v = Scalar(2) / pi * (antiderivative(i, j, b) - antiderivative(i, j, a));
      g(i - 1, j - 1) = v;
      g(j - 1, i - 1) = v;
    }
  }
  return g;
}

/// State index of component c (0-based) in mode i (1-based).
inline Eigen::Index heat_index(int i, int c, int n) { return static_cast<Eigen::Index>(i - 1) * n + c; }

template <typename Scalar>
ImpulseSystem<Scalar> build_heat_system(const HeatConfig<Scalar>& cfg, const PeriodicSchedule<Scalar>& sched) {
  cfg.validate();
  sched.validate();
  if (sched.hbar() != cfg.hbar()) throw std::invalid_argument("build_heat_system: schedule and config disagree on hbar");
  const int n = cfg.n;
  const int m = cfg.m;
  const int N = cfg.N;
  const int Nc = cfg.control_dim();
  const Eigen::Index d = static_cast<Eigen::Index>(n) * N;
  ImpulseSystem<Scalar> sys;
  sys.schedule = sched;
  for (int k = 1; k <= cfg.hbar(); ++k) {
    const Scalar dt = sched.gap(k);
    MatrixX<Scalar> E = MatrixX<Scalar>::Zero(d, d);
    for (int i = 1; i <= N; ++i) {
      const MatrixX<Scalar> gen = (cfg.S - Scalar(i) * Scalar(i) * MatrixX<Scalar>::Identity(n, n)) * dt;
      E.block(heat_index(i, 0, n), heat_index(i, 0, n), n, n) = gen.exp();
    }
    const auto& [a, b] = cfg.omegas[static_cast<std::size_t>(k - 1)];
    const MatrixX<Scalar> gamma = gamma_matrix(a, b, std::max(N, Nc));
    const MatrixX<Scalar>& Dk = cfg.D[static_cast<std::size_t>(k - 1)];
    MatrixX<Scalar> B(d, static_cast<Eigen::Index>(m) * Nc);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < Nc; ++j) B.block(i * n, j * m, n, m) = gamma(i, j) * Dk;
    }
    sys.flows.push_back(std::move(E));
    sys.inputs.push_back(std::move(B));
  }
  return sys;
}

template <typename Scalar>
MatrixX<Scalar> kalman_matrix(const MatrixX<Scalar>& S, const MatrixX<Scalar>& F) {
  if (S.rows() != S.cols() || F.rows() != S.rows()) throw std::invalid_argument("kalman_matrix: shape mismatch");
  const Eigen::Index n = S.rows();
  MatrixX<Scalar> K(n, n * F.cols());
  MatrixX<Scalar> block = F;
  for (Eigen::Index p = 0; p < n; ++p) {
    K.middleCols(p * F.cols(), F.cols()) = block;
    block = (S * block).eval();
  }
  return K;
}

template <typename Scalar>
int kalman_rank(const MatrixX<Scalar>& S, const MatrixX<Scalar>& Dcat, Scalar rel = Scalar(1e-10)) {
  return numerical_rank(kalman_matrix(S, Dcat), rel);
}

template <typename Scalar>
struct HautusResult {
  bool stabilizable = true;
  std::optional<std::complex<Scalar>> witness;
  std::vector<std::complex<Scalar>> checked;  // eigenvalues with Re >= lambda1
};

/// rank(lambda I - S, D) = n for every eigenvalue lambda of S with Re >= lambda1.
template <typename Scalar>
HautusResult<Scalar> hautus_verdict(const MatrixX<Scalar>& S, const MatrixX<Scalar>& Dcat, Scalar lambda1,
                                    Scalar rel = Scalar(1e-10)) {
  if (S.rows() != S.cols() || Dcat.rows() != S.rows()) throw std::invalid_argument("hautus_verdict: shape mismatch");
  using Complex = std::complex<Scalar>;
  using CMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = S.rows();
  HautusResult<Scalar> out;
  Eigen::EigenSolver<MatrixX<Scalar>> es(S, false);
  const Scalar slack = Scalar(1e-12) * std::max(Scalar(1), operator_norm(S));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex lam = es.eigenvalues()(i);
    if (lam.real() < lambda1 - slack) continue;
    out.checked.push_back(lam);
    CMatrix M(n, n + Dcat.cols());
    M.leftCols(n) = lam * CMatrix::Identity(n, n) - S.template cast<Complex>();
    M.rightCols(Dcat.cols()) = Dcat.template cast<Complex>();
    if (numerical_rank(M, rel) < n && out.stabilizable) {
      out.stabilizable = false;
      out.witness = lam;
    }
  }
  return out;
}

template <typename Scalar>
struct DecompositionResult {
  MatrixX<Scalar> J;  // orthogonal, so J^{-1} = J^T
  MatrixX<Scalar> S1, S2, S3, Dtilde;
  int n1 = 0;
  bool fully_controllable = false;
};

template <typename Scalar>
DecompositionResult<Scalar> kalman_decomposition(const MatrixX<Scalar>& S, const MatrixX<Scalar>& Dcat,
                                                 Scalar rel = Scalar(1e-10)) {
  const MatrixX<Scalar> K = kalman_matrix(S, Dcat);
  const Eigen::Index n = S.rows();
  DecompositionResult<Scalar> out;
  out.n1 = numerical_rank(K, rel);
  if (out.n1 == n) {
    out.fully_controllable = true;
    out.J = MatrixX<Scalar>::Identity(n, n);
  } else {
    Eigen::JacobiSVD<MatrixX<Scalar>> svd(K, Eigen::ComputeFullU);
    out.J = svd.matrixU();
    for (Eigen::Index c = 0; c < n; ++c) {
      Eigen::Index r = 0;
      out.J.col(c).cwiseAbs().maxCoeff(&r);
      if (out.J(r, c) < 0) out.J.col(c) *= -1;
    }
  }
  const MatrixX<Scalar> St = out.J.transpose() * S * out.J;
  const Eigen::Index n1 = out.n1;
  const Eigen::Index n2 = n - n1;
  out.S1 = St.topLeftCorner(n1, n1);
  out.S2 = St.topRightCorner(n1, n2);
  out.S3 = St.bottomRightCorner(n2, n2);
  out.Dtilde = (out.J.transpose() * Dcat).topRows(n1);
  return out;
}

/// min pi / |Im lambda| over non-real eigenvalues; +infinity for a real spectrum.
template <typename Scalar>
Scalar d_E(const MatrixX<Scalar>& E) {
  if (E.rows() != E.cols()) throw std::invalid_argument("d_E: matrix must be square");
  Scalar out = std::numeric_limits<Scalar>::infinity();
  if (E.rows() == 0) return out;
  Eigen::EigenSolver<MatrixX<Scalar>> es(E, false);
  const Scalar cut = Scalar(1e-12) * std::max(Scalar(1), operator_norm(E));
  for (Eigen::Index i = 0; i < E.rows(); ++i) {
    const Scalar im = std::abs(es.eigenvalues()(i).imag());
    if (im > cut) out = std::min(out, std::numbers::pi_v<Scalar> / im);
  }
  return out;
}

/// Largest Krylov dimension over the columns of F. Zero when F = 0.
template <typename Scalar>
int q_EF(const MatrixX<Scalar>& E, const MatrixX<Scalar>& F, Scalar rel = Scalar(1e-10)) {
  if (E.rows() != E.cols() || F.rows() != E.rows()) throw std::invalid_argument("q_EF: shape mismatch");
  int q = 0;
  for (Eigen::Index c = 0; c < F.cols(); ++c) q = std::max(q, numerical_rank(kalman_matrix<Scalar>(E, F.col(c)), rel));
  return q;
}

template <typename Scalar>
struct ScheduleClassReport {
  Scalar d_E = 0;
  int q_EF = 0;
  bool admissible = false;
  std::optional<long> min_window_count;  // empty when d_E is infinite
  long required = 0;
  Scalar worst_s = 0;
};

/// Number of extended instants inside the open window (s, s + d).
template <typename Scalar>
long window_count(const PeriodicSchedule<Scalar>& sched, Scalar s, Scalar d) {
  long count = 0;
  for (long j = 1;; ++j) {
    const Scalar t = extend_schedule(sched, j);
    if (t >= s + d) break;
    if (t > s) ++count;
  }
  return count;
}

/// The open-window count c(s) only drops when s passes an instant, so its
/// infimum over s >= 0 is attained at s = 0 or at an instant; by periodicity
/// instants up to t_hbar + d already cover every residue class.
template <typename Scalar>
ScheduleClassReport<Scalar> schedule_in_class(const PeriodicSchedule<Scalar>& sched, const MatrixX<Scalar>& S,
                                              const MatrixX<Scalar>& Dcat, int hbar, Scalar rel = Scalar(1e-10)) {
  sched.validate();
  if (sched.hbar() != hbar) throw std::invalid_argument("schedule_in_class: schedule hbar mismatch");
  ScheduleClassReport<Scalar> out;
  out.d_E = d_E(S);
  out.q_EF = q_EF(S, Dcat, rel);
  out.required = static_cast<long>(hbar) * out.q_EF + 2;
  if (std::isinf(out.d_E)) {
    out.admissible = true;
    return out;
  }
  const Scalar d = out.d_E;
  long best = window_count(sched, Scalar(0), d);
  Scalar worst = 0;
  for (long j = 1;; ++j) {
    const Scalar s = extend_schedule(sched, j);
    if (s > sched.period() + d) break;
    const long c = window_count(sched, s, d);
    if (c < best) {
      best = c;
      worst = s;
    }
  }
  out.min_window_count = best;
  out.worst_s = worst;
  out.admissible = best >= out.required;
  return out;
}

template <typename Scalar>
struct SpanEqualityReport {
  bool equal = false;
  bool precondition_ok = true;  // tau_q - tau_1 < d_E
  int rank_taus = 0;
  int rank_kalman = 0;
  int rank_joint = 0;
};

namespace detail {
template <typename Scalar>
MatrixX<Scalar> unit_columns(MatrixX<Scalar> m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const Scalar nrm = m.col(c).norm();
    if (nrm > 0) m.col(c) /= nrm;
  }
  return m;
}
}  // namespace detail

/// span{e^{-E tau_1} F, ..., e^{-E tau_q} F} against span{F, EF, ..., E^{k-1} F}.
template <typename Scalar>
SpanEqualityReport<Scalar> span_equality_check(const MatrixX<Scalar>& E, const MatrixX<Scalar>& F,
                                               const std::vector<Scalar>& taus, Scalar rel = Scalar(1e-10)) {
  for (std::size_t i = 1; i < taus.size(); ++i) {
    if (!(taus[i] > taus[i - 1])) throw std::invalid_argument("span_equality_check: taus must be strictly increasing");
  }
  const Eigen::Index k = E.rows();
  SpanEqualityReport<Scalar> out;
  if (!taus.empty()) out.precondition_ok = taus.back() - taus.front() < d_E(E);
  MatrixX<Scalar> W(k, F.cols() * static_cast<Eigen::Index>(taus.size()));
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const MatrixX<Scalar> gen = -E * taus[i];
    W.middleCols(static_cast<Eigen::Index>(i) * F.cols(), F.cols()) = gen.exp() * F;
  }
  const MatrixX<Scalar> K = kalman_matrix(E, F);
  const MatrixX<Scalar> Wn = detail::unit_columns(W);
  const MatrixX<Scalar> Kn = detail::unit_columns(K);
  MatrixX<Scalar> joint(k, Wn.cols() + Kn.cols());
  joint << Wn, Kn;
  out.rank_taus = numerical_rank(Wn, rel);
  out.rank_kalman = numerical_rank(Kn, rel);
  out.rank_joint = numerical_rank(joint, rel);
  out.equal = out.rank_taus == out.rank_kalman && out.rank_kalman == out.rank_joint;
  return out;
}

/// Uniform schedule t_j = j h with one spare instant per window.
template <typename Scalar>
PeriodicSchedule<Scalar> generate_admissible_schedule(const MatrixX<Scalar>& S, const MatrixX<Scalar>& Dcat, int hbar,
                                                      Scalar period_hint, Scalar rel = Scalar(1e-10)) {
  if (hbar < 1) throw std::invalid_argument("generate_admissible_schedule: hbar must be >= 1");
  if (!(period_hint > 0)) throw std::invalid_argument("generate_admissible_schedule: period_hint must be positive");
  const Scalar d = d_E(S);
  const int q = q_EF(S, Dcat, rel);
  const Scalar h = std::isinf(d) ? period_hint / Scalar(hbar) : Scalar(0.99) * d / Scalar(hbar * q + 3);
  std::vector<Scalar> times;
  for (int j = 1; j <= hbar; ++j) times.push_back(Scalar(j) * h);
  auto sched = make_schedule(std::move(times));
  if (!schedule_in_class(sched, S, Dcat, hbar, rel).admissible) {
    throw std::runtime_error("generate_admissible_schedule: generated schedule failed the class check");
  }
  return sched;
}

template <typename Scalar>
struct CrossCheckReport {
  HautusResult<Scalar> hautus;
  RiccatiStatus riccati_status = RiccatiStatus::kNotStabilizable;
  std::optional<Scalar> rho;
  std::optional<DecayFit<Scalar>> decay;
  // Not-stabilizable branch: growth of the uncontrollable part of mode 1.
  std::optional<Scalar> expected_growth;
  std::optional<Scalar> growth_zero_feedback;
  std::optional<Scalar> growth_random_feedback;
  bool agree = false;
  std::string message;
};

template <typename Scalar>
struct CrossCheckOptions {
  RiccatiOptions<Scalar> riccati;
  Scalar horizon_time = 10;
  Scalar rank_threshold = Scalar(1e-10);
  std::uint64_t seed = 1;
};

template <typename Scalar>
CrossCheckReport<Scalar> verdict_cross_check(const HeatConfig<Scalar>& cfg, const PeriodicSchedule<Scalar>& sched,
                                             const CostWeights<Scalar>& weights, const CrossCheckOptions<Scalar>& opt = {}) {
  const Scalar lambda1 = 1;
  const MatrixX<Scalar> Dcat = cfg.Dcat();
  const auto sys = build_heat_system(cfg, sched);
  CrossCheckReport<Scalar> rep;
  rep.hautus = hautus_verdict(cfg.S, Dcat, lambda1, opt.rank_threshold);
  const auto ric = periodic_riccati_solve(sys, weights, opt.riccati);
  rep.riccati_status = ric.status;
  const long steps_in_horizon = [&] {
    long j = 0;
    while (extend_schedule(sched, j + 1) <= opt.horizon_time) ++j;
    return std::max(j, 1L);
  }();

  if (ric.converged()) {
    const auto F = synthesize_feedback(sys, weights, *ric.solution);
    rep.rho = spectral_radius(monodromy(sys, F));
    const long periods = std::max<long>(30, (steps_in_horizon + sys.hbar() - 1) / sys.hbar());
    const VectorX<Scalar> x0 = VectorX<Scalar>::Ones(sys.state_dim()).normalized();
    rep.decay = decay_rate_fit(simulate_closed_loop(sys, F, x0, periods));
  }

  if (rep.hautus.stabilizable) {
    rep.agree = ric.converged() && rep.rho && *rep.rho < 1;
    rep.message = rep.agree ? "stabilizable: Riccati converged with stable monodromy"
                            : "disagreement: Hautus test passes but the Riccati iteration did not stabilize";
    return rep;
  }

  // Uncontrollable unstable direction x0 = J (0, xi)^T in mode 1.
  const auto dec = kalman_decomposition(cfg.S, Dcat, opt.rank_threshold);
  const Eigen::Index n = cfg.n;
  const Eigen::Index n2 = n - dec.n1;
  Eigen::EigenSolver<MatrixX<Scalar>> es(dec.S3);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < n2; ++i) {
    if (es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
  }
  const Scalar re_lambda0 = es.eigenvalues()(best).real();
  VectorX<Scalar> xi = es.eigenvectors().col(best).real();
  if (xi.norm() == 0) xi = es.eigenvectors().col(best).imag();
  xi.normalize();
  VectorX<Scalar> z = VectorX<Scalar>::Zero(n);
  z.tail(n2) = xi;
  VectorX<Scalar> x0 = VectorX<Scalar>::Zero(sys.state_dim());
  x0.head(n) = dec.J * z;
  rep.expected_growth = re_lambda0 - lambda1;

  const auto lower_growth = [&](const FeedbackLaw<Scalar>& F) {
    const long periods = (steps_in_horizon + sys.hbar() - 1) / sys.hbar();
    const auto traj = simulate_closed_loop(sys, F, x0, periods);
    const std::size_t last = static_cast<std::size_t>(steps_in_horizon - 1);
    const VectorX<Scalar> mode1 = traj.pre[last].head(n);
    const Scalar lower = (dec.J.transpose() * mode1).tail(n2).norm();
    return std::log(lower) / extend_schedule(sched, steps_in_horizon);
  };
  rep.growth_zero_feedback = lower_growth(zero_feedback(sys));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeedbackLaw<Scalar> random_F;
  for (int k = 0; k < sys.hbar(); ++k) {
    MatrixX<Scalar> Fk(sys.input_dim(), sys.state_dim());
    for (Eigen::Index i = 0; i < Fk.size(); ++i) Fk.data()[i] = Scalar(gauss(rng));
    random_F.gains.push_back(Fk / std::max(Scalar(1), operator_norm(Fk)));
  }
  rep.growth_random_feedback = lower_growth(random_F);
  const Scalar tol = Scalar(1e-9);
  rep.agree = !ric.converged() && *rep.growth_zero_feedback >= -tol && *rep.growth_random_feedback >= -tol;
  rep.message = rep.agree ? "not stabilizable: uncontrollable mode unaffected by feedback"
                          : "disagreement: Hautus test fails but the truncation appears stabilizable";
  return rep;
}

}  // namespace impstab
