// Acceptance run: one line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>

#include "impstab/battery.hpp"
#include "impstab/heat.hpp"
#include "impstab/observability.hpp"
#include "impstab/riccati.hpp"
#include "test_support.hpp"

using namespace impstab;
using impstab::testing::gaussian;
using impstab::testing::gaussian_vector;
using impstab::testing::random_system;
using impstab::testing::scalar_system;
using impstab::testing::stacked_lq_minimum;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %-34s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

ControlSequence<double> random_control(std::mt19937_64& rng, Eigen::Index m, long n) {
  ControlSequence<double> u;
  for (long j = 0; j < n; ++j) u.values.push_back(gaussian(m, 1, rng).col(0));
  return u;
}

void golden_ratio() {
  const auto t0 = Clock::now();
  const auto sys = scalar_system(1.0, 1.0);
  const auto w = identity_weights(sys);
  const auto r = periodic_riccati_solve(sys, w);
  const double secs = seconds_since(t0);
  if (!r.converged()) return report(1, "golden-ratio fixed point", false, r.message);
  const auto f = synthesize_feedback(sys, w, *r.solution);
  const double P = r.solution->P[0](0, 0);
  const double F = f.gains[0](0, 0);
  const double rho = spectral_radius(monodromy(sys, f));
  const double phi = (1 + std::sqrt(5.0)) / 2;
  const bool ok = std::abs(P - phi) < 1e-9 && std::abs(F + 0.6180339887) < 1e-9 &&
                  std::abs(rho - 0.3819660113) < 1e-9 && secs < 0.1;
  report(1, "golden-ratio fixed point", ok, fmt("P=%.12f F=%.10f rho=%.10f t=%.4fs", P, F, rho, secs));
}

void unstable_scalar() {
  const auto sys = scalar_system(2.0, 1.0);
  const auto w = identity_weights(sys);
  const auto r = periodic_riccati_solve(sys, w);
  if (!r.converged()) return report(2, "unstable scalar", false, r.message);
  const double P = r.solution->P[0](0, 0);
  const double rho = spectral_radius(monodromy(sys, synthesize_feedback(sys, w, *r.solution)));
  const double P_exact = (7 + std::sqrt(65.0)) / 2;
  // Closed-loop factor of the scalar loop: 2 - P*2/(1+P) = 2/(1+P).
  const double rho_exact = 2 / (1 + P_exact);
  const bool ok = std::abs(P - P_exact) < 1e-9 && std::abs(rho - rho_exact) < 1e-6 && std::abs(rho - 0.23445) < 5e-5;
  report(2, "unstable scalar", ok,
         fmt("P=%.12f (exact %.12f) rho=%.8f (exact %.8f)", P, P_exact, rho, rho_exact));
}

void completion_of_squares() {
  std::mt19937_64 rng(101);
  double worst = 0;
  int done = 0;
  while (done < 100) {
    const int d = 1 + done % 4;
    const auto sys = random_system(rng, d, 1 + done % 2, 1 + done % 3, 1.2);
    const auto w = identity_weights(sys);
    const auto r = periodic_riccati_solve(sys, w);
    if (!r.converged()) continue;
    const VectorX<double> x0 = gaussian_vector(d, rng);
    const auto u = random_control(rng, sys.input_dim(), 40);
    const auto c = completion_of_squares_check(sys, w, *r.solution, x0, u, 40);
    worst = std::max(worst, c.defect / (1 + c.cost));
    ++done;
  }
  report(3, "completion-of-squares identity", worst < 1e-8, fmt("max defect/(1+J)=%.3e over 100 triples", worst));
}

void value_identity() {
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 3;
    const auto sys = random_system(rng, d, 1 + trial % 2, 1 + trial % 2, 1.3);
    const auto w = identity_weights(sys);
    const long khat = 1 + trial % 4;
    const MatrixX<double> G = gaussian(d, d, rng);
    const MatrixX<double> M = G * G.transpose();
    const auto P = finite_horizon_riccati(sys, w, M, khat);
    const VectorX<double> x0 = gaussian_vector(d, rng);
    const double v = x0.dot(P[0] * x0);
    const double oracle = stacked_lq_minimum(sys, w.Q, w.R, M, x0, 0, khat);
    worst = std::max(worst, std::abs(v - oracle) / std::max(std::abs(oracle), 1e-300));
  }
  report(4, "value identity", worst < 1e-8, fmt("max relative gap=%.3e over 50 instances", worst));
}

void battery(int id_agree, int id_bounds) {
  const auto t0 = Clock::now();
  const auto inst = generate_battery<double>(60, 4,
                                             {Stratum::kControllable, Stratum::kUncontrollableStable,
                                              Stratum::kUncontrollableUnstable},
                                             1);
  const auto res = run_battery(inst, ChainOptions<double>{});
  const double secs = seconds_since(t0);
  int agree = 0;
  int checked = 0;
  int passed = 0;
  for (const auto& r : res) {
    agree += r.agree();
    if (r.decision_holds.value_or(false)) {
      ++checked;
      passed += r.steering_state_bound_ok.value_or(false) && r.steering_control_bound_ok.value_or(false);
    }
  }
  const int n = static_cast<int>(res.size());
  report(id_agree, "theorem-chain battery", agree == n && n >= 50 && secs < 60,
         fmt("agreement %.0f/%.0f in %.2fs", agree, n, secs));
  report(id_bounds, "steering bounds", checked > 0 && passed == checked,
         fmt("%.0f/%.0f instances with a holding decision meet both bounds", passed, checked));
}

void concatenation_decay() {
  const auto sys = scalar_system(2.0, 1.0);
  const auto r = concatenated_stabilizing_control(sys, VectorX<double>::Ones(1), 2, 0.1, 1e-6, 1e-12);
  const auto& s = r.state_sq_partial_sums;
  const bool enough = r.blocks() >= 8 && s.size() >= 8;
  const double inc8 = enough ? s[7] - s[6] : INFINITY;
  const bool ok = r.blocks() >= 5 && std::abs(r.fitted_ratio - 0.1) <= 0.02 && enough && inc8 < 1e-10 && r.certified;
  report(7, "concatenation geometric decay", ok,
         fmt("blocks=%.0f fitted ratio=%.6f block-8 increment=%.3e", double(r.blocks()), r.fitted_ratio, inc8));
}

void heat_cross_check() {
  const auto t0 = Clock::now();
  HeatConfig<double> bad;
  bad.n = 2;
  bad.m = 1;
  bad.S = 2 * MatrixX<double>::Identity(2, 2);
  bad.D = {(MatrixX<double>(2, 1) << 1, 0).finished()};
  bad.omegas = {{0.5, 2.5}};
  bad.N = 12;
  const auto sched_bad = make_schedule<double>({0.5});
  CrossCheckOptions<double> opt;
  opt.horizon_time = 10;
  const auto sys_bad = build_heat_system(bad, sched_bad);
  const auto rb = verdict_cross_check(bad, sched_bad, identity_weights(sys_bad), opt);
  const double growth = rb.growth_zero_feedback.value_or(NAN);
  const double growth_rand = rb.growth_random_feedback.value_or(NAN);
  const bool bad_ok = !rb.hautus.stabilizable && rb.agree && std::abs(growth - 1) <= 0.02 &&
                      std::abs(growth_rand - 1) <= 0.02;

  HeatConfig<double> good = bad;
  good.S = (MatrixX<double>(2, 2) << 2, 0, 0, 0.5).finished();
  good.D = {(MatrixX<double>(2, 1) << 1, 1).finished()};
  const auto sched_good = generate_admissible_schedule<double>(good.S, good.Dcat(), 1, 1.0);
  const auto sys_good = build_heat_system(good, sched_good);
  const auto rg = verdict_cross_check(good, sched_good, identity_weights(sys_good), opt);
  const double mu = rg.decay ? rg.decay->mu : NAN;
  const bool good_ok = rg.hautus.stabilizable && rg.agree && mu > 0;
  const double secs = seconds_since(t0);
  report(8, "heat cross-check", bad_ok && good_ok && secs < 10,
         fmt("growth=%.6f (random F %.6f) mu=%.4f t=%.2fs", growth, growth_rand, mu, secs));
}

void scaling_invariance() {
  // Gains are compared at 1e-10, so the iteration is run well below that.
  RiccatiOptions<double> opt;
  opt.tol = 1e-13;
  std::mt19937_64 rng(303);
  double gain_gap = 0;
  double p_gap = 0;
  int done = 0;
  while (done < 20) {
    const auto sys = random_system(rng, 1 + done % 4, 1 + done % 2, 1 + done % 3, 1.2);
    const auto base = periodic_riccati_solve(sys, identity_weights(sys), opt);
    if (!base.converged()) continue;
    const auto f0 = synthesize_feedback(sys, identity_weights(sys), *base.solution);
    for (const double a : {0.1, 1.0, 10.0}) {
      const auto w = identity_weights(sys, a, a);
      const auto r = periodic_riccati_solve(sys, w, opt);
      if (!r.converged()) {
        gain_gap = INFINITY;
        continue;
      }
      const auto f = synthesize_feedback(sys, w, *r.solution);
      for (std::size_t k = 0; k < f.gains.size(); ++k) {
        gain_gap = std::max(gain_gap, (f.gains[k] - f0.gains[k]).norm() / std::max(1.0, f0.gains[k].norm()));
      }
      for (std::size_t k = 0; k < r.solution->P.size(); ++k) {
        const MatrixX<double>& P0 = base.solution->P[k];
        p_gap = std::max(p_gap, (r.solution->P[k] - a * P0).norm() / (a * P0.norm()));
      }
    }
    ++done;
  }
  report(9, "scaling invariance", gain_gap < 1e-10 && p_gap < 1e-8,
         fmt("max gain gap=%.3e max relative P gap=%.3e", gain_gap, p_gap));
}

void section_four_combinatorics() {
  constexpr double pi = std::numbers::pi;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int disagreements = 0;
  for (int trial = 0; trial < 50; ++trial) {
    // Known spectrum: a rotation block a +- b i, plus two distinct real eigenvalues.
    const double a = unit(rng) - 0.5;
    const double b = 0.5 + 2 * unit(rng);
    MatrixX<double> core = MatrixX<double>::Zero(4, 4);
    core << a, -b, 0, 0, b, a, 0, 0, 0, 0, -1, 0, 0, 0, 0, 0.7;
    const MatrixX<double> T = gaussian(4, 4, rng) + 3 * MatrixX<double>::Identity(4, 4);
    const MatrixX<double> E = T * core * T.inverse();
    // Support of f in the eigen-blocks fixes the Krylov dimension.
    VectorX<double> f = VectorX<double>::Zero(4);
    int q_expect = 0;
    if (trial % 2 == 0) {
      f(0) = 1;
      q_expect += 2;
    }
    if (trial % 3 != 0) {
      f(2) = 1;
      ++q_expect;
    }
    if (q_expect == 0) {
      f(3) = 1;
      q_expect = 1;
    }
    const int hbar = 1 + trial % 3;
    MatrixX<double> Dcat(4, hbar);
    for (int k = 0; k < hbar; ++k) Dcat.col(k) = T * f;
    const double d_expect = pi / b;
    const double dE = d_E<double>(E);
    const int q = q_EF<double>(E, Dcat);
    if (std::abs(dE - d_expect) > 1e-9 * d_expect || q != q_expect) ++disagreements;

    std::vector<double> t;
    double acc = 0;
    for (int k = 0; k < hbar; ++k) t.push_back(acc += 0.05 + 0.6 * unit(rng));
    const auto sched = make_schedule(t);
    const auto rep = schedule_in_class(sched, E, Dcat, hbar);
    // Brute-force s-grid at resolution d/1000 over a full period plus a window.
    long grid_min = std::numeric_limits<long>::max();
    const double step = dE / 1000;
    for (double s = 0; s <= t.back() + dE; s += step) {
      long c = 0;
      for (long j = 1;; ++j) {
        const double tj = extend_schedule(sched, j);
        if (tj >= s + dE) break;
        c += tj > s;
      }
      grid_min = std::min(grid_min, c);
    }
    const bool admissible_grid = grid_min >= static_cast<long>(hbar) * q_expect + 2;
    if (!rep.min_window_count || *rep.min_window_count != grid_min || rep.admissible != admissible_grid) ++disagreements;
  }

  int span_false = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + trial % 3;
    const MatrixX<double> E = gaussian(k, k, rng, 1.0 / std::sqrt(double(k)));
    const MatrixX<double> F = gaussian(k, 1 + trial % 2, rng);
    const double dE = d_E<double>(E);
    const int q = q_EF<double>(E, F);
    const double width = std::isinf(dE) ? 1.0 : std::min(1.0, 0.9 * dE);
    std::vector<double> taus;
    for (int i = 0; i < q; ++i) taus.push_back(width * (i + 0.5 * unit(rng)) / q);
    const auto r = span_equality_check<double>(E, F, taus, 1e-8);
    span_false += !(r.equal && r.precondition_ok);
  }
  report(10, "schedule combinatorics", disagreements == 0 && span_false == 0,
         fmt("%.0f disagreements on 50 instances; %.0f/200 span checks false", disagreements, span_false));
}

}  // namespace

int main() {
  golden_ratio();
  unstable_scalar();
  completion_of_squares();
  value_identity();
  battery(5, 6);
  concatenation_decay();
  heat_cross_check();
  scaling_invariance();
  section_four_combinatorics();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
