#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "impstab/observability.hpp"
#include "impstab/riccati.hpp"
#include "test_support.hpp"

using namespace impstab;
using impstab::testing::gaussian;
using impstab::testing::gaussian_vector;
using impstab::testing::random_system;
using impstab::testing::scalar_system;

namespace {

const auto kTwo = scalar_system(2.0, 1.0);

ObservabilityPair<double> scalar_pair_before(long k) { return build_observability_pair(kTwo, k, ObsRange::kBeforeHorizon); }

}  // namespace

TEST(Pair, SingleBlockIsInputTranspose) {
  std::mt19937_64 rng(1);
  const auto sys = random_system(rng, 3, 2, 2);
  const auto p = build_observability_pair(sys, 1);
  EXPECT_EQ(p.blocks, 1);
  EXPECT_EQ(p.G, MatrixX<double>(sys.inputs[0].transpose()));
  EXPECT_EQ(p.L, sys.flows[0]);
}

TEST(Pair, ScalarHandProduct) {
  const auto p = build_observability_pair(kTwo, 3);
  ASSERT_EQ(p.G.rows(), 3);
  EXPECT_DOUBLE_EQ(p.G(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(p.G(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(p.G(2, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.L(0, 0), 8.0);
  const auto q = scalar_pair_before(3);
  ASSERT_EQ(q.G.rows(), 2);
  EXPECT_DOUBLE_EQ(q.G(1, 0), 2.0);
}

TEST(Pair, ZeroInputGivesZeroObservation) {
  const auto p = build_observability_pair(scalar_system(2.0, 0.0), 4);
  EXPECT_EQ(p.G.norm(), 0.0);
}

TEST(Pair, RejectsZeroHorizon) { EXPECT_THROW(build_observability_pair(kTwo, 0), std::invalid_argument); }

TEST(Pair, AdjointConsistency) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = random_system(rng, 1 + trial % 4, 1 + trial % 3, 1 + trial % 3);
    const long k = 1 + trial % 5;
    const auto p = build_observability_pair(sys, k);
    for (int s = 0; s < 5; ++s) {
      const VectorX<double> phi = gaussian_vector(sys.state_dim(), rng);
      double direct = 0;
      for (long j = 1; j <= k; ++j) {
        const MatrixX<double> prod = flow_product(sys, j, k);
        direct += (sys.input_at(j).transpose() * prod.transpose() * phi).squaredNorm();
      }
      EXPECT_NEAR((p.G * phi).squaredNorm(), direct, 1e-12 * (1 + direct));
      EXPECT_NEAR((p.L.transpose() * phi).norm(), (flow_product(sys, 0, k).transpose() * phi).norm(), 1e-12);
    }
  }
}

TEST(MinimalC, ContractiveFlowNeedsNoObservation) {
  const auto p = build_observability_pair(scalar_system(0.5, 1.0), 1);
  for (const auto mode : {WeakObsMode::kSearch, WeakObsMode::kSufficient}) {
    const auto r = weak_obs_minimal_C(p, 0.6, mode);
    EXPECT_TRUE(r.feasible);
    EXPECT_EQ(r.C, 0.0);
  }
}

TEST(MinimalC, KernelObstruction) {
  const auto p = build_observability_pair(scalar_system(2.0, 0.0), 1);
  for (const auto mode : {WeakObsMode::kSearch, WeakObsMode::kSufficient}) {
    const auto r = weak_obs_minimal_C(p, 0.5, mode);
    EXPECT_FALSE(r.feasible);
    EXPECT_NEAR(r.witness.norm(), 1.0, 1e-12);
  }
}

TEST(MinimalC, ScalarSearchMatchesArithmetic) {
  const auto r = weak_obs_minimal_C(scalar_pair_before(3), 0.5, WeakObsMode::kSearch);
  ASSERT_TRUE(r.feasible);
  EXPECT_NEAR(r.C, 7.5 / std::sqrt(20.0), 1e-9);
  EXPECT_NEAR(std::abs(r.witness(0)), 1.0, 1e-12);
}

TEST(MinimalC, ScalarSufficientMatchesCertificate) {
  // C^2 * 20 + 0.25 >= 64 at the boundary.
  const auto r = weak_obs_minimal_C(scalar_pair_before(3), 0.5, WeakObsMode::kSufficient);
  ASSERT_TRUE(r.feasible);
  const double exact = std::sqrt(63.75 / 20.0);
  EXPECT_GE(r.C, exact);
  EXPECT_LE(r.C, exact * (1 + 1e-8));
}

TEST(MinimalC, RejectsSigmaOutsideUnitInterval) {
  const auto p = scalar_pair_before(3);
  EXPECT_THROW(weak_obs_minimal_C(p, 0.0, WeakObsMode::kSearch), std::invalid_argument);
  EXPECT_THROW(weak_obs_minimal_C(p, 1.0, WeakObsMode::kSufficient), std::invalid_argument);
}

TEST(MinimalC, CertificateOrdering) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto sys = random_system(rng, 2 + trial % 3, 1 + trial % 2, 1 + trial % 2, 1.3);
    const auto p = build_observability_pair(sys, 2 + trial % 4, ObsRange::kBeforeHorizon);
    const auto s = weak_obs_minimal_C(p, 0.5, WeakObsMode::kSearch);
    const auto c = weak_obs_minimal_C(p, 0.5, WeakObsMode::kSufficient);
    ASSERT_EQ(s.feasible, c.feasible);
    if (s.feasible) EXPECT_GE(c.C, s.C * (1 - 1e-9));
  }
}

TEST(MinimalC, SearchValueIsAttainedAtWitness) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = random_system(rng, 3, 1, 2, 1.4);
    const auto p = build_observability_pair(sys, 4);
    const auto r = weak_obs_minimal_C(p, 0.3, WeakObsMode::kSearch);
    if (!r.feasible || r.C == 0) continue;
    const VectorX<double>& w = r.witness;
    EXPECT_NEAR(w.norm(), 1.0, 1e-12);
    EXPECT_NEAR(((p.L.transpose() * w).norm() - 0.3) / (p.G * w).norm(), r.C, 1e-9 * r.C);
    // Sampled directions never beat the reported sup by more than rounding.
    for (int s = 0; s < 200; ++s) {
      const VectorX<double> phi = gaussian_vector(3, rng).normalized();
      const double v = std::max(0.0, (p.L.transpose() * phi).norm() - 0.3) / (p.G * phi).norm();
      EXPECT_LE(v, r.C * (1 + 1e-8));
    }
  }
}

TEST(Holds, SufficientConstantPasses) {
  const auto p = scalar_pair_before(3);
  const auto c = weak_obs_minimal_C(p, 0.5, WeakObsMode::kSufficient);
  EXPECT_TRUE(weak_obs_holds(p, 0.5, c.C).holds);
}

TEST(Holds, BelowMinimalConstantFails) {
  const auto d = weak_obs_holds(scalar_pair_before(3), 0.5, 1.6);
  EXPECT_FALSE(d.holds);
  EXPECT_NEAR(std::abs(d.witness(0)), 1.0, 1e-12);
  EXPECT_NEAR(d.max_violation, 8 - 1.6 * std::sqrt(20.0) - 0.5, 1e-9);
}

TEST(Holds, LargeSigmaZeroConstant) {
  EXPECT_TRUE(weak_obs_holds(build_observability_pair(scalar_system(0.5, 1.0), 1), 0.6, 0.0).holds);
}

TEST(Holds, CertificateImpliesDecisionOnRandomPairs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = random_system(rng, 2 + trial % 3, 1 + trial % 2, 1 + trial % 3, 1.2);
    const auto p = build_observability_pair(sys, 3 * sys.hbar(), ObsRange::kBeforeHorizon);
    const auto c = weak_obs_minimal_C(p, 0.5, WeakObsMode::kSufficient);
    if (!c.feasible) continue;
    EXPECT_TRUE(weak_obs_holds(p, 0.5, c.C).holds);
  }
}

TEST(Holder, InvertibleObservationIsFinite) {
  std::mt19937_64 rng(6);
  ImpulseSystem<double> sys = random_system(rng, 3, 3, 1);
  const auto p = build_observability_pair(sys, 1);
  for (const double theta : {0.25, 0.5, 0.9}) {
    const auto r = holder_obs_check(p, theta);
    ASSERT_TRUE(r.feasible);
    EXPECT_TRUE(std::isfinite(r.C));
    EXPECT_GT(r.C, 0.0);
  }
}

TEST(Holder, ZeroInputInfeasible) {
  const auto r = holder_obs_check(build_observability_pair(scalar_system(2.0, 0.0), 2), 0.5);
  EXPECT_FALSE(r.feasible);
}

TEST(Holder, ThetaOneBracketedBySquaredObservation) {
  // Sum of norms lies between the l2 norm and sqrt(blocks) times it.
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = random_system(rng, 2, 2, 2);
    const auto p = build_observability_pair(sys, 3);
    const Eigen::JacobiSVD<MatrixX<double>> svd(p.G, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const MatrixX<double> pinv =
        svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() * svd.matrixU().transpose();
    const double c_l2 = operator_norm(MatrixX<double>(p.L.transpose() * pinv));
    const auto r = holder_obs_check(p, 1.0);
    ASSERT_TRUE(r.feasible);
    EXPECT_LE(r.C, c_l2 * (1 + 1e-8));
    EXPECT_GE(r.C, c_l2 / std::sqrt(3.0) * (1 - 1e-8));
  }
}

TEST(Holder, RejectsThetaOutOfRange) {
  EXPECT_THROW(holder_obs_check(scalar_pair_before(3), 0.0), std::invalid_argument);
  EXPECT_THROW(holder_obs_check(scalar_pair_before(3), 1.5), std::invalid_argument);
}

TEST(Steering, AlreadySmallStateNeedsNoControl) {
  const auto r = steering_control(scalar_system(0.05, 1.0), VectorX<double>::Ones(1), 2, 0.1, 1e-6);
  EXPECT_EQ(r.phi_star.norm(), 0.0);
  EXPECT_EQ(r.control_norm, 0.0);
  EXPECT_TRUE(r.within_target);
}

TEST(Steering, ZeroStateNeedsNoControl) {
  const auto r = steering_control(kTwo, VectorX<double>::Zero(1), 2, 0.1, 1e-6);
  EXPECT_EQ(r.control_norm, 0.0);
  EXPECT_EQ(r.achieved_norm, 0.0);
}

TEST(Steering, ScalarClosedForm) {
  // J(phi) = 2 phi^2 + 4 phi + w |phi| with w = sigma + eps, minimized at
  // phi = -(4 - w) / 4, so u_1 = 2 phi and x(t_2) = 4 + 2 u_1 = w.
  const double w = 0.1 + 1e-6;
  const auto r = steering_control(kTwo, VectorX<double>::Ones(1), 2, 0.1, 1e-6);
  ASSERT_EQ(r.u.size(), 2u);
  EXPECT_NEAR(r.u.values[0](0), -(4 - w) / 2, 1e-10);
  EXPECT_EQ(r.u.values[1](0), 0.0);
  EXPECT_NEAR(r.phi_star(0), -(4 - w) / 4, 1e-10);
  EXPECT_LE(r.achieved_norm, 0.1 + 1e-6 + 1e-8);
  EXPECT_TRUE(r.within_target);
}

TEST(Steering, ControlIsObservationOfMinimizer) {
  std::mt19937_64 rng(8);
  const auto sys = random_system(rng, 3, 2, 2, 1.3);
  const VectorX<double> x0 = gaussian_vector(3, rng);
  const long K = 3;
  const auto r = steering_control(sys, x0, K, 0.5, 1e-6);
  const auto p = build_observability_pair(sys, K * 2, ObsRange::kBeforeHorizon);
  for (long j = 1; j < K * 2; ++j) {
    const VectorX<double> expect = p.block(j) * r.phi_star;
    EXPECT_LT((r.u.values[static_cast<std::size_t>(j - 1)] - expect).norm(), 1e-12 * (1 + expect.norm()));
  }
  EXPECT_EQ(r.u.values.back().norm(), 0.0);
  const auto traj = simulate_open_loop(sys, x0, r.u, K * 2);
  EXPECT_NEAR(traj.norms_pre.back(), r.achieved_norm, 1e-12 * (1 + r.achieved_norm));
}

TEST(Steering, VariationalInequality) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = random_system(rng, 2 + trial % 3, 1 + trial % 2, 1 + trial % 2, 1.3);
    const VectorX<double> x0 = gaussian_vector(sys.state_dim(), rng);
    const long K = 3;
    const double sigma = 0.4;
    const double eps = 1e-3;
    SteeringResult<double> r;
    try {
      r = steering_control(sys, x0, K, sigma, eps);
    } catch (const SteeringError&) {
      continue;
    }
    const auto p = build_observability_pair(sys, K * sys.hbar(), ObsRange::kBeforeHorizon);
    const VectorX<double> Lx0 = p.L * x0;
    const double weight = sigma * x0.norm() + eps;
    for (int s = 0; s < 100; ++s) {
      const VectorX<double> xi = gaussian_vector(sys.state_dim(), rng);
      EXPECT_GE(steering_directional_derivative(p, Lx0, weight, r.phi_star, xi), -1e-8 * (1 + xi.norm()));
    }
  }
}

TEST(Steering, BoundsWhenDecisionHolds) {
  std::mt19937_64 rng(10);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto sys = random_system(rng, 2 + trial % 2, 1 + trial % 2, 1 + trial % 2, 1.2);
    const long K = 3;
    const auto p = build_observability_pair(sys, K * sys.hbar(), ObsRange::kBeforeHorizon);
    const auto c = weak_obs_minimal_C(p, 0.5, WeakObsMode::kSufficient);
    if (!c.feasible || !weak_obs_holds(p, 0.5, c.C).holds) continue;
    const VectorX<double> x0 = gaussian_vector(sys.state_dim(), rng);
    const auto r = steering_control(sys, x0, K, 0.5, 1e-6, std::optional<double>(c.C));
    EXPECT_LE(r.achieved_norm, 0.5 * x0.norm() + 1e-6 + 1e-8);
    EXPECT_LE(r.control_norm, 2 * c.C * x0.norm() + 1e-8);
    EXPECT_TRUE(r.control_bound_ok.value());
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(Steering, NonCoerciveThrows) {
  EXPECT_THROW(steering_control(scalar_system(2.0, 0.0), VectorX<double>::Ones(1), 2, 0.1, 1e-6), SteeringError);
}

TEST(Steering, RejectsBadArguments) {
  EXPECT_THROW(steering_control(kTwo, VectorX<double>::Ones(1), 0, 0.1, 1e-6), std::invalid_argument);
  EXPECT_THROW(steering_control(kTwo, VectorX<double>::Ones(1), 2, 0.1, 0.0), std::invalid_argument);
  EXPECT_THROW(steering_control(kTwo, VectorX<double>::Ones(2), 2, 0.1, 1e-6), std::invalid_argument);
}

TEST(Concatenation, ScalarBlocksContractByFactor) {
  const auto r = concatenated_stabilizing_control(kTwo, VectorX<double>::Ones(1), 2, 0.1, 1e-6, 1e-12);
  ASSERT_GE(r.blocks(), 8);
  for (std::size_t l = 1; l < r.block_state_norms.size(); ++l) {
    EXPECT_NEAR(r.block_state_norms[l] / r.block_state_norms[l - 1], 0.1 + 1e-6, 1e-6);
  }
  EXPECT_NEAR(r.fitted_ratio, 0.1 + 1e-6, 1e-3);
  EXPECT_TRUE(r.certified);
}

TEST(Concatenation, ZeroStateGivesEmptyControl) {
  const auto r = concatenated_stabilizing_control(kTwo, VectorX<double>::Zero(1), 2, 0.1, 1e-6, 1e-12);
  EXPECT_EQ(r.u.size(), 0u);
  EXPECT_EQ(r.blocks(), 0);
  EXPECT_TRUE(r.certified);
}

TEST(Concatenation, GoldenSystemPartialSumsConverge) {
  const auto sys = scalar_system(1.0, 1.0);
  const auto r = concatenated_stabilizing_control(sys, VectorX<double>::Ones(1), 2, 0.3, 1e-6, 1e-10);
  ASSERT_GE(r.state_sq_partial_sums.size(), 3u);
  // Successive increments shrink geometrically.
  const auto& s = r.state_sq_partial_sums;
  for (std::size_t l = 2; l < s.size(); ++l) {
    EXPECT_LE(s[l] - s[l - 1], (s[l - 1] - s[l - 2]) * 0.2 + 1e-15);
  }
  EXPECT_LT(r.fitted_ratio, 1.0);
  EXPECT_TRUE(r.certified);
}

TEST(Concatenation, ControlEnergyBound) {
  const auto p = scalar_pair_before(2);
  const auto c = weak_obs_minimal_C(p, 0.1, WeakObsMode::kSufficient);
  ASSERT_TRUE(c.feasible);
  const auto r = concatenated_stabilizing_control(kTwo, VectorX<double>::Ones(1), 2, 0.1, 1e-6, 1e-12,
                                                  std::optional<double>(c.C));
  ASSERT_TRUE(r.control_bound_ok.has_value());
  EXPECT_TRUE(*r.control_bound_ok);
  EXPECT_LE(r.control_sq_sum, 4 * c.C * c.C / (1 - std::pow(0.1 + 1e-6, 2)) + 1e-8);
}

TEST(Concatenation, UnsteerableBlockThrows) {
  // One-instant blocks observe nothing, so no block can contract.
  EXPECT_THROW(
      concatenated_stabilizing_control(scalar_system(1.0, 1.0), VectorX<double>::Ones(1), 1, 0.3, 1e-6, 1e-10),
      SteeringError);
}

TEST(Concatenation, RejectsNonContractiveParameters) {
  EXPECT_THROW(concatenated_stabilizing_control(kTwo, VectorX<double>::Ones(1), 2, 0.9, 0.2, 1e-6),
               std::invalid_argument);
}

TEST(Concatenation, StabilizableRandomSystemsCertify) {
  std::mt19937_64 rng(11);
  int certified = 0;
  for (int trial = 0; trial < 15; ++trial) {
    const auto sys = random_system(rng, 2, 1, 2, 1.3);
    if (!periodic_riccati_solve(sys, identity_weights(sys)).converged()) continue;
    const auto r = concatenated_stabilizing_control(sys, gaussian_vector(2, rng), 4, 0.5, 1e-3, 1e-8);
    EXPECT_TRUE(r.certified);
    certified += r.certified;
  }
  EXPECT_GT(certified, 5);
}
