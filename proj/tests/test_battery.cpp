#include <random>

#include <gtest/gtest.h>

#include "impstab/battery.hpp"
#include "test_support.hpp"

using namespace impstab;
using impstab::testing::scalar_system;

TEST(Stratum, NamesRoundTrip) {
  for (const auto s : {Stratum::kControllable, Stratum::kUncontrollableStable, Stratum::kUncontrollableUnstable}) {
    EXPECT_EQ(stratum_from_string(to_string(s)), s);
  }
  EXPECT_FALSE(stratum_from_string("bogus").has_value());
}

TEST(RandomInstance, StrataHaveExpectedStructure) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_instance<double>(Stratum::kControllable, 4, rng);
    EXPECT_NO_THROW(c.validate());
    EXPECT_LE(c.state_dim(), 4);
    EXPECT_TRUE(periodic_riccati_solve(c, identity_weights(c)).converged());

    const auto u = random_instance<double>(Stratum::kUncontrollableUnstable, 4, rng);
    EXPECT_EQ(periodic_riccati_solve(u, identity_weights(u)).status, RiccatiStatus::kNotStabilizable);

    const auto s = random_instance<double>(Stratum::kUncontrollableStable, 4, rng);
    EXPECT_TRUE(periodic_riccati_solve(s, identity_weights(s)).converged());
  }
}

TEST(Chain, GoldenSystemAgrees) {
  const auto v = evaluate_chain(scalar_system(1.0, 1.0), ChainOptions<double>{});
  EXPECT_TRUE(v.riccati_verdict);
  EXPECT_TRUE(v.weak_obs_verdict);
  EXPECT_TRUE(v.concatenation_verdict);
  EXPECT_TRUE(v.agree());
  EXPECT_TRUE(v.steering_state_bound_ok.value());
  EXPECT_TRUE(v.steering_control_bound_ok.value());
}

TEST(Chain, UncontrollableUnstableAgreesNegatively) {
  const auto v = evaluate_chain(scalar_system(2.0, 0.0), ChainOptions<double>{});
  EXPECT_FALSE(v.riccati_verdict);
  EXPECT_FALSE(v.weak_obs_verdict);
  EXPECT_FALSE(v.concatenation_verdict);
  EXPECT_TRUE(v.agree());
}

TEST(Battery, GenerationIsDeterministic) {
  const std::vector<Stratum> all{Stratum::kControllable, Stratum::kUncontrollableStable,
                                 Stratum::kUncontrollableUnstable};
  const auto a = generate_battery<double>(9, 4, all, 42);
  const auto b = generate_battery<double>(9, 4, all, 42);
  ASSERT_EQ(a.size(), 9u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].stratum, all[i % 3]);
    ASSERT_EQ(a[i].system.flows.size(), b[i].system.flows.size());
    for (std::size_t k = 0; k < a[i].system.flows.size(); ++k) EXPECT_EQ(a[i].system.flows[k], b[i].system.flows[k]);
  }
}

TEST(Battery, RejectsBadArguments) {
  EXPECT_THROW(generate_battery<double>(-1, 3, {Stratum::kControllable}, 1), std::invalid_argument);
  EXPECT_THROW(generate_battery<double>(3, 3, {}, 1), std::invalid_argument);
}

TEST(Battery, ResultsIndependentOfWorkerCount) {
  const auto inst = generate_battery<double>(12, 3,
                                             {Stratum::kControllable, Stratum::kUncontrollableStable,
                                              Stratum::kUncontrollableUnstable},
                                             7);
  const auto one = run_battery(inst, ChainOptions<double>{}, 1);
  const auto four = run_battery(inst, ChainOptions<double>{}, 4);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    EXPECT_EQ(one[i].riccati_verdict, four[i].riccati_verdict);
    EXPECT_EQ(one[i].weak_obs_K, four[i].weak_obs_K);
    EXPECT_EQ(one[i].weak_obs_C, four[i].weak_obs_C);
    EXPECT_EQ(one[i].concatenation_K, four[i].concatenation_K);
  }
}

TEST(Battery, FullAgreementAcrossStrata) {
  const auto inst = generate_battery<double>(30, 4,
                                             {Stratum::kControllable, Stratum::kUncontrollableStable,
                                              Stratum::kUncontrollableUnstable},
                                             2024);
  const auto res = run_battery(inst, ChainOptions<double>{});
  for (std::size_t i = 0; i < res.size(); ++i) {
    EXPECT_TRUE(res[i].agree()) << "instance " << i << " (" << to_string(inst[i].stratum) << ")";
    const bool expect_positive = inst[i].stratum != Stratum::kUncontrollableUnstable;
    EXPECT_EQ(res[i].riccati_verdict, expect_positive);
    if (res[i].decision_holds.value_or(false)) {
      EXPECT_TRUE(res[i].steering_state_bound_ok.value());
      EXPECT_TRUE(res[i].steering_control_bound_ok.value());
    }
  }
}
