#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace regppo;
using namespace regppo::testing;

namespace {

Mdp single_state(double row_sum, double reward) {
  Mdp mdp;
  mdp.num_states = 1;
  mdp.num_actions = 1;
  mdp.gamma = 0.9;
  mdp.r_max = 1.0;
  mdp.transition = Matrix::Constant(1, 1, row_sum);
  mdp.reward = Matrix::Constant(1, 1, reward);
  return mdp;
}

// Action 0 moves s -> s+1 mod S, action 1 stays.
Mdp cycle(int S) {
  Mdp mdp;
  mdp.num_states = S;
  mdp.num_actions = 2;
  mdp.gamma = 0.9;
  mdp.r_max = 1.0;
  mdp.transition = Matrix::Zero(2 * S, S);
  for (int s = 0; s < S; ++s) {
    mdp.transition(mdp.row_index(s, 0), (s + 1) % S) = 1.0;
    mdp.transition(mdp.row_index(s, 1), s) = 1.0;
  }
  mdp.reward = Matrix::Zero(S, 2);
  return mdp;
}

}  // namespace

TEST(ValidateMdp, DegenerateChainIsValid) {
  EXPECT_TRUE(validate_mdp(single_state(1.0, 0.5)).empty());
}

TEST(ValidateMdp, ShortRowNamesTheStateActionPair) {
  const auto report = validate_mdp(single_state(0.99, 0.5));
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].state, 0);
  EXPECT_EQ(report[0].action, 0);
  EXPECT_NE(to_string(report[0]).find("(s=0, a=0)"), std::string::npos);
}

TEST(ValidateMdp, NegativeRewardIsReported) {
  const auto report = validate_mdp(single_state(1.0, -0.1));
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].message, "reward out of [0,r_max]");
}

TEST(ValidateMdp, BadDiscountAndShapes) {
  Mdp mdp = single_state(1.0, 0.5);
  mdp.gamma = 1.0;
  EXPECT_FALSE(validate_mdp(mdp).empty());
  mdp = single_state(1.0, 0.5);
  mdp.reward = Matrix::Zero(2, 1);
  EXPECT_FALSE(validate_mdp(mdp).empty());
}

TEST(TransitionUnderPolicy, DeterministicPolicyOnCycleIsPermutation) {
  const Mdp mdp = cycle(4);
  // Softmax never reaches a vertex, so the boundary table is assembled by hand.
  PolicyTable pi;
  pi.probs = Matrix::Zero(4, 2);
  pi.probs.col(0).setOnes();
  pi.log_probs = pi.probs.array().log();
  const Matrix p_pi = transition_under_policy(mdp, pi);
  for (int s = 0; s < 4; ++s) {
    for (int t = 0; t < 4; ++t) EXPECT_EQ(p_pi(s, t), t == (s + 1) % 4 ? 1.0 : 0.0);
  }
}

TEST(TransitionUnderPolicy, UniformEverythingGivesUniformRows) {
  Mdp mdp = random_mdp(3, 3, 2, 1.0, 0.9);
  mdp.transition.setConstant(1.0 / 3.0);
  const Matrix p_pi = transition_under_policy(mdp, uniform_policy(3, 2));
  EXPECT_LT((p_pi.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-15);
}

TEST(TransitionUnderPolicy, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  const Mdp mdp = random_mdp(5, 3, 2, 1.0, 0.9);
  const PolicyTable pi = random_policy(rng, 3, 2);
  EXPECT_LT((transition_under_policy(mdp, pi) - brute_force_p_pi(mdp, pi.probs)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(RewardUnderPolicy, MatchesRowDot) {
  std::mt19937_64 rng(12);
  const Mdp mdp = random_mdp(6, 4, 3, 1.0, 0.9);
  const PolicyTable pi = random_policy(rng, 4, 3);
  const Vector r = reward_under_policy(mdp, pi);
  for (int s = 0; s < 4; ++s) EXPECT_NEAR(r(s), pi.probs.row(s).dot(mdp.reward.row(s)), 1e-15);
}

TEST(DiscountedStateDistribution, SingleState) {
  const Mdp mdp = single_state(1.0, 0.5);
  const Vector d = discounted_state_distribution(mdp, uniform_policy(1, 1), uniform_distribution(1));
  EXPECT_NEAR(d(0), 1.0, 1e-15);
}

TEST(DiscountedStateDistribution, ZeroDiscountReturnsStart) {
  std::mt19937_64 rng(13);
  Mdp mdp = random_mdp(2, 4, 2, 1.0, 0.0);
  const Vector u = random_simplex(rng, 4);
  const Vector d = discounted_state_distribution(mdp, random_policy(rng, 4, 2),
                                                 make_distribution(u, DistributionRole::kGradient));
  EXPECT_LT((d - u).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DiscountedStateDistribution, MatchesNeumannSeries) {
  std::mt19937_64 rng(14);
  const Mdp mdp = random_mdp(7, 4, 3, 1.0, 0.9);
  const PolicyTable pi = random_policy(rng, 4, 3);
  const Vector u = random_simplex(rng, 4);
  const Vector d = discounted_state_distribution(mdp, pi, make_distribution(u, DistributionRole::kGradient));
  EXPECT_LT((d - neumann_occupancy(brute_force_p_pi(mdp, pi.probs), mdp.gamma, u)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AccumulatedVisitation, OnesMapToHorizon) {
  std::mt19937_64 rng(15);
  const Mdp mdp = random_mdp(8, 3, 2, 1.0, 0.8);
  const Vector out = accumulated_visitation_apply(mdp, random_policy(rng, 3, 2), Vector::Ones(3));
  EXPECT_LT((out.array() - 1.0 / (1.0 - 0.8)).abs().maxCoeff(), 1e-12);
}

TEST(AccumulatedVisitation, ZeroMapsToZero) {
  const Mdp mdp = random_mdp(8, 3, 2, 1.0, 0.8);
  EXPECT_EQ(accumulated_visitation_apply(mdp, uniform_policy(3, 2), Vector::Zero(3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AccumulatedVisitation, MatchesNeumannSeries) {
  std::mt19937_64 rng(16);
  const Mdp mdp = random_mdp(9, 5, 3, 1.0, 0.95);
  const PolicyTable pi = random_policy(rng, 5, 3);
  const Vector v = Vector::Random(5);
  const Vector expected = neumann_apply(brute_force_p_pi(mdp, pi.probs), mdp.gamma, v);
  EXPECT_LT((accumulated_visitation_apply(mdp, pi, v) - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RandomMdp, SameSeedSameInstance) {
  const Mdp a = random_mdp(42, 4, 3, 1.0, 0.9);
  const Mdp b = random_mdp(42, 4, 3, 1.0, 0.9);
  EXPECT_EQ(a.transition, b.transition);
  EXPECT_EQ(a.reward, b.reward);
}

TEST(RandomMdp, GeneratedInstancesAreValid) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_TRUE(validate_mdp(random_mdp(seed, 1 + seed % 5, 1 + seed % 4, 2.0, 0.9)).empty());
  }
}

TEST(RandomMdp, TransitionsStrictlyPositive) {
  const Mdp mdp = random_mdp(1, 3, 2, 1.0, 0.9);
  EXPECT_GT(mdp.transition.minCoeff(), 0.0);
}

TEST(InitialDistribution, RejectsInvalidWeights) {
  EXPECT_THROW(make_distribution(Vector(), DistributionRole::kGradient), std::invalid_argument);
  EXPECT_THROW(make_distribution(Vector::Constant(2, 0.4), DistributionRole::kGradient), std::invalid_argument);
  Vector w(2);
  w << 1.0, 0.0;
  EXPECT_THROW(make_distribution(w, DistributionRole::kGradient), std::invalid_argument);
  EXPECT_NO_THROW(make_distribution(w, DistributionRole::kReporting));
}

// Properties over random instances.

TEST(MdpProperties, OccupancyIsDistributionDominatingStart) {
  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 200; ++trial) {
    const Mdp mdp = random_small_mdp(rng);
    const PolicyTable pi = random_policy(rng, mdp.num_states, mdp.num_actions);
    const Vector u = random_simplex(rng, mdp.num_states);
    const Vector d = discounted_state_distribution(mdp, pi, make_distribution(u, DistributionRole::kGradient));
    EXPECT_NEAR(d.sum(), 1.0, 1e-12);
    EXPECT_TRUE(((d - (1.0 - mdp.gamma) * u).array() >= -1e-14).all()) << "trial " << trial;
  }
}

TEST(MdpProperties, VisitationIsLinear) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> coef(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Mdp mdp = random_small_mdp(rng);
    const PolicyTable pi = random_policy(rng, mdp.num_states, mdp.num_actions);
    const Vector v = Vector::Random(mdp.num_states);
    const Vector w = Vector::Random(mdp.num_states);
    const double alpha = coef(rng);
    const Vector lhs = accumulated_visitation_apply(mdp, pi, alpha * v + w);
    const Vector rhs = alpha * accumulated_visitation_apply(mdp, pi, v) + accumulated_visitation_apply(mdp, pi, w);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial;
  }
}

TEST(MdpProperties, SolveResidual) {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 200; ++trial) {
    const Mdp mdp = random_small_mdp(rng);
    const PolicyTable pi = random_policy(rng, mdp.num_states, mdp.num_actions);
    const Vector v = Vector::Random(mdp.num_states);
    const Vector x = accumulated_visitation_apply(mdp, pi, v);
    const Matrix p_pi = brute_force_p_pi(mdp, pi.probs);
    EXPECT_LT((x - mdp.gamma * p_pi * x - v).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial;
  }
}
