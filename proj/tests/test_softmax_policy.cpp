#include "test_support.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <numbers>

using namespace regppo;
using namespace regppo::testing;

TEST(Softmax, ZeroLogitsGiveUniformRow) {
  const PolicyTable pi = policy_from_params(PolicyParams{Matrix::Zero(2, 4)});
  EXPECT_LT((pi.probs.array() - 0.25).abs().maxCoeff(), 1e-16);
}

TEST(Softmax, ShiftInvariance) {
  for (double c : {-700.0, -3.0, 0.5, 800.0}) {
    const PolicyTable pi = policy_from_params(PolicyParams{Matrix::Constant(1, 3, c)});
    EXPECT_LT((pi.probs.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-15) << c;
  }
}

TEST(Softmax, LargeGapKeepsExactLogProbability) {
  Matrix theta(1, 2);
  theta << 1000.0, 0.0;
  const PolicyTable pi = policy_from_params(PolicyParams{theta});
  EXPECT_EQ(pi.log_probs(0, 1), -1000.0);
  EXPECT_EQ(pi.log_probs(0, 0), 0.0);
  EXPECT_EQ(pi.probs(0, 0), 1.0);
  EXPECT_TRUE(std::isfinite(pi.log_probs(0, 1)));
}

TEST(Softmax, ParamsRoundTrip) {
  std::mt19937_64 rng(1);
  const PolicyTable pi = random_policy(rng, 3, 4);
  const PolicyTable back = policy_from_params(params_from_policy(pi));
  EXPECT_LT((back.probs - pi.probs).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Softmax, RejectsZeroProbability) {
  Matrix probs(1, 2);
  probs << 1.0, 0.0;
  EXPECT_THROW(policy_from_probs(probs), std::invalid_argument);
}

TEST(Score, UniformTwoActions) {
  const Vector psi = score(uniform_policy(1, 2), 0, 0);
  EXPECT_DOUBLE_EQ(psi(0), 0.5);
  EXPECT_DOUBLE_EQ(psi(1), -0.5);
}

TEST(Score, ExpectationIsZero) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const PolicyTable pi = random_policy(rng, 1, 5);
    Vector mean = Vector::Zero(5);
    for (int a = 0; a < 5; ++a) mean += pi.probs(0, a) * score(pi, 0, a);
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Score, MatchesFiniteDifferenceOfLogProbability) {
  std::mt19937_64 rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const PolicyParams theta{random_logits(rng, 2, 4)};
    for (int s = 0; s < 2; ++s) {
      for (int a = 0; a < 4; ++a) {
        const Vector psi = score(theta, s, a);
        Vector fd(4);
        for (int j = 0; j < 4; ++j) {
          PolicyParams plus = theta;
          PolicyParams minus = theta;
          plus.theta(s, j) += h;
          minus.theta(s, j) -= h;
          fd(j) = (std::log(policy_from_params(plus).probs(s, a)) - std::log(policy_from_params(minus).probs(s, a))) /
                  (2.0 * h);
        }
        EXPECT_LT(relative_error(fd, psi), 1e-6);
      }
    }
  }
}

TEST(Jacobian, UniformTwoActions) {
  const Matrix h = policy_jacobian(uniform_policy(1, 2), 0);
  Matrix expected(2, 2);
  expected << 0.25, -0.25, -0.25, 0.25;
  EXPECT_LT((h - expected).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(Jacobian, AnnihilatesOnes) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix h = policy_jacobian(random_policy(rng, 1, 4), 0);
    EXPECT_LT((h * Vector::Ones(4)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Jacobian, RowsMatchFiniteDifferenceOfProbabilities) {
  std::mt19937_64 rng(5);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const PolicyParams theta{random_logits(rng, 1, 3)};
    const Matrix jac = policy_jacobian(theta, 0);
    Matrix fd(3, 3);
    for (int j = 0; j < 3; ++j) {
      PolicyParams plus = theta;
      PolicyParams minus = theta;
      plus.theta(0, j) += h;
      minus.theta(0, j) -= h;
      fd.col(j) = (policy_from_params(plus).probs.row(0) - policy_from_params(minus).probs.row(0)).transpose() /
                  (2.0 * h);
    }
    EXPECT_LT((fd - jac).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Score, OutOfRangeIndicesThrow) {
  const PolicyTable pi = uniform_policy(2, 2);
  EXPECT_THROW(score(pi, 2, 0), std::out_of_range);
  EXPECT_THROW(score(pi, 0, -1), std::out_of_range);
}

// Norm bounds over random logits, including near-deterministic rows.
TEST(SoftmaxProperties, ScoreJacobianAndLipschitzBounds) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> actions(2, 6);
  std::uniform_real_distribution<double> range(0.1, 40.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int A = actions(rng);
    const double r = range(rng);
    const PolicyParams theta{random_logits(rng, 1, A, r)};
    const PolicyParams other{random_logits(rng, 1, A, r)};
    const PolicyTable pi = policy_from_params(theta);
    const PolicyTable pi2 = policy_from_params(other);
    const Matrix h = policy_jacobian(pi, 0);
    EXPECT_LE(Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().cwiseAbs().maxCoeff(), 1.0 + 1e-12);
    const double dist = (theta.theta - other.theta).norm();
    for (int a = 0; a < A; ++a) {
      EXPECT_LE(score(pi, 0, a).norm(), std::numbers::sqrt2 + 1e-12);
      const Vector g1 = pi.probs(0, a) * score(pi, 0, a);
      const Vector g2 = pi2.probs(0, a) * score(pi2, 0, a);
      EXPECT_LE((g1 - g2).norm(), 3.0 * dist + 1e-12);
    }
  }
}
