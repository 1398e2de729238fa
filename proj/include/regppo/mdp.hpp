#pragma once

#include "regppo/softmax_policy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace regppo {

/// Finite discounted MDP (S, A, P, r, gamma).
///
/// Transitions are stored densely with one row per state-action pair:
/// row `s * num_actions + a` holds P(. | s, a).
struct Mdp {
  int num_states = 0;
  int num_actions = 0;
  Matrix transition;  // (S*A) x S
  Matrix reward;      // S x A
  double gamma = 0.0;
  double r_max = 0.0;

  Eigen::Index row_index(int s, int a) const {
    return static_cast<Eigen::Index>(s) * num_actions + a;
  }
  double p(int s, int a, int next) const { return transition(row_index(s, a), next); }
  auto next_state_row(int s, int a) const { return transition.row(row_index(s, a)); }
};

enum class DistributionRole { kGradient, kReporting };

/// A start-state distribution: `u` when evaluating gradients, `rho` when reporting.
struct InitialDistribution {
  Vector weights;
  DistributionRole role = DistributionRole::kGradient;

  double min_weight() const { return weights.minCoeff(); }
};

inline InitialDistribution make_distribution(Vector weights, DistributionRole role) {
  if (weights.size() == 0) throw std::invalid_argument("initial distribution is empty");
  if ((weights.array() < 0.0).any()) {
    throw std::invalid_argument("initial distribution has negative entries");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("initial distribution does not sum to 1");
  }
  // An explorative start needs full support.
  if (role == DistributionRole::kGradient && weights.minCoeff() <= 0.0) {
    throw std::invalid_argument("gradient distribution u must be strictly positive");
  }
  return InitialDistribution{std::move(weights), role};
}

inline InitialDistribution uniform_distribution(int num_states,
                                                DistributionRole role = DistributionRole::kGradient) {
  return make_distribution(Vector::Constant(num_states, 1.0 / num_states), role);
}

struct Violation {
  std::string message;
  int state = -1;
  int action = -1;
};

inline std::string to_string(const Violation& v) {
  std::ostringstream out;
  out << v.message;
  if (v.state >= 0) out << " at (s=" << v.state;
  if (v.action >= 0) out << ", a=" << v.action;
  if (v.state >= 0) out << ")";
  return out.str();
}

/// Lists every violated invariant. An empty result means the MDP is valid.
inline std::vector<Violation> validate_mdp(const Mdp& mdp) {
  std::vector<Violation> report;
  if (mdp.num_states < 1) report.push_back({"num_states must be positive"});
  if (mdp.num_actions < 1) report.push_back({"num_actions must be positive"});
  if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) report.push_back({"gamma must lie in [0, 1)"});
  if (!(mdp.r_max >= 0.0)) report.push_back({"r_max must be non-negative"});
  if (!report.empty()) return report;

  const Eigen::Index rows = static_cast<Eigen::Index>(mdp.num_states) * mdp.num_actions;
  if (mdp.transition.rows() != rows || mdp.transition.cols() != mdp.num_states) {
    report.push_back({"transition tensor has wrong dimensions"});
  }
  if (mdp.reward.rows() != mdp.num_states || mdp.reward.cols() != mdp.num_actions) {
    report.push_back({"reward table has wrong dimensions"});
  }
  if (!report.empty()) return report;

  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const auto row = mdp.next_state_row(s, a);
      if (!row.allFinite() || (row.array() < 0.0).any()) {
        report.push_back({"transition entry negative or non-finite", s, a});
      }
      if (std::abs(row.sum() - 1.0) > 1e-12) {
        report.push_back({"transition row does not sum to 1", s, a});
      }
      const double r = mdp.reward(s, a);
      if (!(r >= 0.0 && r <= mdp.r_max)) {
        report.push_back({"reward out of [0,r_max]", s, a});
      }
    }
  }
  return report;
}

namespace detail {
inline void check_policy_shape(const Mdp& mdp, const PolicyTable& pi) {
  if (pi.num_states() != mdp.num_states || pi.num_actions() != mdp.num_actions) {
    throw std::invalid_argument("policy dimensions do not match the MDP");
  }
}
inline void check_vector_size(const Mdp& mdp, const Vector& v, const char* what) {
  if (v.size() != mdp.num_states) {
    throw std::invalid_argument(std::string(what) + " has wrong length");
  }
}
}  // namespace detail

/// [P_pi](s, s') = sum_a pi(a|s) P(s'|s,a).
inline Matrix transition_under_policy(const Mdp& mdp, const PolicyTable& pi) {
  detail::check_policy_shape(mdp, pi);
  Matrix p_pi = Matrix::Zero(mdp.num_states, mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      p_pi.row(s) += pi.probs(s, a) * mdp.next_state_row(s, a);
    }
  }
  return p_pi;
}

/// Expected immediate reward under the policy, per state.
inline Vector reward_under_policy(const Mdp& mdp, const PolicyTable& pi) {
  detail::check_policy_shape(mdp, pi);
  return pi.probs.cwiseProduct(mdp.reward).rowwise().sum();
}

/// LU factorization of (I - gamma P_pi). Solving against it applies the
/// accumulated visitation matrix M = (I - gamma P_pi)^{-1}.
class VisitationSolver {
 public:
  VisitationSolver(const Mdp& mdp, const PolicyTable& pi)
      : gamma_(mdp.gamma),
        lu_(Matrix::Identity(mdp.num_states, mdp.num_states) -
            mdp.gamma * transition_under_policy(mdp, pi)) {}

  /// M v.
  Vector apply(const Vector& v) const { return checked(lu_.solve(v)); }

  /// M^T v.
  Vector apply_transpose(const Vector& v) const { return checked(lu_.transpose().solve(v)); }

  /// d_u^T = (1 - gamma) u^T M.
  Vector occupancy(const Vector& u) const { return (1.0 - gamma_) * apply_transpose(u); }

 private:
  static Vector checked(Vector x) {
    if (!x.allFinite()) throw std::runtime_error("visitation solve produced non-finite values");
    return x;
  }

  double gamma_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline Vector discounted_state_distribution(const Mdp& mdp, const PolicyTable& pi,
                                            const InitialDistribution& start) {
  detail::check_vector_size(mdp, start.weights, "initial distribution");
  return VisitationSolver(mdp, pi).occupancy(start.weights);
}

inline Vector accumulated_visitation_apply(const Mdp& mdp, const PolicyTable& pi,
                                           const Vector& v) {
  detail::check_vector_size(mdp, v, "vector");
  return VisitationSolver(mdp, pi).apply(v);
}

/// Random MDP with strictly positive transitions and uniform rewards in [0, r_max].
/// The same seed and dimensions always produce the same instance.
inline Mdp random_mdp(std::uint64_t seed, int num_states, int num_actions, double r_max,
                      double gamma) {
  if (num_states < 1 || num_actions < 1) {
    throw std::invalid_argument("random_mdp: dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Mdp mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.gamma = gamma;
  mdp.r_max = r_max;
  mdp.transition.resize(static_cast<Eigen::Index>(num_states) * num_actions, num_states);
  mdp.reward.resize(num_states, num_actions);

  const double floor = 1e-3 / num_states;
  for (Eigen::Index row = 0; row < mdp.transition.rows(); ++row) {
    for (int next = 0; next < num_states; ++next) {
      mdp.transition(row, next) = 1.0 - unit(rng);  // (0, 1]
    }
    mdp.transition.row(row) /= mdp.transition.row(row).sum();
    mdp.transition.row(row) = mdp.transition.row(row).cwiseMax(floor);
    mdp.transition.row(row) /= mdp.transition.row(row).sum();
  }
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) mdp.reward(s, a) = r_max * unit(rng);
  }
  return mdp;
}

}  // namespace regppo
