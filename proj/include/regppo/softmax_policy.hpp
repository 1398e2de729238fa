#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace regppo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Softmax logits theta(s, a), one row per state.
struct PolicyParams {
  Matrix theta;

  int num_states() const { return static_cast<int>(theta.rows()); }
  int num_actions() const { return static_cast<int>(theta.cols()); }
};

/// Tabulated policy pi(a|s) together with log pi(a|s).
///
/// log_probs is computed from shifted logits, so it stays finite even when
/// probs underflows to zero in double precision.
struct PolicyTable {
  Matrix probs;
  Matrix log_probs;

  int num_states() const { return static_cast<int>(probs.rows()); }
  int num_actions() const { return static_cast<int>(probs.cols()); }

  double min_prob() const { return probs.minCoeff(); }
};

inline PolicyTable policy_from_params(const PolicyParams& params) {
  const Matrix& theta = params.theta;
  if (!theta.allFinite()) {
    throw std::invalid_argument("policy_from_params: non-finite logits");
  }
  PolicyTable table;
  table.probs.resize(theta.rows(), theta.cols());
  table.log_probs.resize(theta.rows(), theta.cols());
  for (Eigen::Index s = 0; s < theta.rows(); ++s) {
    const double shift = theta.row(s).maxCoeff();
    const Eigen::RowVectorXd shifted = theta.row(s).array() - shift;
    const double log_norm = std::log(shifted.array().exp().sum());
    table.log_probs.row(s) = shifted.array() - log_norm;
    table.probs.row(s) = table.log_probs.row(s).array().exp();
  }
  return table;
}

/// Logits whose softmax reproduces `table` (log-probabilities, zero-sum free).
inline PolicyParams params_from_policy(const PolicyTable& table) {
  return PolicyParams{table.log_probs};
}

/// Builds a table from a strictly positive row-stochastic matrix.
inline PolicyTable policy_from_probs(const Matrix& probs) {
  if ((probs.array() <= 0.0).any()) {
    throw std::invalid_argument("policy_from_probs: entries must be strictly positive");
  }
  PolicyTable table;
  table.probs = probs;
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    table.probs.row(s) /= probs.row(s).sum();
  }
  table.log_probs = table.probs.array().log();
  return table;
}

inline PolicyTable uniform_policy(int num_states, int num_actions) {
  return policy_from_params(PolicyParams{Matrix::Zero(num_states, num_actions)});
}

namespace detail {
inline void check_state(const PolicyTable& pi, int s) {
  if (s < 0 || s >= pi.num_states()) {
    throw std::out_of_range("state index " + std::to_string(s) + " out of range");
  }
}
inline void check_action(const PolicyTable& pi, int a) {
  if (a < 0 || a >= pi.num_actions()) {
    throw std::out_of_range("action index " + std::to_string(a) + " out of range");
  }
}
}  // namespace detail

/// Score function: gradient of log pi(a|s) w.r.t. the logits of state s,
/// which is delta_a - pi(.|s).
inline Vector score(const PolicyTable& pi, int s, int a) {
  detail::check_state(pi, s);
  detail::check_action(pi, a);
  Vector psi = -pi.probs.row(s).transpose();
  psi(a) += 1.0;
  return psi;
}

inline Vector score(const PolicyParams& params, int s, int a) {
  return score(policy_from_params(params), s, a);
}

/// H(theta_s) = diag(pi(s)) - pi(s) pi(s)^T, the Jacobian of the softmax map.
inline Matrix policy_jacobian(const PolicyTable& pi, int s) {
  detail::check_state(pi, s);
  const Vector p = pi.probs.row(s).transpose();
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

inline Matrix policy_jacobian(const PolicyParams& params, int s) {
  return policy_jacobian(policy_from_params(params), s);
}

}  // namespace regppo
