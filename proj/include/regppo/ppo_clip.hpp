#pragma once

#include "regppo/divergence.hpp"
#include "regppo/mdp.hpp"
#include "regppo/regularized_eval.hpp"
#include "regppo/softmax_policy.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace regppo {

enum class Regularizer { kForwardKl, kReverseKl };

inline DivergenceSpec divergence_of(Regularizer reg) {
  return reg == Regularizer::kForwardKl ? DivergenceSpec::forward_kl()
                                        : DivergenceSpec::reverse_kl();
}

struct ClipConfig {
  double eps_l = 0.2;
  double eps_h = 0.2;
  double lambda = 0.1;
  Regularizer regularizer = Regularizer::kForwardKl;
  int inner_steps = 10;       // K
  int outer_iterations = 100; // N
  double step_scale = 1.0;    // multiplies the budgeted S_max
  std::vector<double> weights;          // inner split of S_max; empty means uniform 1/K
  std::optional<double> fixed_step;     // theory-off: total inner step per outer iteration
  std::optional<Matrix> initial_theta;  // defaults to log pi_ref
  double init_noise = 0.0;              // uniform(-noise, noise) added to the initial logits
  std::optional<double> stop_grad_norm; // stop once ||grad V~(u)|| at the anchor is this small
};

inline void validate_config(const ClipConfig& c) {
  if (!(c.eps_l > 0.0 && c.eps_l < 1.0)) throw std::invalid_argument("eps_l must lie in (0, 1)");
  if (!(c.eps_h > 0.0)) throw std::invalid_argument("eps_h must be positive");
  if (!(c.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (c.inner_steps < 1) throw std::invalid_argument("inner steps K must be >= 1");
  if (c.outer_iterations < 1) throw std::invalid_argument("outer iterations N must be >= 1");
  if (!(c.step_scale > 0.0)) throw std::invalid_argument("step scale must be positive");
  if (!c.weights.empty()) {
    if (static_cast<int>(c.weights.size()) != c.inner_steps) {
      throw std::invalid_argument("need one inner weight per inner step");
    }
    for (double w : c.weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("inner weights must be non-negative");
    }
    const double total = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("inner weights must sum to 1");
  }
  if (c.fixed_step && !(*c.fixed_step > 0.0)) throw std::invalid_argument("fixed step must be positive");
  if (!(c.init_noise >= 0.0)) throw std::invalid_argument("init noise must be non-negative");
}

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Non-clip region N = {A~ >= 0, r <= 1+eps_h} u {A~ < 0, r >= 1-eps_l}.
inline Mask clip_regions(const Matrix& a_tilde, const Matrix& ratio, double eps_l, double eps_h) {
  if (a_tilde.rows() != ratio.rows() || a_tilde.cols() != ratio.cols()) {
    throw std::invalid_argument("clip_regions: table shapes differ");
  }
  Mask keep(a_tilde.rows(), a_tilde.cols());
  for (Eigen::Index s = 0; s < a_tilde.rows(); ++s) {
    for (Eigen::Index a = 0; a < a_tilde.cols(); ++a) {
      const double adv = a_tilde(s, a);
      const double r = ratio(s, a);
      keep(s, a) = (adv >= 0.0 && r <= 1.0 + eps_h) || (adv < 0.0 && r >= 1.0 - eps_l);
    }
  }
  return keep;
}

/// Quantities frozen at theta_{n,1} for the whole inner loop.
struct Anchor {
  PolicyTable pi;
  Vector d_u;
  Matrix a_tilde;
  double gamma = 0.0;

  static Anchor from(const RegularizedQuantities& q) { return {q.pi, q.d_u, q.a_tilde, q.gamma}; }
};

/// Surrogate gradient at theta_k. Optionally reports the non-clip mask used.
inline Matrix surrogate_gradient(const PolicyParams& theta_k, const Anchor& anchor,
                                 const PolicyTable& pi_ref, const ClipConfig& config,
                                 Mask* non_clip = nullptr) {
  const int S = anchor.pi.num_states();
  const int A = anchor.pi.num_actions();
  if (theta_k.num_states() != S || theta_k.num_actions() != A || anchor.d_u.size() != S ||
      anchor.a_tilde.rows() != S || anchor.a_tilde.cols() != A) {
    throw std::invalid_argument("surrogate_gradient: anchor and theta dimensions differ");
  }
  const PolicyTable pi_k = policy_from_params(theta_k);
  const Matrix ratio = (pi_k.log_probs - anchor.pi.log_probs).array().exp();
  const Mask keep = clip_regions(anchor.a_tilde, ratio, config.eps_l, config.eps_h);
  if (non_clip != nullptr) *non_clip = keep;

  Matrix g(S, A);
  Eigen::RowVectorXd coeff(A);
  for (int s = 0; s < S; ++s) {
    // coeff(a) = pi_{n,1}(a|s) [1_N r A~ + regularizer term]; note pi_{n,1} r = pi_k.
    for (int a = 0; a < A; ++a) {
      const double clipped = keep(s, a) ? pi_k.probs(s, a) * anchor.a_tilde(s, a) : 0.0;
      const double reg =
          config.regularizer == Regularizer::kForwardKl
              ? config.lambda * pi_ref.probs(s, a)
              : -config.lambda * pi_k.probs(s, a) * (pi_k.log_probs(s, a) - pi_ref.log_probs(s, a));
      coeff(a) = clipped + reg;
    }
    // sum_a coeff(a) psi_k(s, a) with psi_k = delta_a - pi_k(s).
    g.row(s) = (anchor.d_u(s) / (1.0 - anchor.gamma)) * (coeff - coeff.sum() * pi_k.probs.row(s));
  }
  return g;
}

/// One row per outer iteration, recorded at the anchor theta_{n,1}.
struct IterateLog {
  int n = 0;
  double value_u = 0.0;
  double value_rho = 0.0;
  double grad_norm = 0.0;
  std::optional<double> delta_n;
  double min_policy = 0.0;
  double s_max_n = 0.0;
  double clip_fraction = 0.0;  // d*pi-weighted clipped mass, averaged over inner steps

  // Audit fields.
  double anchor_error = 0.0;         // ||g_{n,1} - grad||_inf
  double max_inexact_ratio = 0.0;    // max_k ||g_{n,k} - grad|| / ||grad||
  double max_inexact_excess = 0.0;   // max_k ||g_{n,k} - grad|| - C_e/(1-gamma) ||Delta_{n,k}||
  double min_policy_inner = 0.0;     // min over inner iterates of min pi_{n,k}
  double max_abs_advantage = 0.0;    // max |A~| at the anchor
  double c_e = 0.0;
};

/// Everything an observer sees at inner step k of outer iteration n.
struct InnerStepView {
  int n;
  int k;
  const PolicyParams& theta_k;
  const Anchor& anchor;
  const Matrix& surrogate;
  const Matrix& exact_anchor_gradient;
  double eta;
};

struct RunResult {
  PolicyParams theta;
  std::vector<IterateLog> log;
  std::optional<StepBudget> forward_budget;  // constant over the run for forward KL
};

using InnerObserver = std::function<void(const InnerStepView&)>;

/// Double-loop PPO-Clip: K inner ascent steps on the clipped surrogate per outer iteration,
/// re-anchoring at theta_{n+1,1} = theta_{n,K+1}.
///
/// `v_star_u` enables the delta_n column; `seed` drives the optional init noise.
inline RunResult run(const Mdp& mdp, const PolicyTable& pi_ref, const Vector& u, const Vector& rho,
                     const ClipConfig& config, std::uint64_t seed = 0,
                     std::optional<double> v_star_u = std::nullopt,
                     const InnerObserver& observer = {}) {
  validate_config(config);
  detail::check_reference(mdp, pi_ref);
  detail::check_vector_size(mdp, u, "u");
  detail::check_vector_size(mdp, rho, "rho");
  const DivergenceSpec spec = divergence_of(config.regularizer);
  const int K = config.inner_steps;
  const double gamma = mdp.gamma;

  PolicyParams theta{config.initial_theta ? *config.initial_theta : pi_ref.log_probs};
  if (theta.num_states() != mdp.num_states || theta.num_actions() != mdp.num_actions) {
    throw std::invalid_argument("initial theta has wrong dimensions");
  }
  if (config.init_noise > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-config.init_noise, config.init_noise);
    for (Eigen::Index i = 0; i < theta.theta.size(); ++i) theta.theta.data()[i] += noise(rng);
  }

  std::vector<double> weights = config.weights;
  if (weights.empty()) weights.assign(K, 1.0 / K);

  RunResult result;
  if (config.regularizer == Regularizer::kForwardKl) {
    const double v0 = evaluate(mdp, theta, pi_ref, spec, config.lambda, u).value(u);
    result.forward_budget =
        step_budget_forward_kl(mdp, pi_ref, config.lambda, u, config.eps_l, config.eps_h, v0);
  }

  for (int n = 1; n <= config.outer_iterations; ++n) {
    if (!theta.theta.allFinite()) {
      throw std::runtime_error("non-finite logits at outer iteration " + std::to_string(n));
    }
    const RegularizedQuantities q = evaluate(mdp, theta, pi_ref, spec, config.lambda, u);
    const Matrix grad = exact_gradient(q);
    const Anchor anchor = Anchor::from(q);

    const StepBudget budget =
        config.regularizer == Regularizer::kForwardKl
            ? *result.forward_budget
            : step_budget_reverse_kl(mdp, pi_ref, config.lambda, q.pi, config.eps_l, config.eps_h);
    const double s_max = config.fixed_step ? *config.fixed_step : config.step_scale * budget.s_max;

    IterateLog row;
    row.n = n;
    row.value_u = q.value(u);
    row.value_rho = q.value(rho);
    row.grad_norm = grad.norm();
    if (v_star_u) row.delta_n = *v_star_u - row.value_u;
    row.min_policy = q.pi.min_prob();
    row.min_policy_inner = row.min_policy;
    row.s_max_n = s_max;
    row.max_abs_advantage = q.a_tilde.cwiseAbs().maxCoeff();
    row.c_e = budget.c_e;

    const bool stop_now = config.stop_grad_norm && row.grad_norm <= *config.stop_grad_norm;
    if (stop_now) {
      result.log.push_back(row);
      break;
    }

    const PolicyParams theta_anchor = theta;
    double clipped_mass = 0.0;
    Mask keep;
    for (int k = 1; k <= K; ++k) {
      const Matrix g = surrogate_gradient(theta, anchor, pi_ref, config, &keep);
      const double err = (g - grad).norm();
      if (k == 1) row.anchor_error = (g - grad).cwiseAbs().maxCoeff();
      if (row.grad_norm > 0.0) row.max_inexact_ratio = std::max(row.max_inexact_ratio, err / row.grad_norm);
      const double drift = (theta.theta - theta_anchor.theta).norm();
      row.max_inexact_excess =
          std::max(row.max_inexact_excess, err - budget.c_e / (1.0 - gamma) * drift);
      for (int s = 0; s < mdp.num_states; ++s) {
        for (int a = 0; a < mdp.num_actions; ++a) {
          if (!keep(s, a)) clipped_mass += q.d_u(s) * q.pi.probs(s, a);
        }
      }

      const double eta = weights[k - 1] * s_max;
      if (observer) observer(InnerStepView{n, k, theta, anchor, g, grad, eta});
      theta.theta += eta * g;
      if (!theta.theta.allFinite()) {
        throw std::runtime_error("non-finite logits at outer iteration " + std::to_string(n) +
                                 ", inner step " + std::to_string(k));
      }
      row.min_policy_inner = std::min(row.min_policy_inner, policy_from_params(theta).min_prob());
    }
    row.clip_fraction = clipped_mass / K;
    result.log.push_back(row);
  }
  result.theta = theta;
  return result;
}

}  // namespace regppo
