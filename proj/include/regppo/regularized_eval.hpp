#pragma once

#include "regppo/divergence.hpp"
#include "regppo/mdp.hpp"
#include "regppo/softmax_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

namespace regppo {

/// Everything the regularized objective exposes for one (policy, MDP, f, lambda, u).
struct RegularizedQuantities {
  PolicyTable pi;
  Vector v;          // V~ = V - lambda V_f
  Vector v_reward;   // V
  Vector v_reg;      // V_f
  Matrix q_tilde;    // r - lambda D_f(s) + gamma P V~
  Matrix a_tilde;    // Q~ - V~
  Vector d_u;        // discounted occupancy from u
  Matrix ratio;      // w = pi / pi_ref
  Matrix f_prime;    // f'(w)
  Vector div;        // D_f(pi(s), pi_ref(s))
  double lambda = 0.0;
  double gamma = 0.0;

  int num_states() const { return pi.num_states(); }
  int num_actions() const { return pi.num_actions(); }

  /// V~(dist) = sum_s dist(s) V~(s).
  double value(const Vector& dist) const { return dist.dot(v); }
};

namespace detail {
inline void check_reference(const Mdp& mdp, const PolicyTable& pi_ref) {
  check_policy_shape(mdp, pi_ref);
  if (!(pi_ref.min_prob() > 0.0)) {
    throw std::invalid_argument("reference policy must be strictly positive");
  }
}
}  // namespace detail

inline RegularizedQuantities evaluate(const Mdp& mdp, const PolicyTable& pi,
                                      const PolicyTable& pi_ref, const DivergenceSpec& spec,
                                      double lambda, const Vector& u) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  detail::check_policy_shape(mdp, pi);
  detail::check_reference(mdp, pi_ref);
  detail::check_vector_size(mdp, u, "initial distribution");

  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  RegularizedQuantities q;
  q.pi = pi;
  q.lambda = lambda;
  q.gamma = mdp.gamma;

  q.ratio.resize(S, A);
  q.f_prime.resize(S, A);
  q.div = Vector::Zero(S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double log_w = pi.log_probs(s, a) - pi_ref.log_probs(s, a);
      const FValues fv = f_eval_log(spec, log_w);
      q.ratio(s, a) = std::exp(log_w);
      q.f_prime(s, a) = fv.first;
      q.div(s) += pi_ref.probs(s, a) * fv.value;
    }
  }

  const VisitationSolver solver(mdp, pi);
  q.v_reward = solver.apply(reward_under_policy(mdp, pi));
  q.v_reg = solver.apply(q.div);
  q.v = q.v_reward - lambda * q.v_reg;
  q.d_u = solver.occupancy(u);

  const Vector next = mdp.transition * q.v;  // indexed by row_index(s, a)
  q.q_tilde.resize(S, A);
  q.a_tilde.resize(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      q.q_tilde(s, a) = mdp.reward(s, a) - lambda * q.div(s) + mdp.gamma * next(mdp.row_index(s, a));
      q.a_tilde(s, a) = q.q_tilde(s, a) - q.v(s);
    }
  }
  return q;
}

inline RegularizedQuantities evaluate(const Mdp& mdp, const PolicyParams& theta,
                                      const PolicyTable& pi_ref, const DivergenceSpec& spec,
                                      double lambda, const Vector& u) {
  return evaluate(mdp, policy_from_params(theta), pi_ref, spec, lambda, u);
}

/// dV~(u)/dtheta_sa = d_u(s)/(1-gamma) pi(a|s) [A~(s,a) - lambda (f'(w_sa) - sum_a' pi f'(w_sa'))].
inline Matrix exact_gradient(const RegularizedQuantities& q) {
  const int S = q.num_states();
  const int A = q.num_actions();
  Matrix g(S, A);
  for (int s = 0; s < S; ++s) {
    const double mean_fp = q.pi.probs.row(s).dot(q.f_prime.row(s));
    const double weight = q.d_u(s) / (1.0 - q.gamma);
    for (int a = 0; a < A; ++a) {
      const double inner = q.a_tilde(s, a) - q.lambda * (q.f_prime(s, a) - mean_fp);
      g(s, a) = weight * q.pi.probs(s, a) * inner;
    }
  }
  return g;
}

/// Same gradient, after checking that `q` was computed for `theta` and `lambda`.
inline Matrix exact_gradient(const RegularizedQuantities& q, const PolicyParams& theta,
                             double lambda) {
  if (theta.num_states() != q.num_states() || theta.num_actions() != q.num_actions()) {
    throw std::invalid_argument("exact_gradient: theta does not match the quantities");
  }
  const PolicyTable pi = policy_from_params(theta);
  if ((pi.probs - q.pi.probs).cwiseAbs().maxCoeff() > 1e-12 || lambda != q.lambda) {
    throw std::invalid_argument("exact_gradient: quantities were computed for another input");
  }
  return exact_gradient(q);
}

inline Matrix exact_gradient(const Mdp& mdp, const PolicyParams& theta, const PolicyTable& pi_ref,
                             const DivergenceSpec& spec, double lambda, const Vector& u) {
  return exact_gradient(evaluate(mdp, theta, pi_ref, spec, lambda, u));
}

/// Per-state form d_u(s)/(1-gamma) H(theta_s) (Q~(s,.) - lambda f'(w_s)).
inline Matrix exact_gradient_jacobian_form(const RegularizedQuantities& q) {
  Matrix g(q.num_states(), q.num_actions());
  for (int s = 0; s < q.num_states(); ++s) {
    const Vector inner = (q.q_tilde.row(s) - q.lambda * q.f_prime.row(s)).transpose();
    g.row(s) = (q.d_u(s) / (1.0 - q.gamma)) * (policy_jacobian(q.pi, s) * inner).transpose();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Smoothness

/// max_{s,a} |f(w_sa)| for the policy induced by theta.
inline double f_ratio_sup_norm(const DivergenceSpec& spec, const PolicyTable& pi,
                               const PolicyTable& pi_ref) {
  double out = 0.0;
  for (int s = 0; s < pi.num_states(); ++s) {
    for (int a = 0; a < pi.num_actions(); ++a) {
      const double log_w = pi.log_probs(s, a) - pi_ref.log_probs(s, a);
      out = std::max(out, std::abs(f_eval_log(spec, log_w).value));
    }
  }
  return out;
}

/// sup over the segment [theta, theta'] of ||f(w)||_inf, taken on a uniform grid
/// that includes both endpoints.
inline double segment_f_sup(const DivergenceSpec& spec, const PolicyParams& theta,
                            const PolicyParams& theta_prime, const PolicyTable& pi_ref,
                            int grid_points = 33) {
  if (grid_points < 2) throw std::invalid_argument("segment grid needs at least 2 points");
  double out = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double t = static_cast<double>(i) / (grid_points - 1);
    const PolicyParams mid{(1.0 - t) * theta.theta + t * theta_prime.theta};
    out = std::max(out, f_ratio_sup_norm(spec, policy_from_params(mid), pi_ref));
  }
  return out;
}

/// L_f(theta, theta') = 8/(1-gamma)^3 (r_max + lambda sup||f(w)|| + lambda (1-gamma)(c_f1 + c_f2/2)).
inline double smoothness_factor(const PolicyParams& theta, const PolicyParams& theta_prime,
                                const DivergenceSpec& spec, double lambda,
                                const DivergenceConstants& constants, const Mdp& mdp,
                                const PolicyTable& pi_ref, int grid_points = 33) {
  const double g = mdp.gamma;
  const double sup_f =
      lambda > 0.0 ? segment_f_sup(spec, theta, theta_prime, pi_ref, grid_points) : 0.0;
  return 8.0 / std::pow(1.0 - g, 3) *
         (mdp.r_max + lambda * sup_f +
          lambda * (1.0 - g) * (constants.c_f1 + constants.c_f2 / 2.0));
}

/// Closed-form forward-KL factor 8 (r_max + lambda max{||log pi||, ||log pi'||}) / (1-gamma)^3.
inline double smoothness_forward_kl(const PolicyParams& theta, const PolicyParams& theta_prime,
                                    double lambda, const Mdp& mdp) {
  const double a = policy_from_params(theta).log_probs.cwiseAbs().maxCoeff();
  const double b = policy_from_params(theta_prime).log_probs.cwiseAbs().maxCoeff();
  return 8.0 * (mdp.r_max + lambda * std::max(a, b)) / std::pow(1.0 - mdp.gamma, 3);
}

/// Uniform reverse-KL constant
/// L_R = 8 r_max/(1-gamma)^3 + lambda/(1-gamma)^2 (2 log|A| + 4 ||log pi_ref|| + 2).
inline double smoothness_reverse_kl(const Mdp& mdp, const PolicyTable& pi_ref, double lambda) {
  const double g = mdp.gamma;
  const double log_ref = pi_ref.log_probs.cwiseAbs().maxCoeff();
  return 8.0 * mdp.r_max / std::pow(1.0 - g, 3) +
         lambda / std::pow(1.0 - g, 2) *
             (2.0 * std::log(static_cast<double>(mdp.num_actions)) + 4.0 * log_ref + 2.0);
}

// ---------------------------------------------------------------------------
// Lojasiewicz inequality

struct LojasiewiczSides {
  double lhs = 0.0;  // ||grad V~(u)||^2
  double rhs = 0.0;
  double gap = 0.0;  // V~*(rho) - V~(rho)
  Matrix z;          // projected vectors Z(s), one row per state
};

/// Z(s) = (I - 11^T/|A|)(Q~(s,.) - lambda f'(w_s)).
inline Matrix projected_z(const RegularizedQuantities& q) {
  Matrix z = q.q_tilde - q.lambda * q.f_prime;
  for (int s = 0; s < q.num_states(); ++s) z.row(s).array() -= z.row(s).mean();
  return z;
}

inline LojasiewiczSides lojasiewicz_bound(const PolicyParams& theta, const DivergenceSpec& spec,
                                          double lambda, const Mdp& mdp,
                                          const PolicyTable& pi_ref, const Vector& u,
                                          const PolicyTable& pi_star, const Vector& rho) {
  const RegularizedQuantities q = evaluate(mdp, theta, pi_ref, spec, lambda, u);
  const RegularizedQuantities q_star = evaluate(mdp, pi_star, pi_ref, spec, lambda, rho);
  const Vector d_star_rho = q_star.d_u;

  const double c_u = u.minCoeff();
  const double c_m = table1_constants(spec, pi_ref).c_m();
  const double min_pi = q.pi.min_prob();
  const double ratio_sup = (d_star_rho.array() / q.d_u.array()).maxCoeff();

  LojasiewiczSides out;
  out.lhs = exact_gradient(q).squaredNorm();
  out.gap = q_star.value(rho) - q.value(rho);
  out.rhs = 2.0 * lambda * c_u * c_m * min_pi * min_pi / ratio_sup * out.gap;
  out.z = projected_z(q);
  if (out.rhs < -1e-10) {
    throw std::logic_error("lojasiewicz_bound: supplied pi_star is not optimal");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step budgets

/// Constants that size one outer iteration's total inner step S_max.
///
/// Quantities that only exist for one regularizer are left empty for the other.
/// Log-scale copies are kept because the a-priori floors underflow easily.
struct StepBudget {
  double a_max = 0.0;
  double c_e = 0.0;
  double smooth_l = 0.0;
  double s_max = 0.0;
  std::vector<double> caps;
  std::optional<double> c_a;
  double c_pi_floor = 0.0;
  double log_c_pi_floor = 0.0;
  std::optional<double> v0;
  std::optional<double> lojasiewicz_c;
  std::optional<double> log_lojasiewicz_c;
};

namespace detail {
inline double clip_log_factor(double eps_l, double eps_h) {
  if (!(eps_l > 0.0 && eps_l < 1.0)) throw std::invalid_argument("eps_l must lie in (0, 1)");
  if (!(eps_h > 0.0)) throw std::invalid_argument("eps_h must be positive");
  return 1.0 / std::log1p(eps_h) - 1.0 / std::log1p(-eps_l);
}

inline double min_of(const std::vector<double>& caps) {
  return *std::min_element(caps.begin(), caps.end());
}
}  // namespace detail

/// ||d_u^{pi*} / u||_inf.
inline double occupancy_mismatch(const Mdp& mdp, const PolicyTable& pi_star, const Vector& u) {
  return (discounted_state_distribution(mdp, pi_star, make_distribution(u, DistributionRole::kGradient))
              .array() /
          u.array())
      .maxCoeff();
}

/// Forward-KL budget. `v0` defaults to V~^{pi_ref}(u); `pi_star` enables the linear-rate constant.
inline StepBudget step_budget_forward_kl(const Mdp& mdp, const PolicyTable& pi_ref, double lambda,
                                         const Vector& u, double eps_l, double eps_h,
                                         std::optional<double> v0 = std::nullopt,
                                         const PolicyTable* pi_star = nullptr) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  detail::check_reference(mdp, pi_ref);
  const double clip_factor = detail::clip_log_factor(eps_l, eps_h);
  const double g = mdp.gamma;
  const double c_u = u.minCoeff();
  const double c_ref = pi_ref.min_prob();
  const double log_a = std::log(static_cast<double>(mdp.num_actions));
  if (!(c_u > 0.0)) throw std::invalid_argument("u must be strictly positive");

  StepBudget b;
  b.v0 = v0 ? *v0
            : evaluate(mdp, pi_ref, pi_ref, DivergenceSpec::forward_kl(), lambda, u).value(u);
  const double v_top = mdp.r_max / (1.0 - g);
  if (*b.v0 > v_top) throw std::invalid_argument("v0 exceeds r_max/(1-gamma)");

  const double c_a = (v_top - *b.v0) / (lambda * c_u);
  b.c_a = c_a;
  b.log_c_pi_floor = (-c_a - log_a) / c_ref;
  b.c_pi_floor = std::exp(b.log_c_pi_floor);
  b.a_max = (mdp.r_max + lambda * c_a) / (1.0 - g);
  b.c_e = std::numbers::sqrt2 * b.a_max * clip_factor + 3.0 * b.a_max + lambda;
  b.smooth_l =
      8.0 * (mdp.r_max + lambda * std::numbers::ln2 + lambda * (log_a + c_a) / c_ref) /
      std::pow(1.0 - g, 3);
  b.caps = {(1.0 - g) / (8.0 * b.c_e), (1.0 - g) * std::numbers::ln2 / (4.0 * b.a_max + 8.0 * lambda),
            1.0 / (4.0 * b.smooth_l)};
  b.s_max = detail::min_of(b.caps);

  if (pi_star != nullptr) {
    const double mismatch = occupancy_mismatch(mdp, *pi_star, u);
    b.log_lojasiewicz_c = std::log((1.0 - g) * lambda * b.s_max * c_u * c_ref / mismatch) +
                          2.0 * b.log_c_pi_floor;
    b.lojasiewicz_c = std::exp(*b.log_lojasiewicz_c);
  }
  return b;
}

/// Reverse-KL budget for the outer iteration anchored at pi_n1.
inline StepBudget step_budget_reverse_kl(const Mdp& mdp, const PolicyTable& pi_ref, double lambda,
                                         const PolicyTable& pi_n1, double eps_l, double eps_h) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  detail::check_reference(mdp, pi_ref);
  detail::check_policy_shape(mdp, pi_n1);
  const double clip_factor = detail::clip_log_factor(eps_l, eps_h);
  const double g = mdp.gamma;
  const double c_ref = pi_ref.min_prob();

  StepBudget b;
  b.a_max = (mdp.r_max - lambda * std::log(c_ref)) / (1.0 - g);
  const double log_ref_ratio = (pi_ref.log_probs - pi_n1.log_probs).cwiseAbs().maxCoeff();
  b.c_e = std::numbers::sqrt2 * b.a_max * clip_factor + 3.0 * b.a_max +
          3.0 * lambda * log_ref_ratio + 2.0 * lambda;
  b.smooth_l = smoothness_reverse_kl(mdp, pi_ref, lambda);
  b.caps = {(1.0 - g) / (8.0 * b.c_e), 1.0 / (4.0 * b.smooth_l)};
  b.s_max = detail::min_of(b.caps);
  b.log_c_pi_floor = pi_n1.log_probs.minCoeff();
  b.c_pi_floor = pi_n1.min_prob();
  return b;
}

}  // namespace regppo
