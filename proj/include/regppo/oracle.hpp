#pragma once

#include "regppo/divergence.hpp"
#include "regppo/mdp.hpp"
#include "regppo/softmax_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace regppo {

struct OracleResult {
  PolicyTable pi_star;
  Vector v_star;
  double residual = 0.0;  // sup-norm Bellman residual at v_star
  long iterations = 0;
  long inner_fallbacks = 0;  // general VI only: states finished by dual bisection
};

struct OracleOptions {
  double tol = 1e-10;
  long max_iterations = 1'000'000;
};

namespace detail {
/// Q(s, a) = r(s, a) + gamma sum_s' P(s'|s,a) V(s').
inline Matrix one_step_lookahead(const Mdp& mdp, const Vector& v) {
  const Vector next = mdp.transition * v;
  Matrix q(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      q(s, a) = mdp.reward(s, a) + mdp.gamma * next(mdp.row_index(s, a));
    }
  }
  return q;
}

inline PolicyTable table_from_log_probs(Matrix log_probs) {
  PolicyTable t;
  t.probs = log_probs.array().exp();
  t.log_probs = std::move(log_probs);
  return t;
}
}  // namespace detail

/// Plain value iteration for the unregularized problem; returns V*.
inline Vector unregularized_value_iteration(const Mdp& mdp, const OracleOptions& opt = {}) {
  Vector v = Vector::Zero(mdp.num_states);
  for (long it = 0; it < opt.max_iterations; ++it) {
    const Vector next = detail::one_step_lookahead(mdp, v).rowwise().maxCoeff();
    const double res = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (res <= opt.tol) return v;
  }
  throw std::runtime_error("unregularized value iteration did not converge");
}

/// Soft value iteration for the reverse-KL regularizer:
/// T[V](s) = lambda log sum_a pi_ref(a|s) exp((r(s,a) + gamma P V)/lambda).
inline OracleResult soft_value_iteration(const Mdp& mdp, const PolicyTable& pi_ref, double lambda,
                                         const OracleOptions& opt = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("soft value iteration needs lambda > 0");
  detail::check_policy_shape(mdp, pi_ref);
  const int S = mdp.num_states;

  Vector v = Vector::Zero(S);
  Matrix logits(S, mdp.num_actions);
  Vector log_norm(S);
  auto apply = [&](const Vector& x) {
    logits = pi_ref.log_probs + detail::one_step_lookahead(mdp, x) / lambda;
    for (int s = 0; s < S; ++s) {
      const double shift = logits.row(s).maxCoeff();
      log_norm(s) = shift + std::log((logits.row(s).array() - shift).exp().sum());
    }
    return Vector(lambda * log_norm);
  };

  for (long it = 1; it <= opt.max_iterations; ++it) {
    const Vector next = apply(v);
    const double res = (next - v).cwiseAbs().maxCoeff();
    if (res <= opt.tol) {
      // logits/log_norm currently hold the maximizer at v.
      Matrix log_pi = logits.colwise() - log_norm;
      return {detail::table_from_log_probs(std::move(log_pi)), v, res, it, 0};
    }
    v = next;
  }
  throw std::runtime_error("soft value iteration did not converge");
}

// ---------------------------------------------------------------------------
// Per-state maximization of F(p) = <p, Q> - lambda D_f(p, q) over the simplex.

struct SimplexMaxResult {
  Vector p;
  double value = 0.0;
  double mapping_norm = 0.0;  // gradient-mapping norm at exit (projected gradient only)
  long iterations = 0;
  bool converged = false;
};

/// Euclidean projection of x onto {p : p >= floor, sum p = 1}.
inline Vector project_clipped_simplex(const Vector& x, double floor) {
  const Eigen::Index n = x.size();
  if (floor * static_cast<double>(n) >= 1.0) throw std::invalid_argument("simplex floor too large");
  // Shift to the standard simplex of mass 1 - n*floor, then sort-based projection.
  const double mass = 1.0 - floor * static_cast<double>(n);
  std::vector<double> y(x.data(), x.data() + n);
  for (double& e : y) e -= floor;
  std::vector<double> sorted = y;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - mass) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
  }
  Vector p(n);
  for (Eigen::Index k = 0; k < n; ++k) p(k) = std::max(y[k] - tau, 0.0) + floor;
  return p;
}

namespace detail {
inline double simplex_objective(const DivergenceSpec& spec, double lambda, const Vector& q_row,
                                const Vector& ref, const Vector& p) {
  return q_row.dot(p) - lambda * divergence_value(spec, p, ref);
}

inline Vector simplex_gradient(const DivergenceSpec& spec, double lambda, const Vector& q_row,
                               const Vector& ref, const Vector& p) {
  Vector g(p.size());
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    g(a) = q_row(a) - lambda * f_eval(spec, p(a) / ref(a)).first;
  }
  return g;
}

/// (f')^{-1}(y), or 0 when y is at or below f'(0+), or +inf above sup f'.
inline double inverse_f_prime(const DivergenceSpec& spec, double y) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (spec.kind) {
    case DivergenceKind::kAlpha: {
      const double a = spec.alpha;
      const double base = 1.0 - a * y;
      return base > 0.0 ? std::pow(base, -1.0 / a) : inf;
    }
    case DivergenceKind::kReverseKl: return std::exp(y - 1.0);
    case DivergenceKind::kForwardKl: return y < 0.0 ? -1.0 / y : inf;
    case DivergenceKind::kJensenShannon: {
      const double e = std::exp(y);
      return e < 2.0 ? e / (2.0 - e) : inf;
    }
    case DivergenceKind::kChiSquared: return std::max(0.0, 1.0 + y / 2.0);
  }
  throw std::logic_error("inverse_f_prime: unhandled divergence kind");
}
}  // namespace detail

/// Exact maximizer through the KKT conditions: p_a = q_a (f')^{-1}((Q_a - nu)/lambda),
/// with the multiplier nu found by bisection on sum_a p_a(nu) = 1.
inline SimplexMaxResult simplex_max_dual_bisection(const DivergenceSpec& spec, double lambda,
                                                   const Vector& q_row, const Vector& ref) {
  const double fp_one = f_eval(spec, 1.0).first;
  double lo = (q_row.array() - lambda * fp_one).minCoeff();  // every x >= 1: mass >= 1
  double hi = (q_row.array() - lambda * fp_one).maxCoeff();  // every x <= 1: mass <= 1
  auto weights = [&](double nu) {
    Vector p(q_row.size());
    for (Eigen::Index a = 0; a < p.size(); ++a) {
      p(a) = ref(a) * detail::inverse_f_prime(spec, (q_row(a) - nu) / lambda);
    }
    return p;
  };
  SimplexMaxResult out;
  for (; out.iterations < 400; ++out.iterations) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    if (weights(mid).sum() >= 1.0) lo = mid;
    else hi = mid;
  }
  Vector p = weights(hi);  // finite by construction
  p /= p.sum();
  out.p = std::move(p);
  out.value = detail::simplex_objective(spec, lambda, q_row, ref, out.p.cwiseMax(0.0));
  out.converged = true;
  return out;
}

/// Projected gradient ascent on the clipped simplex, backtracking on a local
/// curvature estimate. Stops once the gradient-mapping norm drops below `tol`.
inline SimplexMaxResult simplex_max_projected_gradient(const DivergenceSpec& spec, double lambda,
                                                       const Vector& q_row, const Vector& ref,
                                                       const Vector& warm_start, double tol,
                                                       long max_iterations = 5000,
                                                       double floor = 1e-12) {
  const double m_est = curvature_floor(spec, ref.transpose());
  double step = 1.0 / (lambda * m_est + q_row.cwiseAbs().maxCoeff() + 1e-300);

  SimplexMaxResult out;
  Vector p = project_clipped_simplex(warm_start, floor);
  Vector grad = detail::simplex_gradient(spec, lambda, q_row, ref, p);
  for (; out.iterations < max_iterations; ++out.iterations) {
    Vector candidate;
    Vector cand_grad;
    for (int halvings = 0;; ++halvings) {
      candidate = project_clipped_simplex(p + step * grad, floor);
      cand_grad = detail::simplex_gradient(spec, lambda, q_row, ref, candidate);
      const Vector dp = candidate - p;
      const double dp2 = dp.squaredNorm();
      // Accept when the local curvature along dp is at most 1/step.
      if (dp2 == 0.0 || -(cand_grad - grad).dot(dp) <= dp2 / step || halvings > 200) break;
      step *= 0.5;
    }
    out.mapping_norm = (candidate - p).norm() / step;
    p = std::move(candidate);
    grad = std::move(cand_grad);
    if (out.mapping_norm <= tol) {
      out.converged = true;
      break;
    }
    step *= 1.25;
  }
  out.p = std::move(p);
  out.value = detail::simplex_objective(spec, lambda, q_row, ref, out.p);
  return out;
}

/// Value iteration with Ṽ(s) = max_p <p, r(s,.) + gamma P V> - lambda D_f(p, pi_ref(s)).
/// Each inner maximization runs projected gradient from the previous sweep's
/// maximizer; states where it stalls are finished with dual bisection.
inline OracleResult general_regularized_vi(const Mdp& mdp, const PolicyTable& pi_ref,
                                           const DivergenceSpec& spec, double lambda,
                                           const OracleOptions& opt = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("regularized value iteration needs lambda > 0");
  detail::check_policy_shape(mdp, pi_ref);
  if (!(pi_ref.min_prob() > 0.0)) throw std::invalid_argument("reference policy must be positive");
  const int S = mdp.num_states;
  const double inner_tol = opt.tol / 10.0;
  // Projected gradient crawls where f' is singular near the floor; bisection then finishes exactly.
  constexpr long kInnerIterations = 500;

  OracleResult out;
  Vector v = Vector::Zero(S);
  Matrix p_table = pi_ref.probs;
  Vector next(S);
  for (long it = 1; it <= opt.max_iterations; ++it) {
    const Matrix q = detail::one_step_lookahead(mdp, v);
    for (int s = 0; s < S; ++s) {
      const Vector q_row = q.row(s).transpose();
      const Vector ref = pi_ref.probs.row(s).transpose();
      SimplexMaxResult inner = simplex_max_projected_gradient(
          spec, lambda, q_row, ref, p_table.row(s).transpose(), inner_tol, kInnerIterations);
      if (!inner.converged) {
        inner = simplex_max_dual_bisection(spec, lambda, q_row, ref);
        ++out.inner_fallbacks;
      }
      if (!std::isfinite(inner.value)) {
        throw std::runtime_error("inner maximization failed at state " + std::to_string(s));
      }
      p_table.row(s) = inner.p.transpose();
      next(s) = inner.value;
    }
    const double res = (next - v).cwiseAbs().maxCoeff();
    if (res <= opt.tol) {
      // p_table holds the maximizers at v.
      Matrix floored = p_table.cwiseMax(std::numeric_limits<double>::min());
      for (int s = 0; s < S; ++s) floored.row(s) /= floored.row(s).sum();
      out.pi_star = detail::table_from_log_probs(floored.array().log());
      out.v_star = v;
      out.residual = res;
      out.iterations = it;
      return out;
    }
    v = next;
  }
  throw std::runtime_error("regularized value iteration did not converge");
}

}  // namespace regppo
