#pragma once

#include "regppo/softmax_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>

namespace regppo {

enum class DivergenceKind { kAlpha, kReverseKl, kForwardKl, kJensenShannon, kChiSquared };

/// One of the supported f-divergence generators. `alpha` is read only for kAlpha.
struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::kReverseKl;
  double alpha = 0.5;

  static DivergenceSpec alpha_divergence(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw std::invalid_argument("alpha-divergence requires alpha in (0, 1)");
    }
    return {DivergenceKind::kAlpha, alpha};
  }
  static DivergenceSpec reverse_kl() { return {DivergenceKind::kReverseKl}; }
  static DivergenceSpec forward_kl() { return {DivergenceKind::kForwardKl}; }
  static DivergenceSpec jensen_shannon() { return {DivergenceKind::kJensenShannon}; }
  static DivergenceSpec chi_squared() { return {DivergenceKind::kChiSquared}; }
};

inline std::string to_string(const DivergenceSpec& spec) {
  switch (spec.kind) {
    case DivergenceKind::kAlpha: {
      std::string a = std::to_string(spec.alpha);
      a.erase(a.find_last_not_of('0') + 1);
      if (!a.empty() && a.back() == '.') a.pop_back();
      return "alpha:" + a;
    }
    case DivergenceKind::kReverseKl: return "reverse-kl";
    case DivergenceKind::kForwardKl: return "forward-kl";
    case DivergenceKind::kJensenShannon: return "js";
    case DivergenceKind::kChiSquared: return "chi2";
  }
  return "unknown";
}

/// Parses the command-line spelling: alpha:<a>, reverse-kl, forward-kl, js, chi2.
inline DivergenceSpec parse_divergence(const std::string& text) {
  if (text == "reverse-kl") return DivergenceSpec::reverse_kl();
  if (text == "forward-kl") return DivergenceSpec::forward_kl();
  if (text == "js") return DivergenceSpec::jensen_shannon();
  if (text == "chi2") return DivergenceSpec::chi_squared();
  if (text.rfind("alpha:", 0) == 0) {
    std::size_t used = 0;
    const std::string number = text.substr(6);
    double alpha = 0.0;
    try {
      alpha = std::stod(number, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad alpha value in '" + text + "'");
    }
    if (used != number.size()) throw std::invalid_argument("bad alpha value in '" + text + "'");
    return DivergenceSpec::alpha_divergence(alpha);
  }
  throw std::invalid_argument("unknown divergence '" + text + "'");
}

/// f, f' and f'' at one point.
struct FValues {
  double value;
  double first;
  double second;
};

inline FValues f_eval(const DivergenceSpec& spec, double x) {
  if (!(x > 0.0)) throw std::domain_error("f_eval: x must be positive");
  switch (spec.kind) {
    case DivergenceKind::kAlpha: {
      const double a = spec.alpha;
      return {(std::pow(x, 1.0 - a) - (1.0 - a) * x - a) / (a * (a - 1.0)),
              (1.0 - std::pow(x, -a)) / a, std::pow(x, -a - 1.0)};
    }
    case DivergenceKind::kReverseKl:
      return {x * std::log(x), std::log(x) + 1.0, 1.0 / x};
    case DivergenceKind::kForwardKl:
      return {-std::log(x), -1.0 / x, 1.0 / (x * x)};
    case DivergenceKind::kJensenShannon:
      return {x * std::log(x) - (x + 1.0) * std::log((x + 1.0) / 2.0),
              std::log(2.0 * x / (x + 1.0)), 1.0 / (x * (x + 1.0))};
    case DivergenceKind::kChiSquared:
      return {(x - 1.0) * (x - 1.0), 2.0 * (x - 1.0), 2.0};
  }
  throw std::logic_error("f_eval: unhandled divergence kind");
}

/// lim_{x -> 0+} f(x); +inf for forward KL.
inline double f_at_zero(const DivergenceSpec& spec) {
  switch (spec.kind) {
    case DivergenceKind::kAlpha: return 1.0 / (1.0 - spec.alpha);
    case DivergenceKind::kReverseKl: return 0.0;
    case DivergenceKind::kForwardKl: return std::numeric_limits<double>::infinity();
    case DivergenceKind::kJensenShannon: return std::numbers::ln2;
    case DivergenceKind::kChiSquared: return 1.0;
  }
  throw std::logic_error("f_at_zero: unhandled divergence kind");
}

/// lim_{x -> 0+} f'(x); -inf except for chi-squared.
inline double f_prime_at_zero(const DivergenceSpec& spec) {
  return spec.kind == DivergenceKind::kChiSquared ? -2.0
                                                 : -std::numeric_limits<double>::infinity();
}

/// D_f(p, q) = sum_a q(a) f(p(a) / q(a)). q must be strictly positive; p may touch zero.
template <typename P, typename Q>
double divergence_value(const DivergenceSpec& spec, const Eigen::MatrixBase<P>& p,
                        const Eigen::MatrixBase<Q>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("divergence_value: size mismatch");
  double total = 0.0;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    const double qa = q(a);
    if (!(qa > 0.0)) throw std::invalid_argument("divergence_value: q has a zero entry");
    const double pa = p(a);
    if (pa < 0.0) throw std::invalid_argument("divergence_value: p has a negative entry");
    total += qa * (pa > 0.0 ? f_eval(spec, pa / qa).value : f_at_zero(spec));
  }
  return total;
}

/// Constants bounding x|f'(x)| and x^2|f''(x)| on (0, 1/c_ref), plus per-state
/// strong-concavity coefficients m_s of p -> -D_f(p, pi_ref(s)) on the simplex.
struct DivergenceConstants {
  double c_f1 = 0.0;
  double c_f2 = 0.0;
  Vector m_s;
  double c_ref = 0.0;

  double c_m() const { return m_s.minCoeff(); }
};

inline std::pair<double, double> assumption3_constants(const DivergenceSpec& spec, double c_ref) {
  if (!(c_ref > 0.0 && c_ref <= 1.0)) {
    throw std::invalid_argument("c_ref must lie in (0, 1]");
  }
  const double inv = 1.0 / c_ref;
  switch (spec.kind) {
    case DivergenceKind::kAlpha:
      return {1.0 / (spec.alpha * c_ref), std::pow(c_ref, spec.alpha - 1.0)};
    case DivergenceKind::kReverseKl:
      return {std::max(1.0 / std::numbers::e, inv * std::log(inv)) + inv, inv};
    case DivergenceKind::kForwardKl:
      return {1.0, 1.0};
    case DivergenceKind::kJensenShannon:
      return {std::max(1.0 / std::numbers::e, inv * std::numbers::ln2), 1.0};
    case DivergenceKind::kChiSquared:
      // sup x|2(x-1)| on (0, 1/c) is 2(1-c)/c^2 once c < 1/2; 2/c alone undercuts it there.
      return {std::max(2.0 * inv, 2.0 * (inv - 1.0) * inv), 2.0 * inv * inv};
  }
  throw std::logic_error("assumption3_constants: unhandled divergence kind");
}

/// Curvature floor of state s: inf over the simplex of min_a f''(p_a / q_a) / q_a.
///
/// For Jensen-Shannon the infimum is min_a q_a / (1 + q_a) (attained at p_a = 1),
/// which is below 1; the tabulated value 1 is not a valid lower bound.
inline double curvature_floor(const DivergenceSpec& spec, const Eigen::RowVectorXd& ref_row) {
  const double q_min = ref_row.minCoeff();
  switch (spec.kind) {
    case DivergenceKind::kAlpha: return std::pow(q_min, spec.alpha);
    case DivergenceKind::kReverseKl: return 1.0;
    case DivergenceKind::kForwardKl: return q_min;
    case DivergenceKind::kJensenShannon: return q_min / (1.0 + q_min);
    case DivergenceKind::kChiSquared: return 2.0;
  }
  throw std::logic_error("curvature_floor: unhandled divergence kind");
}

inline DivergenceConstants table1_constants(const DivergenceSpec& spec, const PolicyTable& pi_ref) {
  const double c_ref = pi_ref.min_prob();
  if (!(c_ref > 0.0)) throw std::invalid_argument("reference policy must be strictly positive");
  DivergenceConstants out;
  out.c_ref = c_ref;
  std::tie(out.c_f1, out.c_f2) = assumption3_constants(spec, c_ref);
  out.m_s.resize(pi_ref.num_states());
  for (int s = 0; s < pi_ref.num_states(); ++s) {
    out.m_s(s) = curvature_floor(spec, pi_ref.probs.row(s));
  }
  return out;
}

/// f, f', f'' at x = exp(log_x). The KL generators are evaluated directly in
/// log space; the others fall back to f_eval (or the x -> 0 limits on underflow).
inline FValues f_eval_log(const DivergenceSpec& spec, double log_x) {
  switch (spec.kind) {
    case DivergenceKind::kForwardKl:
      return {-log_x, -std::exp(-log_x), std::exp(-2.0 * log_x)};
    case DivergenceKind::kReverseKl:
      return {std::exp(log_x) * log_x, log_x + 1.0, std::exp(-log_x)};
    default: {
      const double x = std::exp(log_x);
      if (x > 0.0) return f_eval(spec, x);
      return {f_at_zero(spec), f_prime_at_zero(spec), std::numeric_limits<double>::infinity()};
    }
  }
}

/// Per-state D_f(pi(s), pi_ref(s)), evaluated through log-ratios.
inline Vector divergence_per_state(const DivergenceSpec& spec, const PolicyTable& pi,
                                   const PolicyTable& pi_ref) {
  Vector out(pi.num_states());
  for (int s = 0; s < pi.num_states(); ++s) {
    double total = 0.0;
    for (int a = 0; a < pi.num_actions(); ++a) {
      total += pi_ref.probs(s, a) *
               f_eval_log(spec, pi.log_probs(s, a) - pi_ref.log_probs(s, a)).value;
    }
    out(s) = total;
  }
  return out;
}

}  // namespace regppo
