#pragma once

#include "regppo/divergence.hpp"
#include "regppo/mdp.hpp"
#include "regppo/oracle.hpp"
#include "regppo/ppo_clip.hpp"
#include "regppo/regularized_eval.hpp"
#include "regppo/softmax_policy.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace regppo {

/// Running tally of one inequality family: slack = (allowed side) - (checked side).
struct Tally {
  std::string name;
  long instances = 0;
  double worst_slack = std::numeric_limits<double>::infinity();
  long violations = 0;
  std::vector<std::string> messages;  // first few violations

  Tally() = default;
  explicit Tally(std::string n) : name(std::move(n)) {}

  /// Counts a violation when slack < -tolerance. `describe` runs only on violation.
  void record(double slack, double tolerance, const std::function<std::string()>& describe = {}) {
    ++instances;
    if (!(slack >= worst_slack)) worst_slack = slack;  // also catches NaN
    if (!(slack >= -tolerance)) {
      ++violations;
      if (messages.size() < 10) messages.push_back(describe ? describe() : std::string("violation"));
    }
  }
};

struct CheckReport {
  std::string check_name;
  std::uint64_t seed = 0;
  bool informational = false;  // hypotheses of the audited result were deliberately violated
  std::vector<Tally> parts;
  std::map<std::string, double> metrics;

  CheckReport() = default;
  CheckReport(std::string name, std::uint64_t seed_value)
      : check_name(std::move(name)), seed(seed_value) {}

  Tally& part(const std::string& name) {
    for (Tally& t : parts) {
      if (t.name == name) return t;
    }
    parts.emplace_back(name);
    return parts.back();
  }
  const Tally* find(const std::string& name) const {
    for (const Tally& t : parts) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  long instances_run() const {
    long n = 0;
    for (const Tally& t : parts) n += t.instances;
    return n;
  }
  long violations() const {
    long n = 0;
    for (const Tally& t : parts) n += t.violations;
    return n;
  }
  double worst_slack() const {
    double w = std::numeric_limits<double>::infinity();
    for (const Tally& t : parts) w = std::min(w, t.worst_slack);
    return w;
  }
  bool passed() const { return informational || violations() == 0; }
};

namespace checks {

inline constexpr double kIdentityTol = 1e-10;
inline constexpr double kSolveTol = 1e-8;
inline constexpr double kFiniteDiffTol = 1e-6;

inline const std::array<DivergenceSpec, 5>& all_divergences() {
  static const std::array<DivergenceSpec, 5> kinds = {
      DivergenceSpec::alpha_divergence(0.5), DivergenceSpec::reverse_kl(),
      DivergenceSpec::forward_kl(), DivergenceSpec::jensen_shannon(),
      DivergenceSpec::chi_squared()};
  return kinds;
}

/// A random MDP together with the remaining problem data.
struct Instance {
  Mdp mdp;
  PolicyTable pi_ref;
  Vector u;
  Vector rho;
  double lambda = 0.1;
};

inline Matrix random_logits(std::mt19937_64& rng, int rows, int cols, double range = 3.0) {
  std::uniform_real_distribution<double> dist(-range, range);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Vector random_distribution(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> dist(0.2, 1.0);
  Vector w(n);
  for (int i = 0; i < n; ++i) w(i) = dist(rng);
  return w / w.sum();
}

/// |S| in [2,5], |A| in [2,4], gamma in [0.8,0.95], lambda in {0.01,0.1,1}.
inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> states(2, 5);
  std::uniform_int_distribution<int> actions(2, 4);
  std::uniform_real_distribution<double> gamma(0.8, 0.95);
  std::uniform_int_distribution<int> lam(0, 2);
  const int S = states(rng);
  const int A = actions(rng);
  const double g = gamma(rng);
  static constexpr double kLambdas[] = {0.01, 0.1, 1.0};
  Instance inst;
  inst.lambda = kLambdas[lam(rng)];
  inst.mdp = random_mdp(rng(), S, A, 1.0, g);
  inst.pi_ref = policy_from_params(PolicyParams{random_logits(rng, S, A, 1.0)});
  inst.u = random_distribution(rng, S);
  inst.rho = random_distribution(rng, S);
  return inst;
}

inline double sup_norm(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

inline std::string fmt(double x) {
  std::ostringstream out;
  out.precision(6);
  out << x;
  return out.str();
}

/// Oracle for any divergence; reverse KL goes through soft value iteration.
inline OracleResult solve_oracle(const Mdp& mdp, const PolicyTable& pi_ref,
                                 const DivergenceSpec& spec, double lambda, double tol = 1e-12) {
  OracleOptions opt;
  opt.tol = tol;
  if (spec.kind == DivergenceKind::kReverseKl) return soft_value_iteration(mdp, pi_ref, lambda, opt);
  return general_regularized_vi(mdp, pi_ref, spec, lambda, opt);
}

}  // namespace checks

// ---------------------------------------------------------------------------

/// Central finite differences of V~(u) against the analytic gradient, every divergence.
inline CheckReport check_gradient(std::uint64_t seed, int trials) {
  CheckReport report{"gradient", seed};
  std::mt19937_64 rng(seed);
  constexpr double h = 1e-5;
  for (int t = 0; t < trials; ++t) {
    const checks::Instance inst = checks::random_instance(rng);
    const PolicyParams theta{checks::random_logits(rng, inst.mdp.num_states, inst.mdp.num_actions)};
    for (const DivergenceSpec& spec : checks::all_divergences()) {
      const Matrix g = exact_gradient(inst.mdp, theta, inst.pi_ref, spec, inst.lambda, inst.u);
      Matrix fd(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        PolicyParams plus = theta;
        PolicyParams minus = theta;
        plus.theta.data()[i] += h;
        minus.theta.data()[i] -= h;
        fd.data()[i] = (evaluate(inst.mdp, plus, inst.pi_ref, spec, inst.lambda, inst.u).value(inst.u) -
                        evaluate(inst.mdp, minus, inst.pi_ref, spec, inst.lambda, inst.u).value(inst.u)) /
                       (2.0 * h);
      }
      const double rel = checks::sup_norm(fd - g) / std::max(1.0, checks::sup_norm(g));
      report.part(to_string(spec)).record(checks::kFiniteDiffTol - rel, 0.0, [&] {
        return "trial " + std::to_string(t) + ": relative error " + checks::fmt(rel);
      });
      report.metrics["max_rel_error"] = std::max(report.metrics["max_rel_error"], rel);
    }
  }
  return report;
}

/// ||psi|| <= sqrt 2, ||H|| <= 1 and the 3-Lipschitz bound on grad pi(a|s).
inline CheckReport check_score_bounds(std::uint64_t seed, int trials) {
  CheckReport report{"score", seed};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> actions(2, 6);

  auto audit = [&](const Eigen::RowVectorXd& logits, const Eigen::RowVectorXd& logits_prime) {
    const PolicyTable pi = policy_from_params(PolicyParams{logits});
    const PolicyTable pi2 = policy_from_params(PolicyParams{logits_prime});
    const Matrix h = policy_jacobian(pi, 0);
    const double h_norm = Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().cwiseAbs().maxCoeff();
    report.part("jacobian_norm").record(1.0 - h_norm, checks::kIdentityTol);
    const double dist = (logits - logits_prime).norm();
    for (int a = 0; a < pi.num_actions(); ++a) {
      const Vector psi = score(pi, 0, a);
      report.part("score_norm").record(std::numbers::sqrt2 - psi.norm(), checks::kIdentityTol);
      const Vector grad_pi = pi.probs(0, a) * psi;
      const Vector grad_pi2 = pi2.probs(0, a) * score(pi2, 0, a);
      report.part("grad_pi_lipschitz")
          .record(3.0 * dist - (grad_pi - grad_pi2).norm(), checks::kIdentityTol);
    }
  };

  for (int t = 0; t < trials; ++t) {
    const int A = actions(rng);
    audit(checks::random_logits(rng, 1, A), checks::random_logits(rng, 1, A));
  }
  // Near-deterministic rows: the score norm approaches sqrt 2 from below.
  for (int A = 2; A <= 6; ++A) {
    Eigen::RowVectorXd gap = Eigen::RowVectorXd::Zero(A);
    gap(0) = 50.0;
    audit(gap, Eigen::RowVectorXd::Zero(A));
  }
  return report;
}

/// Performance difference identity, plus W(s) >= 0 against the oracle optimum.
inline CheckReport check_performance_difference(std::uint64_t seed, int trials) {
  CheckReport report{"pdl", seed};
  std::mt19937_64 rng(seed);
  for (int t = 0; t < trials; ++t) {
    const checks::Instance inst = checks::random_instance(rng);
    const DivergenceSpec spec = checks::all_divergences()[t % 5];
    const Mdp& mdp = inst.mdp;
    const double lam = inst.lambda;
    const int S = mdp.num_states;
    const int A = mdp.num_actions;
    const PolicyTable pi1 = policy_from_params(PolicyParams{checks::random_logits(rng, S, A)});
    const PolicyTable pi2 = policy_from_params(PolicyParams{checks::random_logits(rng, S, A)});

    const RegularizedQuantities q1 = evaluate(mdp, pi1, inst.pi_ref, spec, lam, inst.rho);
    const RegularizedQuantities q2 = evaluate(mdp, pi2, inst.pi_ref, spec, lam, inst.rho);
    const double lhs = q1.value(inst.rho) - q2.value(inst.rho);
    double rhs = 0.0;
    for (int s = 0; s < S; ++s) {
      const double inner = (pi1.probs.row(s) - pi2.probs.row(s)).dot(q2.q_tilde.row(s)) -
                           lam * (q1.div(s) - q2.div(s));
      rhs += q1.d_u(s) * inner;
    }
    rhs /= 1.0 - mdp.gamma;
    const double err = std::abs(lhs - rhs);
    report.part("performance_difference").record(1e-9 - err, 0.0, [&] {
      return "trial " + std::to_string(t) + ": |lhs-rhs| = " + checks::fmt(err);
    });

    // W(s) = sum_a (pi* - pi) Q~^{pi*} - lambda (D(pi*) - D(pi)) >= 0.
    const OracleResult oracle = checks::solve_oracle(mdp, inst.pi_ref, spec, lam);
    const RegularizedQuantities qs = evaluate(mdp, oracle.pi_star, inst.pi_ref, spec, lam, inst.rho);
    for (int s = 0; s < S; ++s) {
      const double w = (oracle.pi_star.probs.row(s) - pi1.probs.row(s)).dot(qs.q_tilde.row(s)) -
                       lam * (qs.div(s) - q1.div(s));
      report.part("suboptimality_w").record(w, checks::kIdentityTol, [&] {
        return "trial " + std::to_string(t) + " state " + std::to_string(s) + ": W = " + checks::fmt(w);
      });
    }
  }
  return report;
}

namespace detail {
/// First and second directional derivatives of D_f(theta)(s) along v.
inline std::pair<Vector, Vector> divergence_directional(const RegularizedQuantities& q,
                                                        const PolicyTable& pi_ref,
                                                        const DivergenceSpec& spec, const Matrix& v) {
  const int S = q.num_states();
  const int A = q.num_actions();
  Vector first(S);
  Vector second(S);
  for (int s = 0; s < S; ++s) {
    const Eigen::RowVectorXd p = q.pi.probs.row(s);
    const Eigen::RowVectorXd vs = v.row(s);
    const double mean = p.dot(vs);
    const double var = p.dot(vs.cwiseProduct(vs)) - mean * mean;
    double d1 = 0.0;
    double d2 = 0.0;
    for (int a = 0; a < A; ++a) {
      const double dpi = p(a) * (vs(a) - mean);
      const double d2pi = p(a) * ((vs(a) - mean) * (vs(a) - mean) - var);
      const double log_w = q.pi.log_probs(s, a) - pi_ref.log_probs(s, a);
      const FValues fv = f_eval_log(spec, log_w);
      d1 += fv.first * dpi;
      d2 += fv.first * d2pi + fv.second / pi_ref.probs(s, a) * dpi * dpi;
    }
    first(s) = d1;
    second(s) = d2;
  }
  return {first, second};
}
}  // namespace detail

/// Quadratic-remainder audit of the smoothness factors, plus the second-derivative
/// framework bound on V_f checked with finite-difference curvature.
inline CheckReport check_smoothness(std::uint64_t seed, int trials, const DivergenceSpec& spec) {
  CheckReport report{"smooth:" + to_string(spec), seed};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> radius(0.0, 1.0);

  for (int t = 0; t < trials; ++t) {
    const checks::Instance inst = checks::random_instance(rng);
    const Mdp& mdp = inst.mdp;
    const int S = mdp.num_states;
    const int A = mdp.num_actions;
    const double lam = inst.lambda;
    const PolicyParams theta{checks::random_logits(rng, S, A)};
    Matrix dir(S, A);
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = normal(rng);
    dir /= dir.norm();
    const PolicyParams theta2{theta.theta + radius(rng) * dir};
    const double step2 = (theta2.theta - theta.theta).squaredNorm();

    const RegularizedQuantities q = evaluate(mdp, theta, inst.pi_ref, spec, lam, inst.rho);
    const double v2 = evaluate(mdp, theta2, inst.pi_ref, spec, lam, inst.rho).value(inst.rho);
    const Matrix g = exact_gradient(q);
    const double remainder =
        std::abs(v2 - q.value(inst.rho) - (g.array() * (theta2.theta - theta.theta).array()).sum());
    const DivergenceConstants constants = table1_constants(spec, inst.pi_ref);

    const double l_f = smoothness_factor(theta, theta2, spec, lam, constants, mdp, inst.pi_ref);
    report.part("remainder_general").record(l_f / 2.0 * step2 - remainder, checks::kSolveTol, [&] {
      return "trial " + std::to_string(t) + ": remainder " + checks::fmt(remainder) + " > " +
             checks::fmt(l_f / 2.0 * step2);
    });
    if (spec.kind == DivergenceKind::kReverseKl) {
      const double l_r = smoothness_reverse_kl(mdp, inst.pi_ref, lam);
      report.part("remainder_reverse_kl").record(l_r / 2.0 * step2 - remainder, checks::kSolveTol);
    }
    if (spec.kind == DivergenceKind::kForwardKl) {
      const double l_fkl = smoothness_forward_kl(theta, theta2, lam, mdp);
      report.part("remainder_forward_kl").record(l_fkl / 2.0 * step2 - remainder, checks::kSolveTol);
    }
    // Unregularized value: L = 8 r_max / (1-gamma)^3.
    {
      const double l0 = smoothness_factor(theta, theta2, spec, 0.0, constants, mdp, inst.pi_ref);
      const double u1 = evaluate(mdp, theta, inst.pi_ref, spec, 0.0, inst.rho).value(inst.rho);
      const double u2 = evaluate(mdp, theta2, inst.pi_ref, spec, 0.0, inst.rho).value(inst.rho);
      const Matrix g0 = exact_gradient(evaluate(mdp, theta, inst.pi_ref, spec, 0.0, inst.rho));
      const double r0 = std::abs(u2 - u1 - (g0.array() * (theta2.theta - theta.theta).array()).sum());
      report.part("remainder_unregularized").record(l0 / 2.0 * step2 - r0, checks::kSolveTol);
    }

    // Framework bound on |v^T grad^2 V_f(s) v| for unit v.
    constexpr double h = 1e-3;
    const Vector vf_plus = evaluate(mdp, PolicyParams{theta.theta + h * dir}, inst.pi_ref, spec, lam, inst.rho).v_reg;
    const Vector vf_minus = evaluate(mdp, PolicyParams{theta.theta - h * dir}, inst.pi_ref, spec, lam, inst.rho).v_reg;
    const Vector curvature = (vf_plus - 2.0 * q.v_reg + vf_minus) / (h * h);
    const auto [d1, d2] = detail::divergence_directional(q, inst.pi_ref, spec, dir);
    const double g_ = mdp.gamma;
    const double bound = 4.0 * g_ / std::pow(1.0 - g_, 2) * d1.cwiseAbs().maxCoeff() +
                         8.0 * g_ / std::pow(1.0 - g_, 3) * q.div.cwiseAbs().maxCoeff() +
                         d2.cwiseAbs().maxCoeff() / (1.0 - g_);
    for (int s = 0; s < S; ++s) {
      const double lhs = std::abs(curvature(s));
      report.part("framework_second_derivative")
          .record(bound - lhs, checks::kFiniteDiffTol * std::max(1.0, bound), [&] {
            return "trial " + std::to_string(t) + " state " + std::to_string(s) + ": " +
                   checks::fmt(lhs) + " > " + checks::fmt(bound);
          });
    }
  }
  // Zero displacement: 0 <= 0.
  {
    const checks::Instance inst = checks::random_instance(rng);
    const PolicyParams theta{checks::random_logits(rng, inst.mdp.num_states, inst.mdp.num_actions)};
    const double v = evaluate(inst.mdp, theta, inst.pi_ref, spec, inst.lambda, inst.rho).value(inst.rho);
    const double v_again = evaluate(inst.mdp, theta, inst.pi_ref, spec, inst.lambda, inst.rho).value(inst.rho);
    report.part("zero_displacement").record(-std::abs(v_again - v), 0.0);
  }
  return report;
}

/// ||grad V~(u)||^2 >= rhs against the oracle optimum. Points are spread over
/// a few MDPs so the oracle runs once per MDP.
inline CheckReport check_lojasiewicz(std::uint64_t seed, int trials, const DivergenceSpec& spec) {
  CheckReport report{"loja:" + to_string(spec), seed};
  std::mt19937_64 rng(seed);
  const int per_mdp = 100;
  for (int done = 0; done < trials;) {
    const checks::Instance inst = checks::random_instance(rng);
    const Mdp& mdp = inst.mdp;
    const OracleResult oracle = checks::solve_oracle(mdp, inst.pi_ref, spec, inst.lambda);
    const int batch = std::min(per_mdp, trials - done);
    for (int i = 0; i < batch; ++i, ++done) {
      const PolicyParams theta{checks::random_logits(rng, mdp.num_states, mdp.num_actions)};
      const LojasiewiczSides sides = lojasiewicz_bound(theta, spec, inst.lambda, mdp, inst.pi_ref,
                                                       inst.u, oracle.pi_star, inst.rho);
      report.part("lojasiewicz").record(sides.lhs - sides.rhs, checks::kIdentityTol, [&] {
        return "point " + std::to_string(done) + ": lhs " + checks::fmt(sides.lhs) + " < rhs " +
               checks::fmt(sides.rhs);
      });
      report.part("z_tangent").record(-(sides.z.rowwise().sum().cwiseAbs().maxCoeff()), checks::kIdentityTol);
    }
    // At the optimum both sides vanish.
    const LojasiewiczSides at_opt =
        lojasiewicz_bound(params_from_policy(oracle.pi_star), spec, inst.lambda, mdp, inst.pi_ref,
                          inst.u, oracle.pi_star, inst.rho);
    report.part("optimum_zero").record(-std::max(at_opt.lhs, std::abs(at_opt.rhs)), 1e-8);
  }
  return report;
}

/// Soft VI against general VI on reverse KL, and general VI at tiny lambda
/// against unregularized VI, for every divergence.
inline CheckReport check_oracles(std::uint64_t seed, int trials, double tol = 1e-10) {
  CheckReport report{"oracle", seed};
  std::mt19937_64 rng(seed);
  OracleOptions opt;
  opt.tol = tol;
  for (int t = 0; t < trials; ++t) {
    const checks::Instance inst = checks::random_instance(rng);
    const Mdp& mdp = inst.mdp;
    const OracleResult soft = soft_value_iteration(mdp, inst.pi_ref, inst.lambda, opt);
    const OracleResult general =
        general_regularized_vi(mdp, inst.pi_ref, DivergenceSpec::reverse_kl(), inst.lambda, opt);
    const double gap = (soft.v_star - general.v_star).cwiseAbs().maxCoeff();
    report.part("soft_vs_general").record(10.0 * tol - gap, 0.0, [&] {
      return "trial " + std::to_string(t) + ": |V_soft - V_general| = " + checks::fmt(gap);
    });
    report.metrics["max_soft_general_gap"] = std::max(report.metrics["max_soft_general_gap"], gap);

    const Vector v_plain = unregularized_value_iteration(mdp, opt);
    for (const DivergenceSpec& spec : checks::all_divergences()) {
      const OracleResult tiny = general_regularized_vi(mdp, inst.pi_ref, spec, 1e-6, opt);
      const double diff = (tiny.v_star - v_plain).cwiseAbs().maxCoeff();
      report.part("small_lambda:" + to_string(spec)).record(1e-3 - diff, 0.0, [&] {
        return "trial " + std::to_string(t) + ": |V_lambda - V| = " + checks::fmt(diff);
      });
      report.metrics["max_small_lambda_gap"] = std::max(report.metrics["max_small_lambda_gap"], diff);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Full-run audits

struct RateCheckConfig {
  Regularizer regularizer = Regularizer::kForwardKl;
  int num_states = 3;
  int num_actions = 3;
  double gamma = 0.9;
  double lambda = 0.1;
  double r_max = 1.0;
  double eps_l = 0.2;
  double eps_h = 0.2;
  int outer = 500;
  int inner = 10;
  double step_scale = 1.0;
  std::optional<double> fixed_step;
  bool near_optimal_init = false;  // reverse KL: start from oracle logits plus noise
  double init_noise = 1e-2;
  double grad_target = 1e-6;       // reverse KL: stop once the gradient norm is this small
  double fit_floor = 1e-12;        // reverse KL: ignore gaps below this in the log-linear fit
};

inline RateCheckConfig forward_rate_preset() { return {}; }

inline RateCheckConfig reverse_rate_preset() {
  RateCheckConfig c;
  c.regularizer = Regularizer::kReverseKl;
  c.num_states = 3;
  c.num_actions = 3;
  c.gamma = 0.5;
  c.lambda = 1.0;
  c.outer = 2'000'000;
  return c;
}

/// Least-squares fit of log(y) = a + b n; returns (slope b, R^2).
inline std::pair<double, double> fit_log_linear(const std::vector<double>& n,
                                                const std::vector<double>& y) {
  const std::size_t m = n.size();
  if (m < 3) return {0.0, 0.0};
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = n[i];
    const double ly = std::log(y[i]);
    sx += x;
    sy += ly;
    sxx += x * x;
    sxy += x * ly;
    syy += ly * ly;
  }
  const double cov = sxy - sx * sy / m;
  const double vx = sxx - sx * sx / m;
  const double vy = syy - sy * sy / m;
  const double slope = cov / vx;
  const double r2 = vy > 0.0 ? cov * cov / (vx * vy) : 1.0;
  return {slope, r2};
}

inline CheckReport check_descent_and_rates(std::uint64_t seed, const RateCheckConfig& cfg) {
  const bool forward = cfg.regularizer == Regularizer::kForwardKl;
  CheckReport report{std::string("rates:") + (forward ? "forward-kl" : "reverse-kl") +
                         (cfg.near_optimal_init ? ":near-optimal" : ""),
                     seed};
  report.informational = cfg.step_scale > 1.0 || cfg.fixed_step.has_value();

  const Mdp mdp = random_mdp(seed, cfg.num_states, cfg.num_actions, cfg.r_max, cfg.gamma);
  const PolicyTable pi_ref = uniform_policy(cfg.num_states, cfg.num_actions);
  const Vector u = uniform_distribution(cfg.num_states).weights;
  const Vector& rho = u;
  const DivergenceSpec spec = divergence_of(cfg.regularizer);

  const OracleResult oracle = checks::solve_oracle(mdp, pi_ref, spec, cfg.lambda);
  const RegularizedQuantities q_star = evaluate(mdp, oracle.pi_star, pi_ref, spec, cfg.lambda, u);
  const double v_star_u = q_star.value(u);

  ClipConfig clip;
  clip.eps_l = cfg.eps_l;
  clip.eps_h = cfg.eps_h;
  clip.lambda = cfg.lambda;
  clip.regularizer = cfg.regularizer;
  clip.inner_steps = cfg.inner;
  clip.outer_iterations = cfg.outer;
  clip.step_scale = cfg.step_scale;
  clip.fixed_step = cfg.fixed_step;
  if (!forward) clip.stop_grad_norm = cfg.grad_target;
  if (cfg.near_optimal_init) {
    clip.initial_theta = oracle.pi_star.log_probs;
    clip.init_noise = cfg.init_noise;
  }

  const RunResult run_result = run(mdp, pi_ref, u, rho, clip, seed, v_star_u);
  const std::vector<IterateLog>& log = run_result.log;
  report.metrics["iterations"] = static_cast<double>(log.size());
  report.metrics["final_grad_norm"] = log.back().grad_norm;
  report.metrics["final_delta"] = *log.back().delta_n;
  report.metrics["final_value_rho_gap"] = q_star.value(rho) - log.back().value_rho;

  for (const IterateLog& row : log) {
    report.part("anchor_identity").record(-row.anchor_error, checks::kIdentityTol, [&] {
      return "n=" + std::to_string(row.n) + ": |g_{n,1} - grad| = " + checks::fmt(row.anchor_error);
    });
    report.part("inexact_gradient_bound").record(-row.max_inexact_excess, checks::kIdentityTol, [&] {
      return "n=" + std::to_string(row.n) + ": excess " + checks::fmt(row.max_inexact_excess);
    });
  }

  // Descent: V(n+1) - V(n) >= (S_n / 2) ||grad_n||^2.
  double max_contraction = 0.0;
  for (std::size_t i = 0; i + 1 < log.size(); ++i) {
    const IterateLog& a = log[i];
    const IterateLog& b = log[i + 1];
    const double gain = b.value_u - a.value_u;
    report.part("monotone_value").record(gain, 1e-12, [&] {
      return "n=" + std::to_string(a.n) + ": value dropped by " + checks::fmt(-gain);
    });
    report.part("descent").record(gain - 0.5 * a.s_max_n * a.grad_norm * a.grad_norm, 1e-12, [&] {
      return "n=" + std::to_string(a.n) + ": gain " + checks::fmt(gain) + " < " +
             checks::fmt(0.5 * a.s_max_n * a.grad_norm * a.grad_norm);
    });
    if (*a.delta_n > 0.0) max_contraction = std::max(max_contraction, *b.delta_n / *a.delta_n);
  }
  report.metrics["max_realized_contraction"] = max_contraction;

  if (forward) {
    const StepBudget budget = step_budget_forward_kl(mdp, pi_ref, cfg.lambda, u, cfg.eps_l, cfg.eps_h,
                                                     log.front().value_u, &oracle.pi_star);
    const double c = *budget.lojasiewicz_c;
    const double shrink = -std::expm1(-c);  // 1 - e^{-C}
    report.metrics["s_max"] = budget.s_max;
    report.metrics["log_lojasiewicz_c"] = *budget.log_lojasiewicz_c;
    report.metrics["c_a"] = *budget.c_a;
    report.metrics["a_max"] = budget.a_max;
    for (std::size_t i = 0; i + 1 < log.size(); ++i) {
      const double d0 = *log[i].delta_n;
      // delta_{n+1} <= e^{-C} delta_n  <=>  (V_{n+1} - V_n) >= (1 - e^{-C}) delta_n.
      const double gain = log[i + 1].value_u - log[i].value_u;
      report.part("linear_rate").record(gain - shrink * d0, 1e-12, [&] {
        return "n=" + std::to_string(log[i].n) + ": gap ratio " + checks::fmt(*log[i + 1].delta_n / d0);
      });
    }
    const double delta1 = *log.front().delta_n;
    double min_grad2 = std::numeric_limits<double>::infinity();
    for (const IterateLog& row : log) min_grad2 = std::min(min_grad2, row.grad_norm * row.grad_norm);
    const double stationary_bound = 2.0 * delta1 / (static_cast<double>(log.size()) * budget.s_max);
    report.part("stationary_rate").record(stationary_bound - min_grad2, 0.0);
    report.metrics["stationary_bound"] = stationary_bound;
    report.metrics["min_grad_sq"] = min_grad2;

    const double log_floor = std::log(0.5) + budget.log_c_pi_floor;
    for (const IterateLog& row : log) {
      report.part("policy_floor").record(std::log(row.min_policy_inner) - log_floor, 0.0);
      report.part("advantage_bound").record(budget.a_max - row.max_abs_advantage, checks::kIdentityTol);
    }
  } else {
    for (const IterateLog& row : log) {
      report.part("quarter_error").record(0.25 - row.max_inexact_ratio, checks::kIdentityTol, [&] {
        return "n=" + std::to_string(row.n) + ": ratio " + checks::fmt(row.max_inexact_ratio);
      });
    }
    report.part("grad_target").record(cfg.grad_target - log.back().grad_norm, 0.0, [&] {
      return "final gradient norm " + checks::fmt(log.back().grad_norm);
    });
    if (cfg.near_optimal_init) {
      std::vector<double> xs;
      std::vector<double> ys;
      for (const IterateLog& row : log) {
        if (*row.delta_n > cfg.fit_floor) {
          xs.push_back(row.n);
          ys.push_back(*row.delta_n);
        }
      }
      const auto [slope, r2] = fit_log_linear(xs, ys);
      report.metrics["fit_slope"] = slope;
      report.metrics["fit_r2"] = r2;
      report.metrics["fit_points"] = static_cast<double>(xs.size());
      report.part("log_linear_fit").record(r2 - 0.99, 0.0, [&] { return "R^2 = " + checks::fmt(r2); });

      // The local rate constant takes its floor and step over the whole superlevel set; the
      // trajectory minima can only overestimate both, so this C is at least the true one.
      double log_floor = 0.0;
      double s_min = std::numeric_limits<double>::infinity();
      for (const IterateLog& row : log) {
        log_floor = std::min(log_floor, std::log(row.min_policy));
        s_min = std::min(s_min, row.s_max_n);
      }
      const double c_u = u.minCoeff();
      const double log_c = std::log((1.0 - cfg.gamma) * cfg.lambda * s_min * c_u /
                                    occupancy_mismatch(mdp, oracle.pi_star, u)) +
                           2.0 * log_floor;
      const double c = std::exp(log_c);
      report.metrics["log_local_c"] = log_c;
      report.part("local_slope").record(-c - slope, 0.0, [&] {
        return "slope " + checks::fmt(slope) + " > -C = " + checks::fmt(-c);
      });
      const double scale = *log.front().delta_n / (c_u * (1.0 - cfg.gamma));
      for (const IterateLog& row : log) {
        const double gap_rho = q_star.value(rho) - row.value_rho;
        const double bound = scale * std::exp(-c * (row.n - 1));
        report.part("local_rate").record(bound - gap_rho, checks::kIdentityTol, [&] {
          return "n=" + std::to_string(row.n) + ": gap " + checks::fmt(gap_rho) + " > " + checks::fmt(bound);
        });
      }
      const double final_gap = std::abs(q_star.value(rho) - log.back().value_rho);
      report.part("final_value").record(1e-6 - final_gap, 0.0);
    }
  }
  return report;
}

}  // namespace regppo
