// Trains forward-KL and reverse-KL PPO-Clip on a fixed two-state MDP and
// compares the final policy with the regularized optimum.
#include "regppo/regppo.hpp"

#include <cstdio>
#include <optional>

using namespace regppo;

namespace {

Mdp two_state_mdp() {
  Mdp mdp;
  mdp.num_states = 2;
  mdp.num_actions = 2;
  mdp.gamma = 0.9;
  mdp.r_max = 1.0;
  mdp.transition.resize(4, 2);
  mdp.transition << 0.9, 0.1,
                    0.2, 0.8,
                    0.7, 0.3,
                    0.05, 0.95;
  mdp.reward.resize(2, 2);
  mdp.reward << 0.0, 0.3,
                1.0, 0.1;
  return mdp;
}

void train(const Mdp& mdp, Regularizer reg, int outer, std::optional<double> fixed_step) {
  const PolicyTable pi_ref = uniform_policy(mdp.num_states, mdp.num_actions);
  const Vector u = uniform_distribution(mdp.num_states).weights;
  const DivergenceSpec spec = divergence_of(reg);

  ClipConfig config;
  config.regularizer = reg;
  config.lambda = 0.1;
  config.outer_iterations = outer;
  config.fixed_step = fixed_step;

  const OracleResult oracle = reg == Regularizer::kReverseKl
                                  ? soft_value_iteration(mdp, pi_ref, config.lambda)
                                  : general_regularized_vi(mdp, pi_ref, spec, config.lambda);
  const double v_star = oracle.v_star.dot(u);
  const RunResult result = run(mdp, pi_ref, u, u, config, 0, v_star);
  const IterateLog& last = result.log.back();
  const PolicyTable pi = policy_from_params(result.theta);

  std::printf("%s, %s step %.3g: V*(u) = %.6f, V(u) after %d iterations = %.6f, |grad| = %.2e\n",
              to_string(spec).c_str(), fixed_step ? "fixed" : "budgeted", last.s_max_n, v_star, outer,
              last.value_u, last.grad_norm);
  for (int s = 0; s < mdp.num_states; ++s) {
    std::printf("  state %d: pi = (%.4f, %.4f), pi* = (%.4f, %.4f)\n", s, pi.probs(s, 0), pi.probs(s, 1),
                oracle.pi_star.probs(s, 0), oracle.pi_star.probs(s, 1));
  }
}

}  // namespace

int main() {
  const Mdp mdp = two_state_mdp();
  // The budgeted steps are what the guarantees need and are very conservative.
  for (Regularizer reg : {Regularizer::kForwardKl, Regularizer::kReverseKl}) {
    train(mdp, reg, 2000, std::nullopt);
    train(mdp, reg, 2000, 1.0);
  }
  return 0;
}
