#include "regppo/io.hpp"
#include "regppo/regppo.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace regppo;

constexpr int kExitOk = 0;
constexpr int kExitViolations = 1;
constexpr int kExitUsage = 2;

/// Problem data shared by train, oracle and constants.
struct ProblemOptions {
  std::string mdp = "random:1,3,3";
  double gamma = 0.9;
  double r_max = 1.0;
  double lambda = 0.1;
  std::string u;
  std::string rho;
};

void add_problem_options(CLI::App* cmd, ProblemOptions& p) {
  cmd->add_option("--mdp", p.mdp, "MDP JSON file, or random:<seed>,<S>,<A>")->capture_default_str();
  cmd->add_option("--gamma", p.gamma, "Discount for random MDPs")->capture_default_str();
  cmd->add_option("--r-max", p.r_max, "Reward bound for random MDPs")->capture_default_str();
  cmd->add_option("--lambda", p.lambda, "Regularization weight")->capture_default_str();
  cmd->add_option("--u", p.u, "Comma-separated start weights for gradients (default uniform)");
  cmd->add_option("--rho", p.rho, "Comma-separated start weights for reporting (default u)");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw InputError("cannot parse " + what + " from '" + s + "'");
  }
}

Mdp load_problem_mdp(const ProblemOptions& p) {
  const std::string prefix = "random:";
  if (p.mdp.rfind(prefix, 0) != 0) return load_mdp(p.mdp);
  const std::vector<std::string> parts = split(p.mdp.substr(prefix.size()), ',');
  if (parts.size() != 3) throw InputError("expected random:<seed>,<S>,<A>, got " + p.mdp);
  const double seed = parse_double(parts[0], "seed");
  const double S = parse_double(parts[1], "S");
  const double A = parse_double(parts[2], "A");
  if (seed < 0 || S < 1 || A < 1) throw InputError("random MDP needs seed >= 0, S >= 1, A >= 1");
  if (!(p.gamma >= 0.0 && p.gamma < 1.0)) throw InputError("gamma must lie in [0, 1)");
  if (!(p.r_max > 0.0)) throw InputError("r-max must be positive");
  return random_mdp(static_cast<std::uint64_t>(seed), static_cast<int>(S), static_cast<int>(A), p.r_max,
                    p.gamma);
}

Vector parse_weights(const std::string& text, int size, const char* name) {
  if (text.empty()) return Vector::Constant(size, 1.0 / size);
  const std::vector<std::string> parts = split(text, ',');
  if (static_cast<int>(parts.size()) != size) {
    throw InputError(std::string(name) + " needs " + std::to_string(size) + " weights");
  }
  Vector w(size);
  for (int i = 0; i < size; ++i) w(i) = parse_double(parts[i], name);
  if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw InputError(std::string(name) + " must be nonnegative");
  return w / w.sum();
}

void validate_lambda(double lambda) {
  if (!(lambda > 0.0)) throw InputError("lambda must be positive");
}

Regularizer parse_regularizer(const std::string& text) {
  if (text == "forward-kl") return Regularizer::kForwardKl;
  if (text == "reverse-kl") return Regularizer::kReverseKl;
  throw InputError("PPO-Clip supports --divergence forward-kl or reverse-kl, got " + text);
}

DivergenceSpec parse_spec(const std::string& text) {
  try {
    return parse_divergence(text);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

OracleResult solve(const Mdp& mdp, const PolicyTable& pi_ref, const DivergenceSpec& spec, double lambda,
                   double tol, const std::string& solver) {
  OracleOptions opt;
  opt.tol = tol;
  const bool soft = solver == "soft" || (solver == "auto" && spec.kind == DivergenceKind::kReverseKl);
  if (soft) {
    if (spec.kind != DivergenceKind::kReverseKl) throw InputError("the soft solver is reverse-kl only");
    return soft_value_iteration(mdp, pi_ref, lambda, opt);
  }
  return general_regularized_vi(mdp, pi_ref, spec, lambda, opt);
}

// ---------------------------------------------------------------------------

struct RandomMdpOptions {
  std::uint64_t seed = 1;
  int states = 3;
  int actions = 3;
  double gamma = 0.9;
  double r_max = 1.0;
  std::string out;
};

int run_random_mdp(const RandomMdpOptions& o) {
  if (o.states < 1 || o.actions < 1) throw InputError("states and actions must be >= 1");
  if (!(o.gamma >= 0.0 && o.gamma < 1.0)) throw InputError("gamma must lie in [0, 1)");
  if (!(o.r_max > 0.0)) throw InputError("r-max must be positive");
  emit(o.out, mdp_to_json(random_mdp(o.seed, o.states, o.actions, o.r_max, o.gamma)).dump(2) + "\n");
  return kExitOk;
}

struct TrainOptions {
  ProblemOptions problem;
  std::string divergence = "forward-kl";
  double eps_l = 0.2;
  double eps_h = 0.2;
  int outer = 100;
  int inner = 10;
  double step_scale = 1.0;
  std::optional<double> fixed_step;
  std::uint64_t seed = 0;
  double init_noise = 0.0;
  bool no_oracle = false;
  std::string log;
  std::string theta_out;
};

int run_train(const TrainOptions& o) {
  const Mdp mdp = load_problem_mdp(o.problem);
  validate_lambda(o.problem.lambda);
  const Vector u = parse_weights(o.problem.u, mdp.num_states, "u");
  const Vector rho = o.problem.rho.empty() ? u : parse_weights(o.problem.rho, mdp.num_states, "rho");
  make_distribution(u, DistributionRole::kGradient);
  const PolicyTable pi_ref = uniform_policy(mdp.num_states, mdp.num_actions);

  ClipConfig config;
  config.eps_l = o.eps_l;
  config.eps_h = o.eps_h;
  config.lambda = o.problem.lambda;
  config.regularizer = parse_regularizer(o.divergence);
  config.inner_steps = o.inner;
  config.outer_iterations = o.outer;
  config.step_scale = o.step_scale;
  config.fixed_step = o.fixed_step;
  config.init_noise = o.init_noise;
  try {
    validate_config(config);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }

  std::optional<double> v_star_u;
  if (!o.no_oracle) {
    const DivergenceSpec spec = divergence_of(config.regularizer);
    const OracleResult oracle = solve(mdp, pi_ref, spec, config.lambda, 1e-12, "auto");
    v_star_u = evaluate(mdp, oracle.pi_star, pi_ref, spec, config.lambda, u).value(u);
  }

  const RunResult result = run(mdp, pi_ref, u, rho, config, o.seed, v_star_u);
  std::ostringstream csv;
  write_log_csv(csv, result.log);
  emit(o.log, csv.str());
  if (!o.theta_out.empty()) write_text_file(o.theta_out, theta_to_json(result.theta).dump(2) + "\n");
  return kExitOk;
}

struct CheckOptions {
  std::string suite = "all";
  std::uint64_t seed = 7;
  std::optional<int> trials;
  std::string divergence;
  std::string out;
};

int run_check(const CheckOptions& o) {
  const std::vector<std::string> suites = {"grad", "score", "pdl", "smooth", "loja", "oracle", "rates"};
  const bool all = o.suite == "all";
  if (!all && std::find(suites.begin(), suites.end(), o.suite) == suites.end()) {
    throw InputError("unknown suite " + o.suite);
  }
  if (o.trials && *o.trials < 1) throw InputError("trials must be >= 1");
  std::vector<DivergenceSpec> specs(checks::all_divergences().begin(), checks::all_divergences().end());
  if (!o.divergence.empty()) specs = {parse_spec(o.divergence)};
  auto trials = [&](int fallback) { return o.trials.value_or(fallback); };
  auto wants = [&](const char* name) { return all || o.suite == name; };

  std::vector<CheckReport> reports;
  if (wants("grad")) reports.push_back(check_gradient(o.seed, trials(100)));
  if (wants("score")) reports.push_back(check_score_bounds(o.seed, trials(10000)));
  if (wants("pdl")) reports.push_back(check_performance_difference(o.seed, trials(100)));
  if (wants("smooth")) {
    for (const DivergenceSpec& s : specs) reports.push_back(check_smoothness(o.seed, trials(1000), s));
  }
  if (wants("loja")) {
    for (const DivergenceSpec& s : specs) reports.push_back(check_lojasiewicz(o.seed, trials(1000), s));
  }
  if (wants("oracle")) reports.push_back(check_oracles(o.seed, trials(20)));
  if (wants("rates")) {
    reports.push_back(check_descent_and_rates(o.seed, forward_rate_preset()));
    RateCheckConfig reverse = reverse_rate_preset();
    reports.push_back(check_descent_and_rates(o.seed, reverse));
    reverse.near_optimal_init = true;
    reports.push_back(check_descent_and_rates(o.seed, reverse));
  }

  long violations = 0;
  Json out;
  out["suite"] = o.suite;
  out["seed"] = o.seed;
  Json list = Json::array();
  for (const CheckReport& r : reports) {
    if (!r.informational) violations += r.violations();
    list.push_back(report_to_json(r));
  }
  out["violations"] = violations;
  out["passed"] = violations == 0;
  out["reports"] = std::move(list);
  emit(o.out, out.dump(2) + "\n");
  for (const CheckReport& r : reports) {
    std::cerr << (r.passed() ? "PASS " : "FAIL ") << r.check_name << " (" << r.instances_run()
              << " instances, " << r.violations() << " violations)\n";
  }
  return violations == 0 ? kExitOk : kExitViolations;
}

struct OracleCliOptions {
  ProblemOptions problem;
  std::string divergence = "reverse-kl";
  std::string solver = "auto";
  double tol = 1e-10;
  std::string out;
};

int run_oracle(const OracleCliOptions& o) {
  const Mdp mdp = load_problem_mdp(o.problem);
  validate_lambda(o.problem.lambda);
  if (!(o.tol > 0.0)) throw InputError("tol must be positive");
  const DivergenceSpec spec = parse_spec(o.divergence);
  const PolicyTable pi_ref = uniform_policy(mdp.num_states, mdp.num_actions);
  const OracleResult r = solve(mdp, pi_ref, spec, o.problem.lambda, o.tol, o.solver);
  Json out = oracle_to_json(r);
  out["divergence"] = to_string(spec);
  out["lambda"] = o.problem.lambda;
  emit(o.out, out.dump(2) + "\n");
  return kExitOk;
}

struct ConstantsOptions {
  ProblemOptions problem;
  std::string divergence = "forward-kl";
  double eps_l = 0.2;
  double eps_h = 0.2;
  std::string oracle;
  std::optional<double> v0;
  std::string policy;
  std::string out;
};

int run_constants(const ConstantsOptions& o) {
  const Mdp mdp = load_problem_mdp(o.problem);
  validate_lambda(o.problem.lambda);
  const Vector u = parse_weights(o.problem.u, mdp.num_states, "u");
  make_distribution(u, DistributionRole::kGradient);
  const PolicyTable pi_ref = uniform_policy(mdp.num_states, mdp.num_actions);
  const Regularizer reg = parse_regularizer(o.divergence);
  if (!(o.eps_l > 0.0 && o.eps_l < 1.0 && o.eps_h > 0.0)) throw InputError("need 0 < eps-l < 1 and eps-h > 0");

  std::optional<OracleResult> oracle;
  if (!o.oracle.empty()) {
    const Json j = read_json_file(o.oracle);
    oracle = oracle_from_json(j);
    if (oracle->pi_star.num_states() != mdp.num_states || oracle->pi_star.num_actions() != mdp.num_actions) {
      throw InputError("oracle policy does not match the MDP");
    }
    // The optimum depends on the divergence and lambda, so a mismatched file is a usage error.
    if (j.contains("divergence") && j["divergence"] != o.divergence) {
      throw InputError("oracle was solved for " + j["divergence"].get<std::string>() + ", not " + o.divergence);
    }
    if (j.contains("lambda") && j["lambda"].get<double>() != o.problem.lambda) {
      throw InputError("oracle was solved for a different lambda");
    }
  }

  Json out;
  out["divergence"] = o.divergence;
  out["lambda"] = o.problem.lambda;
  if (oracle) out["v_star_u"] = oracle->v_star.dot(u);
  if (reg == Regularizer::kForwardKl) {
    out["budget"] = budget_to_json(step_budget_forward_kl(mdp, pi_ref, o.problem.lambda, u, o.eps_l, o.eps_h,
                                                          o.v0, oracle ? &oracle->pi_star : nullptr));
  } else {
    PolicyTable anchor = pi_ref;
    if (!o.policy.empty()) anchor = policy_from_params(theta_from_json(read_json_file(o.policy)));
    if (anchor.num_states() != mdp.num_states || anchor.num_actions() != mdp.num_actions) {
      throw InputError("policy logits do not match the MDP");
    }
    out["budget"] =
        budget_to_json(step_budget_reverse_kl(mdp, pi_ref, o.problem.lambda, anchor, o.eps_l, o.eps_h));
  }
  emit(o.out, out.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Appends `--key value` for every config entry whose flag is not already on the command line.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + i);
      break;
    }
  }
  if (path.empty()) return args;
  const Json config = read_json_file(path);
  if (!config.is_object()) throw InputError(path + ": config must be a JSON object");
  auto present = [&](const std::string& flag) {
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  for (const auto& [key, value] : config.items()) {
    const std::string flag = "--" + key;
    if (present(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else {
      throw InputError(path + ": value for '" + key + "' must be a string, number or boolean");
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized PPO-Clip on tabular MDPs", "regppo_cli"};
  app.require_subcommand(1);
  app.add_option("--config", "JSON object of flag values; explicit flags take precedence");

  RandomMdpOptions random_opts;
  CLI::App* random_cmd = app.add_subcommand("random-mdp", "Write a seeded random MDP as JSON");
  random_cmd->add_option("--seed", random_opts.seed, "Generator seed")->capture_default_str();
  random_cmd->add_option("--states", random_opts.states, "Number of states")->capture_default_str();
  random_cmd->add_option("--actions", random_opts.actions, "Number of actions")->capture_default_str();
  random_cmd->add_option("--gamma", random_opts.gamma, "Discount factor")->capture_default_str();
  random_cmd->add_option("--r-max", random_opts.r_max, "Reward bound")->capture_default_str();
  random_cmd->add_option("--out", random_opts.out, "Output path (default stdout)");

  TrainOptions train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "Run PPO-Clip and write the per-iteration CSV log");
  add_problem_options(train_cmd, train_opts.problem);
  train_cmd->add_option("--divergence", train_opts.divergence, "forward-kl or reverse-kl")->capture_default_str();
  train_cmd->add_option("--eps-l", train_opts.eps_l, "Lower clip width")->capture_default_str();
  train_cmd->add_option("--eps-h", train_opts.eps_h, "Upper clip width")->capture_default_str();
  train_cmd->add_option("--outer", train_opts.outer, "Outer iterations N")->capture_default_str();
  train_cmd->add_option("--inner", train_opts.inner, "Inner steps K")->capture_default_str();
  train_cmd->add_option("--step-scale", train_opts.step_scale, "Multiplier on the budgeted step")
      ->capture_default_str();
  train_cmd->add_option("--fixed-step", train_opts.fixed_step, "Total inner step per outer iteration (overrides the budget)");
  train_cmd->add_option("--seed", train_opts.seed, "Seed for the initial-logit noise")->capture_default_str();
  train_cmd->add_option("--init-noise", train_opts.init_noise, "Uniform noise added to the initial logits")
      ->capture_default_str();
  train_cmd->add_flag("--no-oracle", train_opts.no_oracle, "Skip the optimum; delta_n is left empty");
  train_cmd->add_option("--log", train_opts.log, "CSV output path (default stdout)");
  train_cmd->add_option("--theta-out", train_opts.theta_out, "Write the final logits as JSON");

  CheckOptions check_opts;
  CLI::App* check_cmd = app.add_subcommand("check", "Audit the theoretical guarantees numerically");
  check_cmd->add_option("--suite", check_opts.suite, "all, grad, score, pdl, smooth, loja, oracle or rates")
      ->capture_default_str();
  check_cmd->add_option("--seed", check_opts.seed, "Seed for all generated instances")->capture_default_str();
  check_cmd->add_option("--trials", check_opts.trials, "Trials per suite (default: per-suite desk scale)");
  check_cmd->add_option("--divergence", check_opts.divergence, "Restrict smooth and loja to one divergence");
  check_cmd->add_option("--out", check_opts.out, "JSON report path (default stdout)");

  OracleCliOptions oracle_opts;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "Solve for the regularized optimum");
  add_problem_options(oracle_cmd, oracle_opts.problem);
  oracle_cmd->add_option("--divergence", oracle_opts.divergence, "alpha:<a>, reverse-kl, forward-kl, js or chi2")
      ->capture_default_str();
  oracle_cmd->add_option("--solver", oracle_opts.solver, "auto, soft or general")->capture_default_str();
  oracle_cmd->add_option("--tol", oracle_opts.tol, "Bellman residual tolerance")->capture_default_str();
  oracle_cmd->add_option("--out", oracle_opts.out, "JSON output path (default stdout)");

  ConstantsOptions const_opts;
  CLI::App* const_cmd = app.add_subcommand("constants", "Report the step-size budget and its constants");
  add_problem_options(const_cmd, const_opts.problem);
  const_cmd->add_option("--divergence", const_opts.divergence, "forward-kl or reverse-kl")->capture_default_str();
  const_cmd->add_option("--eps-l", const_opts.eps_l, "Lower clip width")->capture_default_str();
  const_cmd->add_option("--eps-h", const_opts.eps_h, "Upper clip width")->capture_default_str();
  const_cmd->add_option("--oracle", const_opts.oracle, "Oracle JSON for the same divergence and lambda; forward KL then reports the linear-rate constant");
  const_cmd->add_option("--v0", const_opts.v0, "Initial value V~(u) (default: value of pi_ref)");
  const_cmd->add_option("--policy", const_opts.policy, "Anchor logits JSON for reverse KL (default pi_ref)");
  const_cmd->add_option("--out", const_opts.out, "JSON output path (default stdout)");

  try {
    std::vector<std::string> args = merge_config(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*random_cmd) return run_random_mdp(random_opts);
    if (*train_cmd) return run_train(train_opts);
    if (*check_cmd) return run_check(check_opts);
    if (*oracle_cmd) return run_oracle(oracle_opts);
    if (*const_cmd) return run_constants(const_opts);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitViolations;
  }
  return kExitUsage;
}
