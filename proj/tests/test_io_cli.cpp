#include "test_support.hpp"

#include <regppo/io.hpp>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace regppo;
using namespace regppo::testing;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("regppo_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with stdout and stderr captured into files; returns the exit code.
  int run(const std::string& args, const std::string& tag = "out") {
    const std::string cmd = std::string("\"") + REGPPO_CLI_PATH + "\" " + args + " > \"" + path(tag + ".stdout") +
                            "\" 2> \"" + path(tag + ".stderr") + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string out(const std::string& tag = "out") const { return slurp(dir_ / (tag + ".stdout")); }
  std::string err(const std::string& tag = "out") const { return slurp(dir_ / (tag + ".stderr")); }
  void write(const std::string& name, const std::string& text) const { write_text_file(path(name), text); }

  fs::path dir_;
};

}  // namespace

TEST(Io, MdpRoundTrip) {
  const Mdp mdp = random_mdp(5, 3, 2, 2.0, 0.85);
  const Mdp back = mdp_from_json(Json::parse(mdp_to_json(mdp).dump()));
  EXPECT_EQ(back.num_states, 3);
  EXPECT_EQ(back.num_actions, 2);
  EXPECT_EQ(back.gamma, 0.85);
  EXPECT_EQ(back.r_max, 2.0);
  EXPECT_EQ(back.transition, mdp.transition);
  EXPECT_EQ(back.reward, mdp.reward);
}

TEST(Io, ThetaRoundTripIsExact) {
  std::mt19937_64 rng(1);
  const PolicyParams theta{random_logits(rng, 3, 4, 10.0)};
  EXPECT_EQ(theta_from_json(Json::parse(theta_to_json(theta).dump())).theta, theta.theta);
}

TEST(Io, OracleRoundTrip) {
  const Mdp mdp = random_mdp(2, 3, 3, 1.0, 0.9);
  const OracleResult r = soft_value_iteration(mdp, uniform_policy(3, 3), 0.1);
  const OracleResult back = oracle_from_json(Json::parse(oracle_to_json(r).dump()));
  EXPECT_EQ(back.v_star, r.v_star);
  EXPECT_LT((back.pi_star.probs - r.pi_star.probs).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(back.iterations, r.iterations);
}

TEST(Io, RejectsInvalidMdp) {
  Json j = mdp_to_json(random_mdp(3, 2, 2, 1.0, 0.9));
  Json bad_gamma = j;
  bad_gamma["gamma"] = 1.0;
  EXPECT_THROW(mdp_from_json(bad_gamma), InputError);
  Json bad_row = j;
  bad_row["transition"][0][0][0] = 0.7;
  EXPECT_THROW(mdp_from_json(bad_row), InputError);
  Json bad_reward = j;
  bad_reward["reward"][1][1] = 5.0;
  EXPECT_THROW(mdp_from_json(bad_reward), InputError);
  Json missing = j;
  missing.erase("reward");
  EXPECT_THROW(mdp_from_json(missing), InputError);
  EXPECT_THROW(load_mdp("/nonexistent/regppo.json"), InputError);
}

TEST(Io, CsvHeaderAndEmptyDelta) {
  IterateLog row;
  row.n = 1;
  row.value_u = 0.5;
  row.value_rho = 0.25;
  row.grad_norm = 0.125;
  row.min_policy = 0.3;
  row.s_max_n = 2.0;
  row.clip_fraction = 0.0;
  std::ostringstream os;
  write_log_csv(os, {row});
  const std::vector<std::string> lines = lines_of(os.str());
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "n,value_u,value_rho,grad_norm,delta_n,min_policy,s_max_n,clip_fraction");
  EXPECT_EQ(lines[1], "1,0.5,0.25,0.125,,0.29999999999999999,2,0");
}

TEST_F(Cli, TrainWritesHeaderAndOneRowPerIteration) {
  ASSERT_EQ(run("train --mdp random:1,3,3 --outer 200 --inner 10"), 0) << err();
  const std::vector<std::string> lines = lines_of(out());
  ASSERT_EQ(lines.size(), 201u);
  EXPECT_EQ(lines[0], kLogHeader);
  EXPECT_EQ(lines[1].substr(0, 2), "1,");
  EXPECT_EQ(lines[200].substr(0, 4), "200,");
}

TEST_F(Cli, TrainLogAndThetaFiles) {
  ASSERT_EQ(run("train --divergence reverse-kl --outer 5 --log " + path("log.csv") + " --theta-out " +
                path("theta.json")),
            0)
      << err();
  EXPECT_EQ(lines_of(slurp(path("log.csv"))).size(), 6u);
  EXPECT_EQ(theta_from_json(read_json_file(path("theta.json"))).theta.rows(), 3);
}

TEST_F(Cli, TrainWithoutOracleLeavesDeltaEmpty) {
  ASSERT_EQ(run("train --outer 3 --no-oracle"), 0) << err();
  const std::vector<std::string> lines = lines_of(out());
  ASSERT_EQ(lines.size(), 4u);
  for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_NE(lines[i].find(",,"), std::string::npos) << lines[i];
}

TEST_F(Cli, CheckIsDeterministic) {
  ASSERT_EQ(run("check --suite all --seed 7 --trials 2", "a"), 0) << err("a");
  ASSERT_EQ(run("check --suite all --seed 7 --trials 2", "b"), 0) << err("b");
  EXPECT_EQ(out("a"), out("b"));
  const Json j = Json::parse(out("a"));
  EXPECT_EQ(j.at("violations").get<long>(), 0);
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_NE(err("a").find("PASS"), std::string::npos);
}

TEST_F(Cli, CheckSingleSuiteToFile) {
  ASSERT_EQ(run("check --suite smooth --divergence chi2 --trials 5 --out " + path("r.json")), 0) << err();
  const Json j = read_json_file(path("r.json"));
  ASSERT_EQ(j.at("reports").size(), 1u);
  EXPECT_EQ(j.at("reports")[0].at("violations").get<long>(), 0);
}

TEST_F(Cli, BadInputExitsWithUsageCode) {
  EXPECT_EQ(run("train --lambda -1"), 2);
  EXPECT_EQ(run("train --bogus-flag 3"), 2);
  EXPECT_EQ(run("train --mdp " + path("missing.json")), 2);
  EXPECT_EQ(run("check --suite nonsense"), 2);
  EXPECT_EQ(run("oracle --divergence hellinger"), 2);
  write("bad.json", R"({"num_states": 1, "num_actions": 1, "gamma": 0.9, "transition": [[[0.5]]], "reward": [[0]]})");
  EXPECT_EQ(run("oracle --mdp " + path("bad.json")), 2);
  EXPECT_FALSE(err().empty());
}

TEST_F(Cli, RandomMdpMatchesLibrary) {
  ASSERT_EQ(run("random-mdp --seed 4 --states 2 --actions 3 --out " + path("m.json")), 0) << err();
  const Mdp cli = load_mdp(path("m.json"));
  const Mdp lib = random_mdp(4, 2, 3, 1.0, cli.gamma);
  EXPECT_EQ(cli.transition, lib.transition);
  EXPECT_EQ(cli.reward, lib.reward);
}

TEST_F(Cli, OracleFeedsForwardConstants) {
  ASSERT_EQ(run("random-mdp --seed 3 --out " + path("m.json")), 0) << err();
  ASSERT_EQ(run("oracle --mdp " + path("m.json") + " --divergence forward-kl --lambda 0.1 --out " +
                path("o.json")),
            0)
      << err();
  const std::string mdp_before = slurp(path("m.json"));
  const std::string oracle_before = slurp(path("o.json"));
  ASSERT_EQ(run("constants --mdp " + path("m.json") + " --divergence forward-kl --lambda 0.1 --oracle " +
                path("o.json")),
            0)
      << err();
  const Json j = Json::parse(out());
  EXPECT_TRUE(j.at("budget").at("lojasiewicz_c").is_number());
  EXPECT_GT(j.at("budget").at("s_max").get<double>(), 0.0);
  EXPECT_TRUE(j.at("v_star_u").is_number());
  // Inputs are read, never rewritten.
  EXPECT_EQ(slurp(path("m.json")), mdp_before);
  EXPECT_EQ(slurp(path("o.json")), oracle_before);
}

TEST_F(Cli, ConstantsRejectsMismatchedOracle) {
  ASSERT_EQ(run("oracle --divergence reverse-kl --lambda 0.1 --out " + path("o.json")), 0) << err();
  EXPECT_EQ(run("constants --divergence forward-kl --lambda 0.1 --oracle " + path("o.json")), 2);
  ASSERT_EQ(run("oracle --divergence forward-kl --lambda 0.2 --out " + path("o2.json")), 0) << err();
  EXPECT_EQ(run("constants --divergence forward-kl --lambda 0.1 --oracle " + path("o2.json")), 2);
}

TEST_F(Cli, ReverseConstantsWithoutOracle) {
  ASSERT_EQ(run("constants --divergence reverse-kl --lambda 0.5"), 0) << err();
  const Json j = Json::parse(out());
  EXPECT_EQ(j.at("budget").at("caps").size(), 2u);
  EXPECT_TRUE(j.at("budget").at("lojasiewicz_c").is_null());
}

TEST_F(Cli, ExplicitFlagsOverrideConfig) {
  write("cfg.json", R"({"outer": 4, "lambda": 0.3, "no-oracle": true})");
  ASSERT_EQ(run("train --config " + path("cfg.json"), "cfg"), 0) << err("cfg");
  EXPECT_EQ(lines_of(out("cfg")).size(), 5u);
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --outer 2", "override"), 0) << err("override");
  EXPECT_EQ(lines_of(out("override")).size(), 3u);
  ASSERT_EQ(run("train --outer 4 --lambda 0.3 --no-oracle", "flags"), 0) << err("flags");
  EXPECT_EQ(out("cfg"), out("flags"));
}

TEST_F(Cli, TrainMatchesLibraryRun) {
  ASSERT_EQ(run("train --mdp random:2,3,2 --gamma 0.9 --lambda 0.1 --outer 10"), 0) << err();
  const Mdp mdp = random_mdp(2, 3, 2, 1.0, 0.9);
  const PolicyTable ref = uniform_policy(3, 2);
  const Vector u = Vector::Constant(3, 1.0 / 3.0);
  ClipConfig cfg;
  cfg.lambda = 0.1;
  cfg.regularizer = Regularizer::kForwardKl;
  cfg.outer_iterations = 10;
  const RunResult r = regppo::run(mdp, ref, u, u, cfg, 0);
  const std::vector<std::string> lines = lines_of(out());
  ASSERT_EQ(lines.size(), 11u);
  std::ostringstream expected;
  expected << std::setprecision(17) << r.log.back().value_u;
  EXPECT_EQ(lines.back().substr(0, lines.back().find(',', 3)), "10," + expected.str());
}
