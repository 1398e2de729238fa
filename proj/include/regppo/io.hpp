#pragma once

#include "regppo/mdp.hpp"
#include "regppo/oracle.hpp"
#include "regppo/ppo_clip.hpp"
#include "regppo/regularized_eval.hpp"
#include "regppo/softmax_policy.hpp"
#include "regppo/theory_checks.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace regppo {

using Json = nlohmann::ordered_json;

/// Thrown for malformed or invalid input files.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {
inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Matrix matrix_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw InputError(std::string(what) + " must be a nested array");
  }
  Matrix m(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != j[0].size()) {
      throw InputError(std::string(what) + " rows have different lengths");
    }
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline Json optional_number(const std::optional<double>& x) {
  return x ? Json(*x) : Json(nullptr);
}

/// JSON has no infinities; non-finite values are written as null.
inline Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }
}  // namespace io_detail

inline Json mdp_to_json(const Mdp& mdp) {
  Json j;
  j["num_states"] = mdp.num_states;
  j["num_actions"] = mdp.num_actions;
  j["gamma"] = mdp.gamma;
  j["r_max"] = mdp.r_max;
  Json transition = Json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < mdp.num_actions; ++a) {
      Json row = Json::array();
      for (int t = 0; t < mdp.num_states; ++t) row.push_back(mdp.p(s, a, t));
      per_action.push_back(std::move(row));
    }
    transition.push_back(std::move(per_action));
  }
  j["transition"] = std::move(transition);
  j["reward"] = io_detail::matrix_to_json(mdp.reward);
  return j;
}

/// Parses and validates an MDP; any invariant violation is an InputError.
inline Mdp mdp_from_json(const Json& j) {
  Mdp mdp;
  try {
    mdp.num_states = j.at("num_states").get<int>();
    mdp.num_actions = j.at("num_actions").get<int>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.r_max = j.at("r_max").get<double>();
    const Json& tr = j.at("transition");
    if (mdp.num_states < 1 || mdp.num_actions < 1) throw InputError("dimensions must be positive");
    if (!tr.is_array() || tr.size() != static_cast<std::size_t>(mdp.num_states)) {
      throw InputError("transition must have num_states entries");
    }
    mdp.transition.resize(static_cast<Eigen::Index>(mdp.num_states) * mdp.num_actions, mdp.num_states);
    for (int s = 0; s < mdp.num_states; ++s) {
      if (!tr[s].is_array() || tr[s].size() != static_cast<std::size_t>(mdp.num_actions)) {
        throw InputError("transition[" + std::to_string(s) + "] must have num_actions entries");
      }
      for (int a = 0; a < mdp.num_actions; ++a) {
        const Json& row = tr[s][a];
        if (!row.is_array() || row.size() != static_cast<std::size_t>(mdp.num_states)) {
          throw InputError("transition[" + std::to_string(s) + "][" + std::to_string(a) +
                           "] must have num_states entries");
        }
        for (int t = 0; t < mdp.num_states; ++t) mdp.transition(mdp.row_index(s, a), t) = row[t].get<double>();
      }
    }
    mdp.reward = io_detail::matrix_from_json(j.at("reward"), "reward");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed MDP file: ") + e.what());
  }
  const std::vector<Violation> report = validate_mdp(mdp);
  if (!report.empty()) {
    std::string msg = "invalid MDP:";
    for (const Violation& v : report) msg += "\n  " + to_string(v);
    throw InputError(msg);
  }
  return mdp;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline Mdp load_mdp(const std::string& path) { return mdp_from_json(read_json_file(path)); }

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

inline Json theta_to_json(const PolicyParams& theta) { return io_detail::matrix_to_json(theta.theta); }

inline PolicyParams theta_from_json(const Json& j) {
  PolicyParams p{io_detail::matrix_from_json(j, "theta")};
  if (!p.theta.allFinite()) throw InputError("theta has non-finite entries");
  return p;
}

inline Json oracle_to_json(const OracleResult& r) {
  Json j;
  j["v_star"] = io_detail::vector_to_json(r.v_star);
  j["pi_star"] = io_detail::matrix_to_json(r.pi_star.probs);
  j["residual"] = r.residual;
  j["iterations"] = r.iterations;
  return j;
}

inline OracleResult oracle_from_json(const Json& j) {
  OracleResult r;
  try {
    r.pi_star = policy_from_probs(io_detail::matrix_from_json(j.at("pi_star"), "pi_star"));
    const Json& v = j.at("v_star");
    r.v_star.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r.v_star(i) = v[i].get<double>();
    r.residual = j.value("residual", 0.0);
    r.iterations = j.value("iterations", 0L);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed oracle file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("malformed oracle file: ") + e.what());
  }
  return r;
}

inline Json budget_to_json(const StepBudget& b) {
  using io_detail::number;
  using io_detail::optional_number;
  Json j;
  j["a_max"] = number(b.a_max);
  j["c_e"] = number(b.c_e);
  j["smooth_l"] = number(b.smooth_l);
  j["s_max"] = number(b.s_max);
  Json caps = Json::array();
  for (double c : b.caps) caps.push_back(number(c));
  j["caps"] = std::move(caps);
  j["c_a"] = optional_number(b.c_a);
  j["c_pi_floor"] = number(b.c_pi_floor);
  j["log_c_pi_floor"] = number(b.log_c_pi_floor);
  j["v0"] = optional_number(b.v0);
  j["lojasiewicz_c"] = optional_number(b.lojasiewicz_c);
  j["log_lojasiewicz_c"] = optional_number(b.log_lojasiewicz_c);
  return j;
}

inline Json report_to_json(const CheckReport& r) {
  Json j;
  j["check_name"] = r.check_name;
  j["seed"] = r.seed;
  j["instances_run"] = r.instances_run();
  j["worst_slack"] = io_detail::number(r.worst_slack());
  j["violations"] = r.violations();
  j["informational"] = r.informational;
  Json parts = Json::array();
  for (const Tally& t : r.parts) {
    Json p;
    p["name"] = t.name;
    p["instances"] = t.instances;
    p["worst_slack"] = io_detail::number(t.worst_slack);
    p["violations"] = t.violations;
    p["messages"] = t.messages;
    parts.push_back(std::move(p));
  }
  j["parts"] = std::move(parts);
  Json metrics = Json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = io_detail::number(v);
  j["metrics"] = std::move(metrics);
  return j;
}

inline constexpr const char* kLogHeader =
    "n,value_u,value_rho,grad_norm,delta_n,min_policy,s_max_n,clip_fraction";

/// CSV with the fixed column order of kLogHeader; an absent delta_n is an empty field.
inline void write_log_csv(std::ostream& out, const std::vector<IterateLog>& log) {
  out << kLogHeader << '\n';
  out << std::setprecision(17);
  for (const IterateLog& r : log) {
    out << r.n << ',' << r.value_u << ',' << r.value_rho << ',' << r.grad_norm << ',';
    if (r.delta_n) out << *r.delta_n;
    out << ',' << r.min_policy << ',' << r.s_max_n << ',' << r.clip_fraction << '\n';
  }
}

}  // namespace regppo
