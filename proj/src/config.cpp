#include "ualqe/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace ualqe {

namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

// A bare number is read as a 1x1 matrix.
Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& name) {
  if (j.is_number()) return Eigen::MatrixXd::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw std::invalid_argument("matrix '" + name + "' must be a number or non-empty nested array");
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw std::invalid_argument("matrix '" + name + "' is ragged");
    for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string schedule_name(ShrinkageSchedule s) { return s == ShrinkageSchedule::kFixedFromInput ? "fixed" : "per_iteration"; }

ShrinkageSchedule schedule_from_name(const std::string& s) {
  if (s == "fixed") return ShrinkageSchedule::kFixedFromInput;
  if (s == "per_iteration") return ShrinkageSchedule::kPerIteration;
  throw std::invalid_argument("unknown shrinkage schedule '" + s + "'");
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Json to_json(const AgentConfig& c) {
  Json j;
  j["variant"] = to_string(c.variant);
  j["batch_size"] = c.batch_size;
  j["p"] = c.p;
  j["beta"] = c.beta;
  j["ensemble_size"] = c.ensemble_size;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["actor_lr"] = c.actor_lr;
  j["critic_lr"] = c.critic_lr;
  j["exploration_sigma"] = c.exploration_sigma ? Json(*c.exploration_sigma) : Json(nullptr);
  j["hidden"] = c.hidden;
  j["soft_impute"] = {{"zeta", c.soft_impute.zeta},
                      {"epsilon", c.soft_impute.epsilon},
                      {"max_iterations", c.soft_impute.max_iterations},
                      {"schedule", schedule_name(c.soft_impute.schedule)}};
  j["bootstrap_at_horizon"] = c.bootstrap_at_horizon;
  j["episodic_updates"] = c.episodic_updates;
  j["replay_capacity"] = c.replay_capacity;
  return j;
}

AgentConfig agent_config_from_json(const Json& j) {
  reject_unknown(j,
                 {"variant", "batch_size", "p", "beta", "ensemble_size", "gamma", "tau", "actor_lr", "critic_lr",
                  "exploration_sigma", "hidden", "soft_impute", "bootstrap_at_horizon", "episodic_updates",
                  "replay_capacity"},
                 "agent");
  AgentConfig c;
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "p", c.p);
  read_opt(j, "beta", c.beta);
  read_opt(j, "ensemble_size", c.ensemble_size);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "tau", c.tau);
  read_opt(j, "actor_lr", c.actor_lr);
  read_opt(j, "critic_lr", c.critic_lr);
  if (j.contains("exploration_sigma") && !j.at("exploration_sigma").is_null())
    c.exploration_sigma = j.at("exploration_sigma").get<double>();
  read_opt(j, "hidden", c.hidden);
  if (j.contains("soft_impute")) {
    const Json& s = j.at("soft_impute");
    reject_unknown(s, {"zeta", "epsilon", "max_iterations", "schedule"}, "agent.soft_impute");
    read_opt(s, "zeta", c.soft_impute.zeta);
    read_opt(s, "epsilon", c.soft_impute.epsilon);
    read_opt(s, "max_iterations", c.soft_impute.max_iterations);
    if (s.contains("schedule")) c.soft_impute.schedule = schedule_from_name(s.at("schedule").get<std::string>());
  }
  read_opt(j, "bootstrap_at_horizon", c.bootstrap_at_horizon);
  read_opt(j, "episodic_updates", c.episodic_updates);
  read_opt(j, "replay_capacity", c.replay_capacity);
  return c;
}

Json to_json(const EnvSpec& s) {
  return {{"state_dim", s.state_dim},
          {"action_dim", s.action_dim},
          {"action_low", vector_to_json(s.action_low)},
          {"action_high", vector_to_json(s.action_high)},
          {"state_low", vector_to_json(s.state_low)},
          {"state_high", vector_to_json(s.state_high)},
          {"horizon", s.horizon},
          {"gamma", s.gamma}};
}

EnvSpec env_spec_from_json(const Json& j) {
  EnvSpec s;
  s.state_dim = j.at("state_dim").get<int>();
  s.action_dim = j.at("action_dim").get<int>();
  s.action_low = vector_from_json(j.at("action_low"));
  s.action_high = vector_from_json(j.at("action_high"));
  s.state_low = vector_from_json(j.at("state_low"));
  s.state_high = vector_from_json(j.at("state_high"));
  s.horizon = j.at("horizon").get<int>();
  s.gamma = j.at("gamma").get<double>();
  s.validate();
  return s;
}

Json to_json(const EnvConfig& c) {
  if (c.name == "pendulum") return {{"name", c.name}, {"horizon", c.pendulum_horizon}};
  return {{"name", c.name},
          {"a", matrix_to_json(c.lqr.a)},
          {"b", matrix_to_json(c.lqr.b)},
          {"q", matrix_to_json(c.lqr.q)},
          {"r", matrix_to_json(c.lqr.r)},
          {"action_bound", c.lqr.action_bound},
          {"horizon", c.lqr.horizon}};
}

EnvConfig env_config_from_json(const Json& j) {
  EnvConfig c;
  c.name = j.at("name").get<std::string>();
  if (c.name == "pendulum") {
    reject_unknown(j, {"name", "horizon"}, "env");
    read_opt(j, "horizon", c.pendulum_horizon);
  } else if (c.name == "lqr") {
    reject_unknown(j, {"name", "a", "b", "q", "r", "action_bound", "horizon"}, "env");
    if (j.contains("a")) c.lqr.a = matrix_from_json(j.at("a"), "a");
    if (j.contains("b")) c.lqr.b = matrix_from_json(j.at("b"), "b");
    if (j.contains("q")) c.lqr.q = matrix_from_json(j.at("q"), "q");
    if (j.contains("r")) c.lqr.r = matrix_from_json(j.at("r"), "r");
    read_opt(j, "action_bound", c.lqr.action_bound);
    read_opt(j, "horizon", c.lqr.horizon);
  } else {
    throw std::invalid_argument("unknown environment '" + c.name + "'");
  }
  return c;
}

void ExperimentConfig::validate() const {
  agent.validate();
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
  if (total_steps % eval_interval != 0) throw std::invalid_argument("eval_interval must divide total_steps");
  if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  if (rank_scan.num_matrices < 0) throw std::invalid_argument("rank_scan.num_matrices must be >= 0");
  if (rank_scan.matrix_size < 1) throw std::invalid_argument("rank_scan.matrix_size must be >= 1");
  if (static_cast<std::size_t>(rank_scan.matrix_size) > agent.replay_capacity)
    throw std::invalid_argument("rank_scan.matrix_size exceeds the replay capacity");
  if (!(rank_scan.delta >= 0.0 && rank_scan.delta < 1.0)) throw std::invalid_argument("rank_scan.delta must lie in [0, 1)");
  if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  for (int s : checkpoint_steps)
    if (s < 0 || s > total_steps) throw std::invalid_argument("checkpoint step outside [0, total_steps]");
  // Constructing the environment checks its constants.
  make_environment(env, agent.gamma, 0);
}

Json to_json(const ExperimentConfig& c) {
  return {{"env", to_json(c.env)},
          {"agent", to_json(c.agent)},
          {"total_steps", c.total_steps},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes},
          {"rank_scan",
           {{"num_matrices", c.rank_scan.num_matrices}, {"matrix_size", c.rank_scan.matrix_size}, {"delta", c.rank_scan.delta}}},
          {"seeds", c.seeds},
          {"checkpoint_steps", c.checkpoint_steps},
          {"record_wall_time", c.record_wall_time}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  reject_unknown(j,
                 {"env", "agent", "total_steps", "eval_interval", "eval_episodes", "rank_scan", "seeds", "checkpoint_steps",
                  "record_wall_time"},
                 "config");
  ExperimentConfig c;
  if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
  if (j.contains("agent")) c.agent = agent_config_from_json(j.at("agent"));
  if (c.env.name == "pendulum" && !(j.contains("total_steps"))) c.total_steps = 50000;
  read_opt(j, "total_steps", c.total_steps);
  read_opt(j, "eval_interval", c.eval_interval);
  read_opt(j, "eval_episodes", c.eval_episodes);
  if (j.contains("rank_scan")) {
    const Json& r = j.at("rank_scan");
    reject_unknown(r, {"num_matrices", "matrix_size", "delta"}, "rank_scan");
    read_opt(r, "num_matrices", c.rank_scan.num_matrices);
    read_opt(r, "matrix_size", c.rank_scan.matrix_size);
    read_opt(r, "delta", c.rank_scan.delta);
  }
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "checkpoint_steps", c.checkpoint_steps);
  read_opt(j, "record_wall_time", c.record_wall_time);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return experiment_config_from_json(Json::parse(in));
}

std::unique_ptr<Environment> make_environment(const EnvConfig& env, double gamma, std::uint64_t seed) {
  if (env.name == "pendulum") return std::make_unique<PendulumEnv>(seed, env.pendulum_horizon, gamma);
  if (env.name == "lqr") {
    LqrParams p = env.lqr;
    p.gamma = gamma;
    return std::make_unique<LqrEnv>(p, seed);
  }
  throw std::invalid_argument("unknown environment '" + env.name + "'");
}

}  // namespace ualqe
