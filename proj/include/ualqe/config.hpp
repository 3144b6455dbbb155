#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ualqe/agent.hpp"
#include "ualqe/envs.hpp"

namespace ualqe {

using Json = nlohmann::json;

struct EnvConfig {
  std::string name = "lqr";  // "lqr" or "pendulum"
  LqrParams lqr = LqrParams::scalar(0.9, 0.5, 1.0, 0.1);
  int pendulum_horizon = 200;
};

struct RankScanConfig {
  int num_matrices = 100;
  int matrix_size = 64;
  double delta = 0.01;
};

struct ExperimentConfig {
  EnvConfig env;
  AgentConfig agent;
  int total_steps = 30000;
  int eval_interval = 1000;
  int eval_episodes = 5;
  RankScanConfig rank_scan;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  // Extra checkpoint steps; the midpoint and the final step are always saved.
  std::vector<int> checkpoint_steps;
  // When false, metrics.csv carries 0 in wall_time and real timings go to timing.csv.
  bool record_wall_time = false;

  void validate() const;
};

Json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const Json& j);
Json to_json(const EnvSpec& s);
EnvSpec env_spec_from_json(const Json& j);
Json to_json(const EnvConfig& c);
EnvConfig env_config_from_json(const Json& j);
Json to_json(const ExperimentConfig& c);
/// Missing keys take defaults; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// The environment a config describes; the discount comes from the agent config.
std::unique_ptr<Environment> make_environment(const EnvConfig& env, double gamma, std::uint64_t seed);

}  // namespace ualqe
