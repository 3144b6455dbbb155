#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ualqe/completion.hpp"
#include "ualqe/envs.hpp"
#include "ualqe/linalg.hpp"
#include "ualqe/nn.hpp"
#include "ualqe/rng.hpp"
#include "ualqe/uncertainty.hpp"

namespace ualqe {

enum class Variant { kDdpg, kSvrlE, kSvrlT, kUalqeECb, kUalqeEBb, kUalqeTCb, kUalqeTBb };

inline constexpr Variant kAllVariants[] = {Variant::kDdpg,     Variant::kSvrlE,    Variant::kSvrlT,   Variant::kUalqeECb,
                                           Variant::kUalqeEBb, Variant::kUalqeTCb, Variant::kUalqeTBb};

std::string to_string(Variant v);
/// Accepts "DDPG", "SVRL-E", "UALQE-T-BB", "UA-LQE-T-BB" (case-insensitive).
Variant variant_from_string(const std::string& name);

bool reconstructs_evaluation(Variant v);
bool reconstructs_target(Variant v);
bool uses_count_uncertainty(Variant v);
bool uses_ensemble_uncertainty(Variant v);
bool uses_random_removal(Variant v);

struct AgentConfig {
  Variant variant = Variant::kDdpg;
  int batch_size = 64;
  double p = 20.0;  // removal percentage per row
  double beta = 0.1;
  int ensemble_size = 10;
  double gamma = 0.99;
  double tau = 0.001;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::optional<double> exploration_sigma;  // default: 0.1 * (high - low) / 2
  std::vector<int> hidden = {200, 200};
  SoftImputeConfig soft_impute;
  bool bootstrap_at_horizon = true;
  bool episodic_updates = false;
  std::size_t replay_capacity = 100000;

  void validate() const;
};

/// Column-per-transition view of a sampled mini-batch.
struct Batch {
  Eigen::MatrixXd states;       // d_s x N
  Eigen::MatrixXd actions;      // d_a x N
  Eigen::VectorXd rewards;      // N
  Eigen::MatrixXd next_states;  // d_s x N
  Eigen::VectorXd continues;    // N; 0 where the bootstrap term is masked

  int size() const { return static_cast<int>(rewards.size()); }
};

Batch make_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices, bool bootstrap_at_horizon);

enum class QMatrixKind { kEvaluation, kTarget };

struct QMatrixPair {
  Matrix matrix;
  StateActionGrid grid;
  QMatrixKind kind = QMatrixKind::kEvaluation;
};

/// Critic inputs for every grid entry, column (i * cols + j) = [state_i; action_j].
Eigen::MatrixXd grid_inputs(const StateActionGrid& grid);
Matrix evaluate_grid(const Mlp& critic, const StateActionGrid& grid);
Eigen::MatrixXd critic_inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions);

/// Evaluation kind: Q_theta(s_i, a_j). Target kind: Q_target(s'_i, pi_target(s'_j)).
QMatrixPair build_q_matrix(const Batch& batch, QMatrixKind kind, const Mlp& critic, const Mlp& target_critic,
                           const Mlp& target_actor);

struct CriticLoss {
  double loss = 0.0;
  Gradients grads;
};

/// r + gamma * continue * Q_target(s', pi_target(s')).
Eigen::VectorXd td_targets(const Batch& batch, const Mlp& target_critic, const Mlp& target_actor, double gamma);
/// Mean squared error of Q_theta(s_i, a_i) against fixed targets.
CriticLoss regression_loss(const Batch& batch, const Mlp& critic, const Eigen::VectorXd& targets);
CriticLoss td_loss(const Batch& batch, const Mlp& critic, const Mlp& target_critic, const Mlp& target_actor, double gamma);
/// Targets r_i + gamma * continue_i * reconstructed(i, i).
CriticLoss loss_t(const Batch& batch, const Mlp& critic, const Matrix& reconstructed_target, double gamma);
/// weight * mean over all N^2 entries of (evaluated - reconstructed)^2, reconstructed held constant.
CriticLoss loss_e(const QMatrixPair& evaluation, const Matrix& reconstructed, const Mlp& critic, double weight = 1.0);

struct ActorGradient {
  Gradients ascent;        // gradient of mean_i Q(s_i, pi(s_i)) w.r.t. actor parameters
  Eigen::MatrixXd dq_da;   // d_a x N, dQ/da at a = pi(s_i)
  double objective = 0.0;  // mean_i Q(s_i, pi(s_i))
};

ActorGradient actor_update(const Batch& batch, const Mlp& actor, const Mlp& critic);

struct StepMetrics {
  double critic_loss = 0.0;
  double reconstruction_loss = 0.0;  // unweighted L_E when the evaluation matrix is reconstructed
  double actor_objective = 0.0;
  std::size_t removed_entries = 0;
  int completion_iterations = 0;
  bool completion_converged = true;
  bool matrices_built = false;
};

/// A K-member critic ensemble trained by plain TD alongside the primal critic.
struct EnsembleMember {
  Mlp critic;
  Mlp target;
  AdamState adam;
  std::uint64_t updates = 0;
};

class Agent {
 public:
  Agent(AgentConfig config, const EnvSpec& spec, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  const EnvSpec& env_spec() const { return spec_; }

  Eigen::VectorXd act(const Eigen::VectorXd& state) const;
  Eigen::VectorXd explore(const Eigen::VectorXd& state);

  /// One update in order: critic, actor, targets, then the uncertainty estimator.
  StepMetrics train_step(const ReplayBuffer& buffer);

  /// Entries to erase from a Q-matrix under this agent's variant.
  RemovalSet choose_removal(const QMatrixPair& q);

  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  const Mlp& target_actor() const { return target_actor_; }
  const Mlp& target_critic() const { return target_critic_; }
  Mlp& mutable_critic() { return critic_; }
  Mlp& mutable_actor() { return actor_; }
  const std::vector<EnsembleMember>& ensemble() const { return ensemble_; }
  const CountTable& count_table() const { return counts_; }
  std::uint64_t critic_updates() const { return critic_updates_; }

  /// Per-member Q-matrices of the ensemble; empty when there is no ensemble.
  std::vector<Matrix> ensemble_matrices(const StateActionGrid& grid) const;

  void save(const std::filesystem::path& dir) const;
  static Agent load(const std::filesystem::path& dir);

 private:
  AgentConfig cfg_;
  EnvSpec spec_;
  std::uint64_t seed_;
  Mlp actor_;
  Mlp critic_;
  Mlp target_actor_;
  Mlp target_critic_;
  AdamState actor_adam_;
  AdamState critic_adam_;
  std::vector<EnsembleMember> ensemble_;
  CountTable counts_;
  Rng explore_rng_;
  Rng sample_rng_;
  Rng removal_rng_;
  std::uint64_t critic_updates_ = 0;

  void update_uncertainty_estimator(const Batch& batch);
};

/// Train a fresh K-member ensemble on buffer samples by TD against a fixed
/// policy; gives the BB quantifier to an agent that never kept one.
std::vector<EnsembleMember> fit_ensemble(const ReplayBuffer& buffer, const Mlp& policy, const AgentConfig& cfg,
                                         const EnvSpec& spec, int steps, std::uint64_t seed);

std::vector<Matrix> member_matrices(const std::vector<EnsembleMember>& members, const StateActionGrid& grid);

}  // namespace ualqe
