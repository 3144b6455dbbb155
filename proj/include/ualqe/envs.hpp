#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ualqe/linalg.hpp"
#include "ualqe/rng.hpp"

namespace ualqe {

struct EnvSpec {
  int state_dim = 1;
  int action_dim = 1;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  // Nominal observation box, used to normalize inputs before hashing.
  Eigen::VectorXd state_low;
  Eigen::VectorXd state_high;
  int horizon = 200;
  double gamma = 0.99;

  void validate() const;
  Eigen::VectorXd clip_action(const Eigen::VectorXd& a) const;
};

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool terminal = false;  // episode cut off at the horizon
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool terminal = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual const EnvSpec& spec() const = 0;
  virtual Eigen::VectorXd reset() = 0;
  /// The action is clipped to the action box before it reaches the dynamics.
  virtual StepResult step(const Eigen::VectorXd& action) = 0;
  virtual void reseed(std::uint64_t seed) = 0;
  int elapsed() const { return t_; }

 protected:
  int t_ = 0;
};

struct LqrParams {
  Eigen::MatrixXd a;  // d_s x d_s
  Eigen::MatrixXd b;  // d_s x d_a
  Eigen::MatrixXd q;  // state cost, d_s x d_s
  Eigen::MatrixXd r;  // action cost, d_a x d_a
  double action_bound = 2.0;
  int horizon = 50;
  double gamma = 0.99;

  static LqrParams scalar(double a, double b, double q, double r);
};

/// s' = A s + B a, reward -(s'Qs + a'Ra), s0 ~ U[-1, 1]^d_s.
class LqrEnv final : public Environment {
 public:
  LqrEnv(LqrParams params, std::uint64_t seed);

  std::string name() const override { return "lqr"; }
  const EnvSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset() override;
  StepResult step(const Eigen::VectorXd& action) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }
  const LqrParams& params() const { return p_; }
  void set_state(const Eigen::VectorXd& s) { s_ = s; }

 private:
  LqrParams p_;
  EnvSpec spec_;
  Rng rng_;
  Eigen::VectorXd s_;
};

struct RiccatiSolution {
  Eigen::MatrixXd p;     // value is -x'Px
  Eigen::MatrixXd gain;  // optimal action a = -gain * s
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed point of the discounted Riccati recursion, iterated to residual < tol.
RiccatiSolution solve_discounted_riccati(const LqrParams& p, double tol = 1e-10);

/// Q*(s, a) = r(s, a) - gamma * (As + Ba)' P (As + Ba). Throws for a non-LQR env.
double lqr_optimal_q(const Environment& env, const Eigen::VectorXd& state, const Eigen::VectorXd& action);

/// Classic swing-up pendulum. Angle measured from upright, observation
/// [cos th, sin th, th_dot], semi-implicit Euler with dt = 0.05.
class PendulumEnv final : public Environment {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

  explicit PendulumEnv(std::uint64_t seed, int horizon = 200, double gamma = 0.99);

  std::string name() const override { return "pendulum"; }
  const EnvSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset() override;
  StepResult step(const Eigen::VectorXd& action) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

  void set_physical_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  Eigen::VectorXd observation() const;

 private:
  EnvSpec spec_;
  Rng rng_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

double angle_normalize(double x);

/// Tabular MDP: transition[s][a] is a distribution over next states.
struct FiniteMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> transition;  // [s][a][s'] flattened
  std::vector<double> reward;      // [s][a]
  double gamma = 0.9;

  double p(int s, int a, int s2) const { return transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states + s2]; }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * num_actions + a]; }
  void validate() const;

  static FiniteMdp random(int num_states, int num_actions, double gamma, Rng& rng);
};

/// Exact Q table (|S| x |A|), sup-norm Bellman residual < tol.
Matrix value_iteration(const FiniteMdp& mdp, double tol = 1e-10, int max_iterations = 1000000);

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  /// Index 0 is the oldest transition still held.
  const Transition& at(std::size_t i) const;

  /// n distinct indices, uniformly at random.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::uint64_t inserted_ = 0;
};

}  // namespace ualqe
