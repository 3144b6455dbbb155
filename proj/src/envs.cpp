#include "ualqe/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "binary_io.hpp"

namespace ualqe {

void EnvSpec::validate() const {
  if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("EnvSpec: dimensions must be positive");
  if (action_low.size() != action_dim || action_high.size() != action_dim)
    throw std::invalid_argument("EnvSpec: action bounds dimension mismatch");
  if ((action_low.array() >= action_high.array()).any()) throw std::invalid_argument("EnvSpec: action_low must be < action_high");
  if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("EnvSpec: gamma must lie in [0, 1)");
}

Eigen::VectorXd EnvSpec::clip_action(const Eigen::VectorXd& a) const {
  if (a.size() != action_dim) throw std::invalid_argument("action dimension mismatch");
  if (!a.allFinite()) throw std::invalid_argument("non-finite action");
  return a.cwiseMax(action_low).cwiseMin(action_high);
}

// ---------------------------------------------------------------------------
// LQR

LqrParams LqrParams::scalar(double a, double b, double q, double r) {
  LqrParams p;
  p.a = Eigen::MatrixXd::Constant(1, 1, a);
  p.b = Eigen::MatrixXd::Constant(1, 1, b);
  p.q = Eigen::MatrixXd::Constant(1, 1, q);
  p.r = Eigen::MatrixXd::Constant(1, 1, r);
  return p;
}

LqrEnv::LqrEnv(LqrParams params, std::uint64_t seed) : p_(std::move(params)), rng_(seed) {
  const auto ds = p_.a.rows();
  const auto da = p_.b.cols();
  if (p_.a.cols() != ds || p_.b.rows() != ds || p_.q.rows() != ds || p_.q.cols() != ds || p_.r.rows() != da ||
      p_.r.cols() != da)
    throw std::invalid_argument("LqrEnv: inconsistent matrix shapes");
  if (!(p_.action_bound > 0.0)) throw std::invalid_argument("LqrEnv: action bound must be positive");
  spec_.state_dim = static_cast<int>(ds);
  spec_.action_dim = static_cast<int>(da);
  spec_.action_low = Eigen::VectorXd::Constant(da, -p_.action_bound);
  spec_.action_high = Eigen::VectorXd::Constant(da, p_.action_bound);
  spec_.state_low = Eigen::VectorXd::Constant(ds, -1.0);
  spec_.state_high = Eigen::VectorXd::Constant(ds, 1.0);
  spec_.horizon = p_.horizon;
  spec_.gamma = p_.gamma;
  spec_.validate();
  s_ = Eigen::VectorXd::Zero(ds);
}

Eigen::VectorXd LqrEnv::reset() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < s_.size(); ++i) s_[i] = u(rng_);
  t_ = 0;
  return s_;
}

StepResult LqrEnv::step(const Eigen::VectorXd& action) {
  const Eigen::VectorXd a = spec_.clip_action(action);
  StepResult out;
  out.reward = -(s_.dot(p_.q * s_) + a.dot(p_.r * a));
  s_ = p_.a * s_ + p_.b * a;
  ++t_;
  out.next_state = s_;
  out.terminal = t_ >= spec_.horizon;
  return out;
}

RiccatiSolution solve_discounted_riccati(const LqrParams& p, double tol) {
  RiccatiSolution sol;
  const double g = p.gamma;
  Eigen::MatrixXd pm = p.q;
  auto gain_of = [&](const Eigen::MatrixXd& pp) {
    const Eigen::MatrixXd lhs = p.r + g * p.b.transpose() * pp * p.b;
    const Eigen::MatrixXd rhs = g * p.b.transpose() * pp * p.a;
    return Eigen::MatrixXd(lhs.completeOrthogonalDecomposition().solve(rhs));
  };
  for (int it = 0; it < 1000000; ++it) {
    const Eigen::MatrixXd k = gain_of(pm);
    // P = Q + gamma A'PA - gamma A'PB K, the discounted Riccati map
    Eigen::MatrixXd next = p.q + g * p.a.transpose() * pm * p.a - g * p.a.transpose() * pm * p.b * k;
    next = 0.5 * (next + next.transpose()).eval();
    sol.residual = (next - pm).cwiseAbs().maxCoeff();
    pm = std::move(next);
    sol.iterations = it + 1;
    if (sol.residual < tol) break;
  }
  if (!(sol.residual < tol)) throw std::runtime_error("solve_discounted_riccati: no convergence (system not stabilizable?)");
  sol.p = pm;
  sol.gain = gain_of(pm);
  return sol;
}

double lqr_optimal_q(const Environment& env, const Eigen::VectorXd& state, const Eigen::VectorXd& action) {
  const auto* lqr = dynamic_cast<const LqrEnv*>(&env);
  if (lqr == nullptr) throw std::invalid_argument("lqr_optimal_q: environment '" + env.name() + "' is not an LQR task");
  const LqrParams& p = lqr->params();
  if (state.size() != p.a.rows() || action.size() != p.b.cols()) throw std::invalid_argument("lqr_optimal_q: dimension mismatch");
  const RiccatiSolution sol = solve_discounted_riccati(p);
  const Eigen::VectorXd next = p.a * state + p.b * action;
  return -(state.dot(p.q * state) + action.dot(p.r * action)) - p.gamma * next.dot(sol.p * next);
}

// ---------------------------------------------------------------------------
// Pendulum

double angle_normalize(double x) {
  constexpr double kPi = std::numbers::pi;
  return std::fmod(std::fmod(x + kPi, 2.0 * kPi) + 2.0 * kPi, 2.0 * kPi) - kPi;
}

PendulumEnv::PendulumEnv(std::uint64_t seed, int horizon, double gamma) : rng_(seed) {
  spec_.state_dim = 3;
  spec_.action_dim = 1;
  spec_.action_low = Eigen::VectorXd::Constant(1, -kMaxTorque);
  spec_.action_high = Eigen::VectorXd::Constant(1, kMaxTorque);
  spec_.state_low = Eigen::Vector3d(-1.0, -1.0, -kMaxSpeed);
  spec_.state_high = Eigen::Vector3d(1.0, 1.0, kMaxSpeed);
  spec_.horizon = horizon;
  spec_.gamma = gamma;
  spec_.validate();
}

Eigen::VectorXd PendulumEnv::observation() const { return Eigen::Vector3d(std::cos(theta_), std::sin(theta_), theta_dot_); }

void PendulumEnv::set_physical_state(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
}

Eigen::VectorXd PendulumEnv::reset() {
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(-1.0, 1.0);
  theta_ = angle(rng_);
  theta_dot_ = speed(rng_);
  t_ = 0;
  return observation();
}

StepResult PendulumEnv::step(const Eigen::VectorXd& action) {
  const double u = spec_.clip_action(action)[0];
  StepResult out;
  const double th = angle_normalize(theta_);
  out.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
  double new_dot = theta_dot_ + (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) + 3.0 / (kMass * kLength * kLength) * u) * kDt;
  new_dot = std::clamp(new_dot, -kMaxSpeed, kMaxSpeed);
  theta_ = theta_ + new_dot * kDt;
  theta_dot_ = new_dot;
  ++t_;
  out.next_state = observation();
  out.terminal = t_ >= spec_.horizon;
  return out;
}

// ---------------------------------------------------------------------------
// Finite MDPs

void FiniteMdp::validate() const {
  if (num_states < 1 || num_actions < 1) throw std::invalid_argument("FiniteMdp: empty state or action set");
  const std::size_t sa = static_cast<std::size_t>(num_states) * num_actions;
  if (transition.size() != sa * num_states || reward.size() != sa) throw std::invalid_argument("FiniteMdp: table sizes");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("FiniteMdp: gamma must lie in [0, 1)");
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < num_states; ++s2) {
        if (p(s, a, s2) < 0.0) throw std::invalid_argument("FiniteMdp: negative probability");
        total += p(s, a, s2);
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("FiniteMdp: transition row does not sum to 1");
    }
  }
}

FiniteMdp FiniteMdp::random(int num_states, int num_actions, double gamma, Rng& rng) {
  FiniteMdp m;
  m.num_states = num_states;
  m.num_actions = num_actions;
  m.gamma = gamma;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  m.transition.resize(static_cast<std::size_t>(num_states) * num_actions * num_states);
  m.reward.resize(static_cast<std::size_t>(num_states) * num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      double total = 0.0;
      const std::size_t base = (static_cast<std::size_t>(s) * num_actions + a) * num_states;
      for (int s2 = 0; s2 < num_states; ++s2) total += (m.transition[base + s2] = u(rng));
      for (int s2 = 0; s2 < num_states; ++s2) m.transition[base + s2] /= total;
      m.reward[static_cast<std::size_t>(s) * num_actions + a] = 2.0 * u(rng) - 1.0;
    }
  }
  return m;
}

Matrix value_iteration(const FiniteMdp& mdp, double tol, int max_iterations) {
  mdp.validate();
  const int ns = mdp.num_states;
  const int na = mdp.num_actions;
  Matrix q(ns, na);
  std::vector<double> v(ns, 0.0);
  for (int it = 0; it < max_iterations; ++it) {
    double residual = 0.0;
    Matrix next(ns, na);
    for (int s = 0; s < ns; ++s) {
      for (int a = 0; a < na; ++a) {
        double expect = 0.0;
        for (int s2 = 0; s2 < ns; ++s2) expect += mdp.p(s, a, s2) * v[s2];
        next(s, a) = mdp.r(s, a) + mdp.gamma * expect;
        residual = std::max(residual, std::abs(next(s, a) - q(s, a)));
      }
    }
    q = std::move(next);
    for (int s = 0; s < ns; ++s) v[s] = *std::max_element(q.row(s).begin(), q.row(s).end());
    // One more backup moves Q by at most gamma * residual, so this bounds the Bellman residual.
    if (mdp.gamma * residual < tol) return q;
  }
  throw std::runtime_error("value_iteration: iteration limit reached");
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
    throw std::invalid_argument("ReplayBuffer::push: transition dimension mismatch");
  ++inserted_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("ReplayBuffer::at");
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (n > items_.size()) throw std::invalid_argument("ReplayBuffer: not enough transitions to sample");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  if (4 * n <= items_.size()) {
    std::unordered_set<std::size_t> seen;
    while (out.size() < n) {
      const std::size_t i = pick(rng);
      if (seen.insert(i).second) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> all(items_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> rest(i, all.size() - 1);
    std::swap(all[i], all[rest(rng)]);
    out.push_back(all[i]);
  }
  return out;
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "ualqe-replay";
  header["capacity"] = capacity_;
  header["state_dim"] = state_dim_;
  header["action_dim"] = action_dim_;
  header["size"] = items_.size();
  header["inserted"] = inserted_;
  std::vector<double> values;
  values.reserve(items_.size() * (2 * state_dim_ + action_dim_ + 2));
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Transition& t = at(i);
    values.insert(values.end(), t.state.data(), t.state.data() + state_dim_);
    values.insert(values.end(), t.action.data(), t.action.data() + action_dim_);
    values.push_back(t.reward);
    values.insert(values.end(), t.next_state.data(), t.next_state.data() + state_dim_);
    values.push_back(t.terminal ? 1.0 : 0.0);
  }
  detail::write_blob(path, header, values);
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  const detail::Blob blob = detail::read_blob(path);
  if (blob.header.value("format", "") != "ualqe-replay") throw std::runtime_error(path.string() + " is not a replay buffer");
  const int ds = blob.header.at("state_dim").get<int>();
  const int da = blob.header.at("action_dim").get<int>();
  const std::size_t n = blob.header.at("size").get<std::size_t>();
  const std::size_t stride = static_cast<std::size_t>(2 * ds + da + 2);
  if (blob.values.size() != n * stride) throw std::runtime_error("replay payload size mismatch in " + path.string());
  ReplayBuffer buf(blob.header.at("capacity").get<std::size_t>(), ds, da);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = blob.values.data() + i * stride;
    Transition t;
    t.state = Eigen::Map<const Eigen::VectorXd>(row, ds);
    t.action = Eigen::Map<const Eigen::VectorXd>(row + ds, da);
    t.reward = row[ds + da];
    t.next_state = Eigen::Map<const Eigen::VectorXd>(row + ds + da + 1, ds);
    t.terminal = row[2 * ds + da + 1] != 0.0;
    buf.push(std::move(t));
  }
  buf.inserted_ = blob.header.at("inserted").get<std::uint64_t>();
  return buf;
}

}  // namespace ualqe
