#include "ualqe/agent.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ualqe/config.hpp"

namespace ualqe {

namespace {

std::string normalize_name(std::string s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::runtime_error("corrupt RNG state in checkpoint");
}

HashNormalizer normalizer_for(const EnvSpec& spec) {
  Eigen::VectorXd lo(spec.state_dim + spec.action_dim), hi(spec.state_dim + spec.action_dim);
  const bool have_state_box = spec.state_low.size() == spec.state_dim && spec.state_high.size() == spec.state_dim;
  lo << (have_state_box ? spec.state_low : Eigen::VectorXd::Constant(spec.state_dim, -1.0)), spec.action_low;
  hi << (have_state_box ? spec.state_high : Eigen::VectorXd::Constant(spec.state_dim, 1.0)), spec.action_high;
  return HashNormalizer::from_bounds(lo, hi);
}

Mlp make_actor(const AgentConfig& cfg, const EnvSpec& spec, Rng& rng) {
  std::vector<int> sizes{spec.state_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(spec.action_dim);
  Mlp actor(sizes, OutputActivation::kBoundedTanh, rng);
  actor.set_output_bounds(spec.action_low, spec.action_high);
  return actor;
}

Mlp make_critic(const AgentConfig& cfg, const EnvSpec& spec, Rng& rng) {
  std::vector<int> sizes{spec.state_dim + spec.action_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  return Mlp(sizes, OutputActivation::kIdentity, rng);
}

std::vector<EnsembleMember> make_ensemble(const AgentConfig& cfg, const EnvSpec& spec, std::uint64_t seed) {
  Rng rng = make_stream(seed, streams::kEnsembleInit);
  std::vector<EnsembleMember> members;
  members.reserve(static_cast<std::size_t>(cfg.ensemble_size));
  for (int k = 0; k < cfg.ensemble_size; ++k) {
    EnsembleMember m;
    m.critic = make_critic(cfg, spec, rng);
    m.target = m.critic;
    m.adam = AdamState(m.critic, cfg.critic_lr);
    members.push_back(std::move(m));
  }
  return members;
}

void train_member(EnsembleMember& m, const Batch& batch, const Mlp& target_actor, double gamma, double tau) {
  const Eigen::VectorXd y = td_targets(batch, m.target, target_actor, gamma);
  const CriticLoss loss = regression_loss(batch, m.critic, y);
  adam_step(m.adam, m.critic, loss.grads);
  soft_update(m.target, m.critic, tau);
  ++m.updates;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDdpg: return "DDPG";
    case Variant::kSvrlE: return "SVRL-E";
    case Variant::kSvrlT: return "SVRL-T";
    case Variant::kUalqeECb: return "UALQE-E-CB";
    case Variant::kUalqeEBb: return "UALQE-E-BB";
    case Variant::kUalqeTCb: return "UALQE-T-CB";
    case Variant::kUalqeTBb: return "UALQE-T-BB";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  const std::string key = normalize_name(name);
  for (Variant v : kAllVariants)
    if (normalize_name(to_string(v)) == key) return v;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

bool reconstructs_evaluation(Variant v) {
  return v == Variant::kSvrlE || v == Variant::kUalqeECb || v == Variant::kUalqeEBb;
}
bool reconstructs_target(Variant v) { return v == Variant::kSvrlT || v == Variant::kUalqeTCb || v == Variant::kUalqeTBb; }
bool uses_count_uncertainty(Variant v) { return v == Variant::kUalqeECb || v == Variant::kUalqeTCb; }
bool uses_ensemble_uncertainty(Variant v) { return v == Variant::kUalqeEBb || v == Variant::kUalqeTBb; }
bool uses_random_removal(Variant v) { return v == Variant::kSvrlE || v == Variant::kSvrlT; }

void AgentConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("AgentConfig: batch_size must be >= 2");
  if (!(p >= 0.0 && p < 100.0)) throw std::invalid_argument("AgentConfig: p must lie in [0, 100)");
  if (removals_per_row(p, static_cast<std::size_t>(batch_size)) > static_cast<std::size_t>(batch_size - 1))
    throw std::invalid_argument("AgentConfig: p removes a whole row of the Q-matrix");
  if (!(beta >= 0.0)) throw std::invalid_argument("AgentConfig: beta must be >= 0");
  if (uses_ensemble_uncertainty(variant) && ensemble_size < 2)
    throw std::invalid_argument("AgentConfig: bootstrapped variants need ensemble_size >= 2");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("AgentConfig: gamma must lie in [0, 1)");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("AgentConfig: tau must lie in [0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("AgentConfig: learning rates must be positive");
  if (exploration_sigma && !(*exploration_sigma >= 0.0)) throw std::invalid_argument("AgentConfig: exploration_sigma must be >= 0");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("AgentConfig: hidden sizes must be positive");
  if (replay_capacity < static_cast<std::size_t>(batch_size))
    throw std::invalid_argument("AgentConfig: replay_capacity smaller than batch_size");
  soft_impute.validate();
}

Batch make_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices, bool bootstrap_at_horizon) {
  const Eigen::Index n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.states.resize(buffer.state_dim(), n);
  b.actions.resize(buffer.action_dim(), n);
  b.rewards.resize(n);
  b.next_states.resize(buffer.state_dim(), n);
  b.continues.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = buffer.at(indices[static_cast<std::size_t>(i)]);
    b.states.col(i) = t.state;
    b.actions.col(i) = t.action;
    b.rewards[i] = t.reward;
    b.next_states.col(i) = t.next_state;
    b.continues[i] = (t.terminal && !bootstrap_at_horizon) ? 0.0 : 1.0;
  }
  return b;
}

Eigen::MatrixXd critic_inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
  if (states.cols() != actions.cols()) throw std::invalid_argument("critic_inputs: batch sizes differ");
  Eigen::MatrixXd x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

Eigen::MatrixXd grid_inputs(const StateActionGrid& grid) {
  const Eigen::Index rows = grid.states.cols();
  const Eigen::Index cols = grid.actions.cols();
  const Eigen::Index ds = grid.states.rows();
  const Eigen::Index da = grid.actions.rows();
  Eigen::MatrixXd x(ds + da, rows * cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      x.col(i * cols + j).head(ds) = grid.states.col(i);
      x.col(i * cols + j).tail(da) = grid.actions.col(j);
    }
  }
  return x;
}

Matrix evaluate_grid(const Mlp& critic, const StateActionGrid& grid) {
  const Eigen::MatrixXd q = critic.forward(grid_inputs(grid));
  return Matrix(grid.rows(), grid.cols(), std::vector<double>(q.data(), q.data() + q.size()));
}

QMatrixPair build_q_matrix(const Batch& batch, QMatrixKind kind, const Mlp& critic, const Mlp& target_critic,
                           const Mlp& target_actor) {
  QMatrixPair out;
  out.kind = kind;
  if (kind == QMatrixKind::kEvaluation) {
    out.grid = StateActionGrid{batch.states, batch.actions};
    out.matrix = evaluate_grid(critic, out.grid);
  } else {
    out.grid = StateActionGrid{batch.next_states, target_actor.forward(batch.next_states)};
    out.matrix = evaluate_grid(target_critic, out.grid);
  }
  return out;
}

Eigen::VectorXd td_targets(const Batch& batch, const Mlp& target_critic, const Mlp& target_actor, double gamma) {
  const Eigen::MatrixXd next_actions = target_actor.forward(batch.next_states);
  const Eigen::MatrixXd q = target_critic.forward(critic_inputs(batch.next_states, next_actions));
  return batch.rewards + gamma * batch.continues.cwiseProduct(q.row(0).transpose());
}

CriticLoss regression_loss(const Batch& batch, const Mlp& critic, const Eigen::VectorXd& targets) {
  ForwardCache cache;
  const Eigen::MatrixXd q = critic.forward(critic_inputs(batch.states, batch.actions), cache);
  const Eigen::RowVectorXd diff = q.row(0) - targets.transpose();
  const double n = static_cast<double>(batch.size());
  CriticLoss out;
  out.loss = diff.squaredNorm() / n;
  out.grads = critic.backward(cache, (2.0 / n) * diff);
  return out;
}

CriticLoss td_loss(const Batch& batch, const Mlp& critic, const Mlp& target_critic, const Mlp& target_actor, double gamma) {
  return regression_loss(batch, critic, td_targets(batch, target_critic, target_actor, gamma));
}

CriticLoss loss_t(const Batch& batch, const Mlp& critic, const Matrix& reconstructed_target, double gamma) {
  const Eigen::Index n = batch.size();
  if (reconstructed_target.rows() != static_cast<std::size_t>(n) || reconstructed_target.cols() != static_cast<std::size_t>(n))
    throw std::invalid_argument("loss_t: reconstructed matrix does not match the batch");
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i)
    y[i] = batch.rewards[i] + gamma * batch.continues[i] * reconstructed_target(static_cast<std::size_t>(i), static_cast<std::size_t>(i));
  return regression_loss(batch, critic, y);
}

CriticLoss loss_e(const QMatrixPair& evaluation, const Matrix& reconstructed, const Mlp& critic, double weight) {
  const Matrix& q = evaluation.matrix;
  if (q.rows() != reconstructed.rows() || q.cols() != reconstructed.cols())
    throw std::invalid_argument("loss_e: matrix shapes differ");
  const double count = static_cast<double>(q.size());
  std::vector<Index2> nonzero;
  double ss = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const double d = q(i, j) - reconstructed(i, j);
      if (d == 0.0) continue;
      ss += d * d;
      nonzero.emplace_back(i, j);
    }
  }
  CriticLoss out;
  out.loss = weight * ss / count;
  if (nonzero.empty()) {
    out.grads = zero_gradients(critic);
    return out;
  }
  // Entries equal to their reconstruction contribute zero gradient, so only the
  // differing ones go through the reverse pass.
  const Eigen::Index ds = evaluation.grid.states.rows();
  const Eigen::Index da = evaluation.grid.actions.rows();
  Eigen::MatrixXd x(ds + da, static_cast<Eigen::Index>(nonzero.size()));
  Eigen::MatrixXd upstream(1, x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const auto [i, j] = nonzero[static_cast<std::size_t>(k)];
    x.col(k).head(ds) = evaluation.grid.states.col(static_cast<Eigen::Index>(i));
    x.col(k).tail(da) = evaluation.grid.actions.col(static_cast<Eigen::Index>(j));
    upstream(0, k) = weight * 2.0 * (q(i, j) - reconstructed(i, j)) / count;
  }
  ForwardCache cache;
  critic.forward(x, cache);
  out.grads = critic.backward(cache, upstream);
  return out;
}

ActorGradient actor_update(const Batch& batch, const Mlp& actor, const Mlp& critic) {
  ForwardCache actor_cache;
  const Eigen::MatrixXd a = actor.forward(batch.states, actor_cache);
  ForwardCache critic_cache;
  const Eigen::MatrixXd q = critic.forward(critic_inputs(batch.states, a), critic_cache);
  const double n = static_cast<double>(batch.size());
  ActorGradient out;
  out.objective = q.sum() / n;
  Eigen::MatrixXd dx;
  critic.backward(critic_cache, Eigen::MatrixXd::Ones(1, q.cols()), &dx);
  out.dq_da = dx.bottomRows(a.rows());
  out.ascent = actor.backward(actor_cache, out.dq_da / n);
  return out;
}

std::vector<Matrix> member_matrices(const std::vector<EnsembleMember>& members, const StateActionGrid& grid) {
  std::vector<Matrix> out;
  out.reserve(members.size());
  if (members.empty()) return out;
  const Eigen::MatrixXd x = grid_inputs(grid);
  for (const EnsembleMember& m : members) {
    const Eigen::MatrixXd q = m.critic.forward(x);
    out.emplace_back(grid.rows(), grid.cols(), std::vector<double>(q.data(), q.data() + q.size()));
  }
  return out;
}

Agent::Agent(AgentConfig config, const EnvSpec& spec, std::uint64_t seed)
    : cfg_(std::move(config)),
      spec_(spec),
      seed_(seed),
      counts_(spec.state_dim, spec.action_dim, seed, normalizer_for(spec)),
      explore_rng_(make_stream(seed, streams::kExploration)),
      sample_rng_(make_stream(seed, streams::kReplaySample)),
      removal_rng_(make_stream(seed, streams::kRandomRemoval)) {
  cfg_.validate();
  spec_.validate();
  Rng actor_rng = make_stream(seed, streams::kActorInit);
  Rng critic_rng = make_stream(seed, streams::kCriticInit);
  actor_ = make_actor(cfg_, spec_, actor_rng);
  critic_ = make_critic(cfg_, spec_, critic_rng);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_adam_ = AdamState(actor_, cfg_.actor_lr);
  critic_adam_ = AdamState(critic_, cfg_.critic_lr);
  if (uses_ensemble_uncertainty(cfg_.variant)) ensemble_ = make_ensemble(cfg_, spec_, seed);
}

Eigen::VectorXd Agent::act(const Eigen::VectorXd& state) const {
  const Eigen::MatrixXd a = actor_.forward(Eigen::MatrixXd(state));
  return a.col(0);
}

Eigen::VectorXd Agent::explore(const Eigen::VectorXd& state) {
  Eigen::VectorXd a = act(state);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double sigma = cfg_.exploration_sigma.value_or(0.1 * (spec_.action_high[i] - spec_.action_low[i]) / 2.0);
    std::normal_distribution<double> noise(0.0, sigma);
    a[i] += noise(explore_rng_);
  }
  return spec_.clip_action(a);
}

std::vector<Matrix> Agent::ensemble_matrices(const StateActionGrid& grid) const { return member_matrices(ensemble_, grid); }

RemovalSet Agent::choose_removal(const QMatrixPair& q) {
  const Variant v = cfg_.variant;
  if (v == Variant::kDdpg || removals_per_row(cfg_.p, q.matrix.cols()) == 0) return {};
  if (uses_random_removal(v)) {
    // Uniform random priorities: top-k of i.i.d. scores is a uniform k-subset per row.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix scores(q.matrix.rows(), q.matrix.cols());
    for (double& s : scores.data()) s = u(removal_rng_);
    return select_top_p_per_row(UncertaintyMatrix(std::move(scores)), cfg_.p);
  }
  if (uses_count_uncertainty(v)) return select_top_p_per_row(uncertainty_matrix(q.grid, std::cref(counts_)), cfg_.p);
  const EnsembleEvaluator eval = [this](const StateActionGrid& g) { return member_matrices(ensemble_, g); };
  return select_top_p_per_row(uncertainty_matrix(q.grid, eval), cfg_.p);
}

StepMetrics Agent::train_step(const ReplayBuffer& buffer) {
  const std::size_t n = static_cast<std::size_t>(cfg_.batch_size);
  if (buffer.size() < n) throw std::invalid_argument("train_step: replay buffer holds fewer transitions than the batch size");
  const Batch batch = make_batch(buffer, buffer.sample_indices(n, sample_rng_), cfg_.bootstrap_at_horizon);
  const bool remove_any = cfg_.variant != Variant::kDdpg && removals_per_row(cfg_.p, n) > 0;

  StepMetrics metrics;
  CriticLoss total;
  if (reconstructs_target(cfg_.variant) && remove_any) {
    const QMatrixPair qt = build_q_matrix(batch, QMatrixKind::kTarget, critic_, target_critic_, target_actor_);
    const RemovalSet removal = choose_removal(qt);
    const ReconstructResult rec = reconstruct(qt.matrix, removal, cfg_.soft_impute);
    total = loss_t(batch, critic_, rec.matrix, cfg_.gamma);
    metrics.matrices_built = true;
    metrics.removed_entries += removal.size();
    metrics.completion_iterations += rec.solve.iterations;
    metrics.completion_converged = metrics.completion_converged && rec.solve.converged;
  } else {
    total = td_loss(batch, critic_, target_critic_, target_actor_, cfg_.gamma);
  }
  if (reconstructs_evaluation(cfg_.variant) && remove_any) {
    const QMatrixPair qe = build_q_matrix(batch, QMatrixKind::kEvaluation, critic_, target_critic_, target_actor_);
    const RemovalSet removal = choose_removal(qe);
    const ReconstructResult rec = reconstruct(qe.matrix, removal, cfg_.soft_impute);
    const CriticLoss reg = loss_e(qe, rec.matrix, critic_, cfg_.beta);
    metrics.reconstruction_loss = cfg_.beta > 0.0 ? reg.loss / cfg_.beta : 0.0;
    total.loss += reg.loss;
    total.grads += reg.grads;
    metrics.matrices_built = true;
    metrics.removed_entries += removal.size();
    metrics.completion_iterations += rec.solve.iterations;
    metrics.completion_converged = metrics.completion_converged && rec.solve.converged;
  }
  metrics.critic_loss = total.loss;
  adam_step(critic_adam_, critic_, total.grads);
  ++critic_updates_;

  ActorGradient ag = actor_update(batch, actor_, critic_);
  metrics.actor_objective = ag.objective;
  ag.ascent *= -1.0;
  adam_step(actor_adam_, actor_, ag.ascent);

  soft_update(target_critic_, critic_, cfg_.tau);
  soft_update(target_actor_, actor_, cfg_.tau);

  update_uncertainty_estimator(batch);
  return metrics;
}

void Agent::update_uncertainty_estimator(const Batch& batch) {
  if (uses_count_uncertainty(cfg_.variant)) {
    for (Eigen::Index i = 0; i < batch.size(); ++i) counts_.record_visit(batch.states.col(i), batch.actions.col(i));
  }
  for (EnsembleMember& m : ensemble_) train_member(m, batch, target_actor_, cfg_.gamma, cfg_.tau);
}

std::vector<EnsembleMember> fit_ensemble(const ReplayBuffer& buffer, const Mlp& policy, const AgentConfig& cfg,
                                         const EnvSpec& spec, int steps, std::uint64_t seed) {
  if (cfg.ensemble_size < 2) throw std::invalid_argument("fit_ensemble: ensemble_size must be >= 2");
  std::vector<EnsembleMember> members = make_ensemble(cfg, spec, seed);
  Rng rng = make_stream(seed, streams::kEnsembleFit);
  const std::size_t n = static_cast<std::size_t>(cfg.batch_size);
  for (int step = 0; step < steps; ++step) {
    const Batch batch = make_batch(buffer, buffer.sample_indices(n, rng), cfg.bootstrap_at_horizon);
    for (EnsembleMember& m : members) train_member(m, batch, policy, cfg.gamma, cfg.tau);
  }
  return members;
}

void Agent::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ualqe-agent";
  manifest["seed"] = seed_;
  manifest["agent"] = to_json(cfg_);
  manifest["env_spec"] = to_json(spec_);
  manifest["critic_updates"] = critic_updates_;
  manifest["rng"] = {{"explore", rng_state(explore_rng_)},
                     {"sample", rng_state(sample_rng_)},
                     {"removal", rng_state(removal_rng_)}};
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [code, n] : counts_.counts()) counts[std::to_string(code)] = n;
  manifest["count_table"] = {{"projection_seed", counts_.projection_seed()}, {"counts", counts}};
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t k = 0; k < ensemble_.size(); ++k) {
    const std::string stem = "ensemble_" + std::to_string(k);
    save_network(dir / (stem + ".net"), ensemble_[k].critic, {{"updates", ensemble_[k].updates}});
    save_network(dir / (stem + "_target.net"), ensemble_[k].target);
    save_adam(dir / (stem + ".adam"), ensemble_[k].adam);
    members.push_back(stem);
  }
  manifest["ensemble"] = members;
  save_network(dir / "actor.net", actor_, {{"updates", actor_adam_.step}});
  save_network(dir / "critic.net", critic_, {{"updates", critic_updates_}});
  save_network(dir / "target_actor.net", target_actor_);
  save_network(dir / "target_critic.net", target_critic_);
  save_adam(dir / "actor.adam", actor_adam_);
  save_adam(dir / "critic.adam", critic_adam_);
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Agent Agent::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in checkpoint " + dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "ualqe-agent") throw std::runtime_error(dir.string() + " is not an agent checkpoint");
  Agent agent(agent_config_from_json(manifest.at("agent")), env_spec_from_json(manifest.at("env_spec")),
              manifest.at("seed").get<std::uint64_t>());
  agent.actor_ = load_network(dir / "actor.net");
  agent.critic_ = load_network(dir / "critic.net");
  agent.target_actor_ = load_network(dir / "target_actor.net");
  agent.target_critic_ = load_network(dir / "target_critic.net");
  agent.actor_adam_ = load_adam(dir / "actor.adam", agent.actor_);
  agent.critic_adam_ = load_adam(dir / "critic.adam", agent.critic_);
  agent.critic_updates_ = manifest.at("critic_updates").get<std::uint64_t>();
  restore_rng(agent.explore_rng_, manifest.at("rng").at("explore").get<std::string>());
  restore_rng(agent.sample_rng_, manifest.at("rng").at("sample").get<std::string>());
  restore_rng(agent.removal_rng_, manifest.at("rng").at("removal").get<std::string>());
  for (const auto& [code, n] : manifest.at("count_table").at("counts").items())
    agent.counts_.set_count(std::stoull(code), n.get<std::uint64_t>());
  agent.ensemble_.clear();
  for (const auto& stem_json : manifest.at("ensemble")) {
    const std::string stem = stem_json.get<std::string>();
    EnsembleMember m;
    std::map<std::string, std::uint64_t> counters;
    m.critic = load_network(dir / (stem + ".net"), &counters);
    m.target = load_network(dir / (stem + "_target.net"));
    m.adam = load_adam(dir / (stem + ".adam"), m.critic);
    m.updates = counters.count("updates") ? counters.at("updates") : 0;
    agent.ensemble_.push_back(std::move(m));
  }
  return agent;
}

}  // namespace ualqe
