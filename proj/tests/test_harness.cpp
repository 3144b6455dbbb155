#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ualqe/harness.hpp"

using namespace ualqe;
namespace fs = std::filesystem;

namespace {

ReplayBuffer uniform_lqr_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ReplayBuffer b(n, 1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = u(rng), a = 2.0 * u(rng);
    b.push({Eigen::VectorXd::Constant(1, s), Eigen::VectorXd::Constant(1, a), 0.0, Eigen::VectorXd::Constant(1, s), false});
  }
  return b;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ExperimentConfig tiny_config(Variant v) {
  ExperimentConfig c;
  c.agent.variant = v;
  c.agent.batch_size = 8;
  c.agent.hidden = {16, 16};
  c.agent.ensemble_size = 3;
  c.total_steps = 200;
  c.eval_interval = 100;
  c.eval_episodes = 2;
  c.rank_scan = {3, 8, 0.01};
  c.seeds = {0};
  return c;
}

}  // namespace

TEST(Spearman, Examples) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_NEAR(*spearman(x, std::vector<double>{2, 4, 8, 16, 32}), 1.0, 1e-12);
  EXPECT_NEAR(*spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-12);
  // Rank differences (-1, 1, -1, 1, 0): 1 - 6 * 4 / (5 * 24) = 0.8.
  EXPECT_NEAR(*spearman(x, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-12);
  EXPECT_FALSE(spearman(x, std::vector<double>{3, 3, 3, 3, 3}).has_value());
  EXPECT_FALSE(spearman(std::vector<double>{1}, std::vector<double>{2}).has_value());
  EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Spearman, TiesUseAverageRanks) {
  // x ranks (1.5, 1.5, 3, 4), y ranks (1, 2, 3, 4): Pearson of the ranks.
  const std::vector<double> x{1, 1, 2, 3}, y{1, 2, 3, 4};
  const double mx = 2.5, my = 2.5;
  const std::vector<double> rx{1.5, 1.5, 3, 4}, ry{1, 2, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(*spearman(x, y), sxy / std::sqrt(sxx * syy), 1e-12);
}

TEST(SampleGrid, DistinctRowsAndColumnsFromBuffer) {
  const ReplayBuffer b = uniform_lqr_buffer(30, 1);
  Rng rng(2);
  const StateActionGrid g = sample_grid(b, 30, rng);
  ASSERT_EQ(g.rows(), 30u);
  ASSERT_EQ(g.cols(), 30u);
  std::vector<double> s(g.states.data(), g.states.data() + 30), a(g.actions.data(), g.actions.data() + 30);
  std::sort(s.begin(), s.end());
  std::sort(a.begin(), a.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_THROW(sample_grid(b, 31, rng), std::invalid_argument);
}

TEST(RankScan, ConstantCriticHasRankOne) {
  Mlp critic({2, 4, 1}, OutputActivation::kIdentity);
  critic.layers()[1].bias[0] = 3.0;
  const ReplayBuffer b = uniform_lqr_buffer(100, 3);
  Rng rng(4);
  const RankScanResult r = rank_scan(critic_evaluator(critic), b, 10, 16, 0.01, rng);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_EQ(r.histogram.at(1), 10);
}

TEST(RankScan, SingleMatrixHasZeroSpread) {
  std::mt19937_64 init(5);
  Mlp critic({2, 8, 1}, OutputActivation::kIdentity, init);
  const ReplayBuffer b = uniform_lqr_buffer(100, 5);
  Rng rng(6);
  const RankScanResult r = rank_scan(critic_evaluator(critic), b, 1, 16, 0.01, rng);
  EXPECT_EQ(r.aranks.size(), 1u);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_EQ(r.mean, r.aranks[0]);
}

TEST(RankScan, LqrOptimalQIsLowRank) {
  // Q*(s, a) is a quadratic form in (s, a); as a matrix over (s_i, a_j) its rank is at most 3.
  const LqrParams p = LqrParams::scalar(0.9, 0.5, 1.0, 0.1);
  const double P = solve_discounted_riccati(p).p(0, 0);
  const QEvaluator q = [&](const StateActionGrid& g) {
    Matrix m(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        const double s = g.states(0, i), a = g.actions(0, j), next = 0.9 * s + 0.5 * a;
        m(i, j) = -(s * s + 0.1 * a * a) - p.gamma * P * next * next;
      }
    return m;
  };
  const ReplayBuffer b = uniform_lqr_buffer(500, 7);
  Rng rng(8);
  const RankScanResult r = rank_scan(q, b, 20, 64, 0.01, rng);
  for (int k : r.aranks) EXPECT_LE(k, 3);
}

TEST(RankScan, FiniteMdpMatchesBruteForce) {
  Rng mdp_rng(9);
  const FiniteMdp mdp = FiniteMdp::random(12, 10, 0.9, mdp_rng);
  const Matrix qstar = value_iteration(mdp);
  ReplayBuffer b(120, 1, 1);
  for (int s = 0; s < 12; ++s)
    for (int a = 0; a < 10; ++a)
      b.push({Eigen::VectorXd::Constant(1, s), Eigen::VectorXd::Constant(1, a), 0.0, Eigen::VectorXd::Constant(1, s), false});
  const QEvaluator q = [&](const StateActionGrid& g) {
    Matrix m(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j)
        m(i, j) = qstar(static_cast<std::size_t>(g.states(0, i)), static_cast<std::size_t>(g.actions(0, j)));
    return m;
  };
  Rng scan_rng(10), brute_rng(10);
  const RankScanResult r = rank_scan(q, b, 15, 8, 0.01, scan_rng);
  double sum = 0.0;
  for (int k = 0; k < 15; ++k) {
    const int expected = approximate_rank(q(sample_grid(b, 8, brute_rng)), 0.01);
    EXPECT_EQ(r.aranks[k], expected);
    sum += expected;
  }
  EXPECT_NEAR(r.mean, sum / 15.0, 1e-12);
}

TEST(Correlate, IdenticalEnsembleIsUndefined) {
  std::mt19937_64 init(11);
  Mlp critic({2, 8, 1}, OutputActivation::kIdentity, init);
  const EnsembleEvaluator same = [&](const StateActionGrid& g) {
    const Matrix m = evaluate_grid(critic, g);
    return std::vector<Matrix>{m, m, m};
  };
  const ReplayBuffer b = uniform_lqr_buffer(100, 11);
  Rng rng(12);
  const CorrelationReport r = correlate(critic_evaluator(critic), Quantifier{same}, b, 6, 8, 0.01, rng);
  ASSERT_EQ(r.rows.size(), 6u);
  for (const auto& row : r.rows) EXPECT_EQ(row.u_mean, 0.0);
  EXPECT_FALSE(r.spearman.has_value());
}

TEST(Evaluation, ReseedsBeforeEveryCall) {
  LqrEnv env(LqrParams::scalar(0.9, 0.5, 1.0, 0.1), 0);
  const auto policy = [](const Eigen::VectorXd& s) -> Eigen::VectorXd { return -0.5 * s; };
  const double a = evaluate_policy(policy, env, 3, 42);
  env.reset();
  EXPECT_EQ(evaluate_policy(policy, env, 3, 42), a);
  EXPECT_LT(a, 0.0);
}

TEST(Evaluation, OracleIsZeroPolicyWhenStateCannotBeSteered) {
  // With A = 0 the optimal gain is zero, so the oracle equals the zero-action policy.
  const LqrParams p = LqrParams::scalar(0.0, 0.5, 1.0, 0.1);
  LqrEnv env(p, 0);
  const auto zero = [](const Eigen::VectorXd&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(1); };
  EXPECT_NEAR(lqr_oracle_return(p, 4, 13), evaluate_policy(zero, env, 4, 13), 1e-12);
}

TEST(Metrics, FormatAndReadRoundTrip) {
  const fs::path d = fresh_dir("ualqe_metrics_rt");
  const MetricsRow a{0, -1.25, std::nan(""), 0.0, 0.0}, b{100, 0.1 + 0.2, 2.5, 0.5, 1.75};
  {
    std::ofstream out(d / "metrics.csv");
    out << kMetricsHeader << '\n' << format_metrics_row(a) << '\n' << format_metrics_row(b) << '\n';
  }
  const auto rows = read_metrics(d / "metrics.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(std::isnan(rows[0].arank_mean));
  EXPECT_EQ(rows[1].step, 100);
  EXPECT_EQ(rows[1].average_return, 0.1 + 0.2);
  EXPECT_EQ(rows[1].wall_time, 1.75);
  fs::remove_all(d);
}

TEST(RunSeed, ZeroStepsWritesOnlyInitialRow) {
  ExperimentConfig c = tiny_config(Variant::kDdpg);
  c.total_steps = 0;
  const fs::path d = fresh_dir("ualqe_run_zero");
  const auto rows = run_seed(c, 0, d);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].step, 0);
  EXPECT_TRUE(std::isnan(rows[0].arank_mean));
  EXPECT_EQ(read_metrics(d / "metrics.csv").size(), 1u);
  fs::remove_all(d);
}

TEST(RunSeed, DeterministicAndWritesArtifacts) {
  const ExperimentConfig c = tiny_config(Variant::kUalqeTCb);
  const fs::path d1 = fresh_dir("ualqe_run_a"), d2 = fresh_dir("ualqe_run_b");
  run_seed(c, 3, d1);
  run_seed(c, 3, d2);
  for (const char* f : {"config.json", "metrics.csv", "timing.csv", "report.json"}) EXPECT_TRUE(fs::exists(d1 / f)) << f;
  EXPECT_TRUE(fs::exists(d1 / "checkpoints" / "step_100" / "buffer.bin"));
  EXPECT_TRUE(fs::exists(d1 / "checkpoints" / "step_200" / "manifest.json"));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(d1 / "metrics.csv"), slurp(d2 / "metrics.csv"));
  EXPECT_EQ(slurp(d1 / "report.json"), slurp(d2 / "report.json"));
  const auto rows = read_metrics(d1 / "metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(std::isnan(rows[2].arank_mean));
  EXPECT_EQ(rows[2].wall_time, 0.0);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Config, RejectsUnknownKeysAndRoundTrips) {
  EXPECT_THROW(experiment_config_from_json(Json::parse(R"({"total_step": 10})")), std::invalid_argument);
  EXPECT_THROW(experiment_config_from_json(Json::parse(R"({"agent": {"varient": "DDPG"}})")), std::invalid_argument);
  EXPECT_THROW(experiment_config_from_json(Json::parse(R"({"agent": {"variant": "NOPE"}})")), std::invalid_argument);
  ExperimentConfig c = tiny_config(Variant::kUalqeEBb);
  c.agent.soft_impute.schedule = ShrinkageSchedule::kPerIteration;
  c.agent.exploration_sigma = 0.3;
  const Json j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
}

TEST(Config, Validation) {
  ExperimentConfig c = tiny_config(Variant::kDdpg);
  EXPECT_NO_THROW(c.validate());
  c.eval_interval = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config(Variant::kDdpg);
  c.env.name = "cartpole";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Csv, MatrixAndRemovals) {
  const fs::path d = fresh_dir("ualqe_csv");
  const Matrix m{{1.0, -2.5}, {1e-17, 0.1 + 0.2}};
  write_matrix_csv(d / "m.csv", m);
  EXPECT_EQ(read_matrix_csv(d / "m.csv"), m);
  std::ofstream(d / "r.csv") << "0,1\n\n1,0\n";
  EXPECT_EQ(read_removals_csv(d / "r.csv"), (std::vector<Index2>{{0, 1}, {1, 0}}));
  std::ofstream(d / "bad.csv") << "0,1.5\n";
  EXPECT_THROW(read_removals_csv(d / "bad.csv"), std::invalid_argument);
  std::ofstream(d / "ragged.csv") << "1,2\n3\n";
  EXPECT_THROW(read_matrix_csv(d / "ragged.csv"), std::invalid_argument);
  fs::remove_all(d);
}
