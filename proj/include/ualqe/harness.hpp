#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ualqe/agent.hpp"
#include "ualqe/config.hpp"
#include "ualqe/envs.hpp"
#include "ualqe/linalg.hpp"
#include "ualqe/uncertainty.hpp"

namespace ualqe {

/// Maps a state-action grid to its Q-matrix.
using QEvaluator = std::function<Matrix(const StateActionGrid&)>;

QEvaluator critic_evaluator(const Mlp& critic);

/// `size` states and, independently, `size` actions drawn without replacement from the buffer.
StateActionGrid sample_grid(const ReplayBuffer& buffer, int size, Rng& rng);

struct RankScanResult {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::vector<int> aranks;
  std::map<int, int> histogram;  // arank -> number of matrices
};

RankScanResult rank_scan(const QEvaluator& q, const ReplayBuffer& buffer, int num_matrices, int size, double delta, Rng& rng);

/// Spearman rank correlation with average ranks for ties; empty when either
/// column is constant or the sample has fewer than two points.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationRow {
  double u_mean = 0.0;
  double u_std = 0.0;
  int arank = 0;
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;
  std::optional<double> spearman;  // arank vs u_mean
};

CorrelationReport correlate(const QEvaluator& q, const Quantifier& quantifier, const ReplayBuffer& buffer, int num_matrices,
                            int size, double delta, Rng& rng);

/// Mean undiscounted return of the deterministic policy over `episodes`
/// episodes; `env` is reseeded with `seed` first so every call sees the same starts.
double evaluate_policy(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& policy, Environment& env, int episodes,
                       std::uint64_t seed);

/// Return of the Riccati feedback policy (clipped to the action box) on the same starts.
double lqr_oracle_return(const LqrParams& params, int episodes, std::uint64_t eval_seed);

struct MetricsRow {
  int step = 0;
  double average_return = 0.0;
  double arank_mean = 0.0;  // NaN when the buffer is too small to scan
  double arank_std = 0.0;
  double wall_time = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,average_return,arank_mean,arank_std,wall_time";

std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// One seed's run: writes config.json, metrics.csv, timing.csv, checkpoints/ and report.json under `dir`.
std::vector<MetricsRow> run_seed(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& dir);

/// Validates the config, runs every seed into out/seed_<s>, and writes out/report.json.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& config, const std::filesystem::path& out);

std::uint64_t evaluation_seed(std::uint64_t seed);

// Matrix CSV: one row per line, comma separated, no header.
Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
std::vector<Index2> read_removals_csv(const std::filesystem::path& path);

/// Final-return table over run directories (each a seed run or an experiment
/// directory of seed runs), grouped by variant.
Json aggregate_runs(const std::vector<std::filesystem::path>& runs);
std::string report_table_csv(const Json& aggregate);
/// Line charts of average return and arank against step, one polyline per run.
std::string metrics_svg(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs);

}  // namespace ualqe
