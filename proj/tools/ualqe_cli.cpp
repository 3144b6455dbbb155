#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "ualqe/harness.hpp"

namespace fs = std::filesystem;
using namespace ualqe;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string csv_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct ScanArgs {
  fs::path checkpoint;
  fs::path buffer;
  int n = 100;
  int size = 64;
  double delta = 0.01;
  std::uint64_t seed = 0;
  fs::path out;
};

void add_scan_options(CLI::App* cmd, ScanArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "agent checkpoint directory")->required();
  cmd->add_option("--buffer", a.buffer, "replay buffer snapshot (default: <checkpoint>/buffer.bin)");
  cmd->add_option("--n", a.n, "number of sampled matrices");
  cmd->add_option("--size", a.size, "matrix side length");
  cmd->add_option("--delta", a.delta, "approximate-rank tolerance");
  cmd->add_option("--seed", a.seed, "sampling seed");
  cmd->add_option("--out", a.out, "output directory (default: stdout only)");
}

ReplayBuffer load_buffer(const ScanArgs& a) { return ReplayBuffer::load(a.buffer.empty() ? a.checkpoint / "buffer.bin" : a.buffer); }

int cmd_rank_scan(const ScanArgs& a) {
  const Agent agent = Agent::load(a.checkpoint);
  const ReplayBuffer buffer = load_buffer(a);
  Rng rng = make_stream(a.seed, streams::kRankScan);
  const RankScanResult r = rank_scan(critic_evaluator(agent.critic()), buffer, a.n, a.size, a.delta, rng);
  Json hist = Json::object();
  for (const auto& [k, c] : r.histogram) hist[std::to_string(k)] = c;
  const Json summary = {{"num_matrices", a.n}, {"size", a.size}, {"delta", a.delta}, {"mean", r.mean}, {"std", r.stddev}, {"histogram", hist}};
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::string csv = "arank,count\n";
    for (const auto& [k, c] : r.histogram) csv += std::to_string(k) + "," + std::to_string(c) + "\n";
    write_text(a.out / "rank_histogram.csv", csv);
    write_text(a.out / "rank_scan.json", summary.dump(2) + "\n");
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_correlate(const ScanArgs& a, const std::string& quantifier, int fit_steps, double fit_tau) {
  const Agent agent = Agent::load(a.checkpoint);
  const ReplayBuffer buffer = load_buffer(a);
  Rng rng = make_stream(a.seed, streams::kRankScan);
  std::vector<EnsembleMember> fitted;
  CountTable counts = agent.count_table();
  Quantifier q = std::cref(counts);
  if (quantifier == "bb") {
    if (agent.ensemble().size() >= 2) {
      q = EnsembleEvaluator([&agent](const StateActionGrid& g) { return agent.ensemble_matrices(g); });
    } else {
      AgentConfig cfg = agent.config();
      cfg.tau = fit_tau;
      fitted = fit_ensemble(buffer, agent.target_actor(), cfg, agent.env_spec(), fit_steps, a.seed);
      q = EnsembleEvaluator([&fitted](const StateActionGrid& g) { return member_matrices(fitted, g); });
    }
  } else if (quantifier == "cb") {
    if (counts.total_visits() == 0 && counts.counts().empty())
      for (std::size_t i = 0; i < buffer.size(); ++i) counts.record_visit(buffer.at(i).state, buffer.at(i).action);
  } else {
    throw std::invalid_argument("--quantifier must be cb or bb");
  }
  const CorrelationReport rep = correlate(critic_evaluator(agent.critic()), q, buffer, a.n, a.size, a.delta, rng);
  const Json summary = {{"quantifier", quantifier},
                        {"num_matrices", a.n},
                        {"size", a.size},
                        {"delta", a.delta},
                        {"spearman", rep.spearman ? Json(*rep.spearman) : Json(nullptr)},
                        {"correlation_defined", rep.spearman.has_value()},
                        {"ensemble_fitted_post_hoc", !fitted.empty()}};
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::string csv = "u_mean,u_std,arank\n";
    for (const auto& r : rep.rows) csv += csv_number(r.u_mean) + "," + csv_number(r.u_std) + "," + std::to_string(r.arank) + "\n";
    write_text(a.out / "correlation.csv", csv);
    write_text(a.out / "correlation.json", summary.dump(2) + "\n");
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_uncertainty_scan(const ScanArgs& a, const std::string& quantifier, int fit_steps, double fit_tau) {
  const Agent agent = Agent::load(a.checkpoint);
  const ReplayBuffer buffer = load_buffer(a);
  Rng rng = make_stream(a.seed, streams::kRankScan);
  const StateActionGrid grid = sample_grid(buffer, a.size, rng);
  const Matrix qm = evaluate_grid(agent.critic(), grid);
  UncertaintyMatrix u(Matrix(1, 1));
  if (quantifier == "cb") {
    CountTable counts = agent.count_table();
    if (counts.counts().empty())
      for (std::size_t i = 0; i < buffer.size(); ++i) counts.record_visit(buffer.at(i).state, buffer.at(i).action);
    u = cb_uncertainty_matrix(grid, counts);
  } else if (quantifier == "bb") {
    std::vector<Matrix> members = agent.ensemble_matrices(grid);
    if (members.size() < 2) {
      AgentConfig cfg = agent.config();
      cfg.tau = fit_tau;
      members = member_matrices(fit_ensemble(buffer, agent.target_actor(), cfg, agent.env_spec(), fit_steps, a.seed), grid);
    }
    u = bb_uncertainty_matrix(members);
  } else {
    throw std::invalid_argument("--quantifier must be cb or bb");
  }
  const fs::path out = a.out.empty() ? fs::path(".") : a.out;
  fs::create_directories(out);
  write_matrix_csv(out / "q_matrix.csv", qm);
  write_matrix_csv(out / "uncertainty.csv", u.values());
  std::cout << Json{{"u_mean", u.mean()}, {"u_std", u.stddev()}, {"q_matrix", (out / "q_matrix.csv").string()},
                    {"uncertainty", (out / "uncertainty.csv").string()}}
                   .dump()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware low-rank Q-matrix estimation toolkit"};
  app.require_subcommand(1);

  fs::path config_path, out_dir = "runs";
  std::optional<std::uint64_t> seed_override;
  auto* train = app.add_subcommand("train", "run a seeded experiment from a JSON config");
  train->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed_override, "run only this seed");
  train->add_option("--out", out_dir, "output directory");

  ScanArgs scan;
  auto* rank = app.add_subcommand("rank-scan", "approximate-rank statistics of sampled Q-matrices");
  add_scan_options(rank, scan);

  ScanArgs corr;
  std::string quantifier = "bb";
  int fit_steps = 2000;
  double fit_tau = 0.01;
  auto* correlate_cmd = app.add_subcommand("correlate", "rank vs uncertainty over sampled Q-matrices");
  add_scan_options(correlate_cmd, corr);
  correlate_cmd->add_option("--quantifier", quantifier, "cb or bb")->check(CLI::IsMember({"cb", "bb"}));
  correlate_cmd->add_option("--fit-steps", fit_steps, "ensemble fitting steps when the checkpoint has no ensemble");
  correlate_cmd->add_option("--fit-tau", fit_tau, "target rate used while fitting the ensemble");

  ScanArgs uscan;
  std::string uquantifier = "cb";
  auto* uncertainty_cmd = app.add_subcommand("uncertainty-scan", "dump one Q-matrix and its uncertainty matrix as CSV");
  add_scan_options(uncertainty_cmd, uscan);
  uncertainty_cmd->add_option("--quantifier", uquantifier, "cb or bb")->check(CLI::IsMember({"cb", "bb"}));
  uncertainty_cmd->add_option("--fit-steps", fit_steps, "ensemble fitting steps when the checkpoint has no ensemble");
  uncertainty_cmd->add_option("--fit-tau", fit_tau, "target rate used while fitting the ensemble");

  fs::path matrix_path, removals_path, output_path;
  SoftImputeConfig si;
  std::string schedule = "fixed";
  auto* complete = app.add_subcommand("complete", "reconstruct removed entries of a CSV matrix");
  complete->add_option("--matrix", matrix_path, "matrix CSV")->required()->check(CLI::ExistingFile);
  complete->add_option("--removals", removals_path, "CSV of row,col pairs")->required()->check(CLI::ExistingFile);
  complete->add_option("--zeta", si.zeta);
  complete->add_option("--epsilon", si.epsilon);
  complete->add_option("--max-iter", si.max_iterations);
  complete->add_option("--schedule", schedule, "fixed or per_iteration")->check(CLI::IsMember({"fixed", "per_iteration"}));
  complete->add_option("--out", output_path, "reconstructed matrix CSV (default: stdout)");

  std::vector<fs::path> report_runs;
  bool svg = false;
  fs::path report_out;
  auto* report = app.add_subcommand("report", "final-return table over run directories");
  report->add_option("--runs", report_runs, "run or experiment directories")->required()->expected(1, -1);
  report->add_flag("--svg", svg, "also write return and arank line charts");
  report->add_option("--out", report_out, "output directory (default: stdout only)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (seed_override) cfg.seeds = {*seed_override};
      const auto dirs = run_experiment(cfg, out_dir);
      for (const auto& d : dirs) std::cout << d.string() << '\n';
    } else if (*rank) {
      return cmd_rank_scan(scan);
    } else if (*correlate_cmd) {
      return cmd_correlate(corr, quantifier, fit_steps, fit_tau);
    } else if (*uncertainty_cmd) {
      return cmd_uncertainty_scan(uscan, uquantifier, fit_steps, fit_tau);
    } else if (*complete) {
      si.schedule = schedule == "fixed" ? ShrinkageSchedule::kFixedFromInput : ShrinkageSchedule::kPerIteration;
      const Matrix m = read_matrix_csv(matrix_path);
      const ReconstructResult r = reconstruct(m, read_removals_csv(removals_path), si);
      if (output_path.empty()) {
        for (std::size_t i = 0; i < r.matrix.rows(); ++i) {
          for (std::size_t j = 0; j < r.matrix.cols(); ++j) std::cout << (j ? "," : "") << csv_number(r.matrix(i, j));
          std::cout << '\n';
        }
      } else {
        write_matrix_csv(output_path, r.matrix);
      }
      std::cerr << Json{{"iterations", r.solve.iterations},
                        {"converged", r.solve.converged},
                        {"final_relative_change", r.solve.final_relative_change}}
                       .dump()
                << '\n';
    } else if (*report) {
      const Json agg = aggregate_runs(report_runs);
      const std::string table = report_table_csv(agg);
      std::cout << table;
      if (!report_out.empty()) {
        fs::create_directories(report_out);
        write_text(report_out / "report.json", agg.dump(2) + "\n");
        write_text(report_out / "final_returns.csv", table);
      }
      if (svg) {
        std::vector<std::pair<std::string, std::vector<MetricsRow>>> curves;
        for (const auto& g : agg.at("table"))
          for (const auto& run : g.at("runs")) {
            const fs::path dir = run.at("dir").get<std::string>();
            curves.emplace_back(g.at("variant").get<std::string>() + " seed " + std::to_string(run.at("seed").get<std::uint64_t>()),
                                read_metrics(dir / "metrics.csv"));
          }
        write_text((report_out.empty() ? fs::path(".") : report_out) / "curves.svg", metrics_svg(curves));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
