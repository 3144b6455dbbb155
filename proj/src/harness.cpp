#include "ualqe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ualqe {

namespace fs = std::filesystem;

namespace {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_double(const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a number: '" + t + "'");
  }
  if (used != t.size()) throw std::invalid_argument("not a number: '" + t + "'");
  return v;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Json::parse(in);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

int arank_of(const Matrix& q, double delta) { return q.is_zero() ? 0 : static_cast<int>(approximate_rank(q, delta)); }

}  // namespace

QEvaluator critic_evaluator(const Mlp& critic) {
  return [&critic](const StateActionGrid& grid) { return evaluate_grid(critic, grid); };
}

StateActionGrid sample_grid(const ReplayBuffer& buffer, int size, Rng& rng) {
  if (size < 1) throw std::invalid_argument("sample_grid: size must be >= 1");
  if (buffer.size() < static_cast<std::size_t>(size))
    throw std::invalid_argument("sample_grid: buffer holds " + std::to_string(buffer.size()) + " transitions, need " +
                                std::to_string(size));
  const auto rows = buffer.sample_indices(static_cast<std::size_t>(size), rng);
  const auto cols = buffer.sample_indices(static_cast<std::size_t>(size), rng);
  StateActionGrid g;
  g.states.resize(buffer.state_dim(), size);
  g.actions.resize(buffer.action_dim(), size);
  for (int k = 0; k < size; ++k) {
    g.states.col(k) = buffer.at(rows[static_cast<std::size_t>(k)]).state;
    g.actions.col(k) = buffer.at(cols[static_cast<std::size_t>(k)]).action;
  }
  return g;
}

RankScanResult rank_scan(const QEvaluator& q, const ReplayBuffer& buffer, int num_matrices, int size, double delta, Rng& rng) {
  if (num_matrices < 1) throw std::invalid_argument("rank_scan: num_matrices must be >= 1");
  RankScanResult out;
  for (int m = 0; m < num_matrices; ++m) {
    const int r = arank_of(q(sample_grid(buffer, size, rng)), delta);
    out.aranks.push_back(r);
    ++out.histogram[r];
  }
  const double n = static_cast<double>(num_matrices);
  out.mean = std::accumulate(out.aranks.begin(), out.aranks.end(), 0.0) / n;
  double ss = 0.0;
  for (int r : out.aranks) ss += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(ss / n);
  return out;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: sample sizes differ");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

CorrelationReport correlate(const QEvaluator& q, const Quantifier& quantifier, const ReplayBuffer& buffer, int num_matrices,
                            int size, double delta, Rng& rng) {
  if (num_matrices < 1) throw std::invalid_argument("correlate: num_matrices must be >= 1");
  CorrelationReport out;
  std::vector<double> ranks, means;
  for (int m = 0; m < num_matrices; ++m) {
    const StateActionGrid grid = sample_grid(buffer, size, rng);
    const UncertaintyMatrix u = uncertainty_matrix(grid, quantifier);
    CorrelationRow row{u.mean(), u.stddev(), arank_of(q(grid), delta)};
    out.rows.push_back(row);
    ranks.push_back(row.arank);
    means.push_back(row.u_mean);
  }
  out.spearman = spearman(ranks, means);
  return out;
}

double evaluate_policy(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& policy, Environment& env, int episodes,
                       std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
  env.reseed(seed);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd s = env.reset();
    for (;;) {
      const StepResult r = env.step(policy(s));
      total += r.reward;
      if (r.terminal) break;
      s = r.next_state;
    }
  }
  return total / episodes;
}

double lqr_oracle_return(const LqrParams& params, int episodes, std::uint64_t eval_seed) {
  LqrEnv env(params, 0);
  const Eigen::MatrixXd gain = solve_discounted_riccati(params).gain;
  const EnvSpec spec = env.spec();
  return evaluate_policy([&](const Eigen::VectorXd& s) { return spec.clip_action(-gain * s); }, env, episodes, eval_seed);
}

std::uint64_t evaluation_seed(std::uint64_t seed) { return make_stream(seed, streams::kEvaluation)(); }

std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.step) + "," + fmt(r.average_return) + "," + fmt(r.arank_mean) + "," + fmt(r.arank_std) + "," +
         fmt(r.wall_time);
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != kMetricsHeader) throw std::runtime_error(path.string() + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 5) throw std::runtime_error(path.string() + ": malformed metrics row");
    rows.push_back({static_cast<int>(parse_double(cells[0])), parse_double(cells[1]), parse_double(cells[2]),
                    parse_double(cells[3]), parse_double(cells[4])});
  }
  return rows;
}

std::vector<MetricsRow> run_seed(const ExperimentConfig& config, std::uint64_t seed, const fs::path& dir) {
  config.validate();
  fs::create_directories(dir);
  ExperimentConfig echo = config;
  echo.seeds = {seed};
  write_json(dir / "config.json", to_json(echo));

  const AgentConfig& ac = config.agent;
  auto env = make_environment(config.env, ac.gamma, make_stream(seed, streams::kEnvironment)());
  auto eval_env = make_environment(config.env, ac.gamma, 0);
  Agent agent(ac, env->spec(), seed);
  ReplayBuffer buffer(ac.replay_capacity, env->spec().state_dim, env->spec().action_dim);
  Rng scan_rng = make_stream(seed, streams::kRankScan);
  const std::uint64_t eval_seed = evaluation_seed(seed);

  std::set<int> checkpoints(config.checkpoint_steps.begin(), config.checkpoint_steps.end());
  checkpoints.insert(config.total_steps / 2);
  checkpoints.insert(config.total_steps);

  std::ofstream metrics(dir / "metrics.csv");
  std::ofstream timing(dir / "timing.csv");
  if (!metrics || !timing) throw std::runtime_error("cannot write metrics in " + dir.string());
  metrics << kMetricsHeader << '\n';
  timing << "step,wall_time\n";
  const auto start = std::chrono::steady_clock::now();
  std::vector<MetricsRow> rows;

  auto evaluate = [&](int step) {
    MetricsRow row;
    row.step = step;
    row.average_return =
        evaluate_policy([&](const Eigen::VectorXd& s) { return agent.act(s); }, *eval_env, config.eval_episodes, eval_seed);
    const RankScanConfig& rs = config.rank_scan;
    if (rs.num_matrices > 0 && buffer.size() >= static_cast<std::size_t>(rs.matrix_size)) {
      const RankScanResult scan = rank_scan(critic_evaluator(agent.critic()), buffer, rs.num_matrices, rs.matrix_size, rs.delta, scan_rng);
      row.arank_mean = scan.mean;
      row.arank_std = scan.stddev;
    } else {
      row.arank_mean = row.arank_std = std::nan("");
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.wall_time = config.record_wall_time ? elapsed : 0.0;
    metrics << format_metrics_row(row) << '\n' << std::flush;
    timing << step << ',' << fmt(elapsed) << '\n' << std::flush;
    rows.push_back(row);
  };
  auto checkpoint = [&](int step) {
    const fs::path cp = dir / "checkpoints" / ("step_" + std::to_string(step));
    agent.save(cp);
    buffer.save(cp / "buffer.bin");
  };

  evaluate(0);
  if (checkpoints.count(0)) checkpoint(0);
  Eigen::VectorXd s = env->reset();
  int episode_length = 0;
  for (int t = 1; t <= config.total_steps; ++t) {
    const Eigen::VectorXd a = agent.explore(s);
    const StepResult r = env->step(a);
    buffer.push({s, a, r.reward, r.next_state, r.terminal});
    ++episode_length;
    if (r.terminal) {
      s = env->reset();
    } else {
      s = r.next_state;
    }
    const bool ready = buffer.size() >= static_cast<std::size_t>(ac.batch_size);
    if (!ac.episodic_updates) {
      if (ready) agent.train_step(buffer);
    } else if (r.terminal || t == config.total_steps) {
      if (ready)
        for (int k = 0; k < episode_length; ++k) agent.train_step(buffer);
      episode_length = 0;
    }
    if (r.terminal) episode_length = 0;
    if (t % config.eval_interval == 0) evaluate(t);
    if (checkpoints.count(t)) checkpoint(t);
  }

  Json report;
  report["seed"] = seed;
  report["variant"] = to_string(ac.variant);
  report["env"] = config.env.name;
  report["final_step"] = rows.back().step;
  report["final_return"] = rows.back().average_return;
  double best = rows.front().average_return;
  for (const auto& row : rows) best = std::max(best, row.average_return);
  report["best_return"] = best;
  report["final_arank_mean"] = std::isnan(rows.back().arank_mean) ? Json(nullptr) : Json(rows.back().arank_mean);
  report["critic_updates"] = agent.critic_updates();
  if (auto* lqr = dynamic_cast<LqrEnv*>(eval_env.get())) {
    const double optimal = lqr_oracle_return(lqr->params(), config.eval_episodes, eval_seed);
    report["optimal_return"] = optimal;
    // Returns are costs (negative), so the attained fraction is optimal / achieved.
    report["optimality_ratio"] = rows.back().average_return < 0.0 ? optimal / rows.back().average_return : 1.0;
  }
  write_json(dir / "report.json", report);
  return rows;
}

std::vector<fs::path> run_experiment(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  fs::create_directories(out);
  write_json(out / "config.json", to_json(config));
  std::vector<fs::path> dirs;
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = out / ("seed_" + std::to_string(seed));
    run_seed(config, seed, dir);
    dirs.push_back(dir);
  }
  write_json(out / "report.json", aggregate_runs({out}));
  return dirs;
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols) throw std::invalid_argument(path.string() + ": ragged matrix at row " + std::to_string(rows));
    for (const auto& c : cells) values.push_back(parse_double(c));
    ++rows;
  }
  if (rows == 0) throw std::invalid_argument(path.string() + ": empty matrix");
  return Matrix(rows, cols, std::move(values));
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt(m(i, j));
    out << '\n';
  }
}

std::vector<Index2> read_removals_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Index2> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    const double r = cells.size() == 2 ? parse_double(cells[0]) : -1.0;
    const double c = cells.size() == 2 ? parse_double(cells[1]) : -1.0;
    if (r < 0 || c < 0 || r != std::floor(r) || c != std::floor(c))
      throw std::invalid_argument(path.string() + ": expected 'row,col' with non-negative integers, got '" + line + "'");
    out.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  }
  return out;
}

Json aggregate_runs(const std::vector<fs::path>& runs) {
  std::vector<fs::path> seed_dirs;
  for (const fs::path& p : runs) {
    if (fs::exists(p / "report.json") && read_json(p / "report.json").contains("seed")) {
      seed_dirs.push_back(p);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_directory() && fs::exists(e.path() / "report.json")) children.push_back(e.path());
    if (children.empty()) throw std::invalid_argument(p.string() + " holds no run reports");
    std::sort(children.begin(), children.end());
    seed_dirs.insert(seed_dirs.end(), children.begin(), children.end());
  }
  std::map<std::string, Json> groups;
  std::vector<std::string> order;
  for (const fs::path& d : seed_dirs) {
    const Json r = read_json(d / "report.json");
    const std::string key = r.at("variant").get<std::string>() + "|" + r.at("env").get<std::string>();
    if (!groups.count(key)) {
      groups[key] = {{"variant", r.at("variant")}, {"env", r.at("env")}, {"runs", Json::array()}};
      order.push_back(key);
    }
    Json run = r;
    run["dir"] = d.string();
    groups[key]["runs"].push_back(run);
  }
  Json rows = Json::array();
  for (const std::string& key : order) {
    Json g = groups[key];
    std::vector<double> finals;
    for (const auto& run : g["runs"]) finals.push_back(run.at("final_return").get<double>());
    const double n = static_cast<double>(finals.size());
    const double mean = std::accumulate(finals.begin(), finals.end(), 0.0) / n;
    double ss = 0.0;
    for (double f : finals) ss += (f - mean) * (f - mean);
    g["final_returns"] = finals;
    g["mean_final_return"] = mean;
    g["std_final_return"] = std::sqrt(ss / n);
    if (g["runs"].front().contains("optimal_return")) {
      int reached = 0;
      double opt = 0.0;
      for (const auto& run : g["runs"]) {
        opt += run.at("optimal_return").get<double>();
        if (run.at("optimality_ratio").get<double>() >= 0.8) ++reached;
      }
      g["mean_optimal_return"] = opt / n;
      g["seeds_reaching_80pct"] = reached;
    }
    rows.push_back(g);
  }
  return {{"table", rows}};
}

std::string report_table_csv(const Json& aggregate) {
  std::ostringstream os;
  os << "variant,env,seeds,mean_final_return,std_final_return,final_returns,mean_optimal_return,seeds_reaching_80pct\n";
  for (const auto& g : aggregate.at("table")) {
    std::string finals;
    for (const auto& f : g.at("final_returns")) finals += (finals.empty() ? "" : ";") + fmt(f.get<double>());
    os << g.at("variant").get<std::string>() << ',' << g.at("env").get<std::string>() << ',' << g.at("runs").size() << ','
       << fmt(g.at("mean_final_return").get<double>()) << ',' << fmt(g.at("std_final_return").get<double>()) << ',' << finals
       << ',' << (g.contains("mean_optimal_return") ? fmt(g.at("mean_optimal_return").get<double>()) : "") << ','
       << (g.contains("seeds_reaching_80pct") ? std::to_string(g.at("seeds_reaching_80pct").get<int>()) : "") << '\n';
  }
  return os.str();
}

std::string metrics_svg(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs) {
  constexpr double kW = 640, kH = 260, kPad = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << 2 * kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  auto panel = [&](double y0, const char* title, auto value) {
    double xmax = 1, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& [name, rows] : runs)
      for (const auto& r : rows) {
        const double v = value(r);
        if (std::isnan(v)) continue;
        xmax = std::max(xmax, static_cast<double>(r.step));
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    if (!(ymin <= ymax)) ymin = 0, ymax = 1;
    if (ymin == ymax) ymin -= 0.5, ymax += 0.5;
    const double pw = kW - 2 * kPad, ph = kH - 2 * kPad;
    os << "<text x=\"" << kPad << "\" y=\"" << y0 + 20 << "\">" << title << "</text>\n";
    os << "<rect x=\"" << kPad << "\" y=\"" << y0 + kPad << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"4\" y=\"" << y0 + kPad + 4 << "\">" << fmt(ymax).substr(0, 8) << "</text>\n";
    os << "<text x=\"4\" y=\"" << y0 + kPad + ph << "\">" << fmt(ymin).substr(0, 8) << "</text>\n";
    os << "<text x=\"" << kPad + pw - 30 << "\" y=\"" << y0 + kH - kPad + 15 << "\">" << xmax << "</text>\n";
    std::size_t c = 0;
    for (const auto& [name, rows] : runs) {
      std::string pts;
      for (const auto& r : rows) {
        const double v = value(r);
        if (std::isnan(v)) continue;
        const double x = kPad + pw * r.step / xmax;
        const double y = y0 + kPad + ph * (1.0 - (v - ymin) / (ymax - ymin));
        pts += fmt(x) + "," + fmt(y) + " ";
      }
      const char* color = kColors[c % std::size(kColors)];
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << pts << "\"/>\n";
      os << "<text x=\"" << kPad + pw - 150 << "\" y=\"" << y0 + kPad + 14 + 12 * c << "\" fill=\"" << color << "\">" << name
         << "</text>\n";
      ++c;
    }
  };
  panel(0, "average return", [](const MetricsRow& r) { return r.average_return; });
  panel(kH, "approximate rank (mean)", [](const MetricsRow& r) { return r.arank_mean; });
  os << "</svg>\n";
  return os.str();
}

}  // namespace ualqe
