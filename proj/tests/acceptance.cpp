// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Usage: acceptance [--out DIR] [--only 1,4,7]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "ualqe/harness.hpp"

using namespace ualqe;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = UALQE_CONFIG_DIR;
const std::string kCli = UALQE_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Shell {
  int status = -1;
  std::string out;
};

Shell sh(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  Shell r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) throw std::runtime_error("cannot run " + cmd);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) r.out += buf;
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  if (r.status != 0) throw std::runtime_error("command failed (" + std::to_string(r.status) + "): " + cmd + "\n" + r.out);
  return r;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return Json::parse(in);
}

void write_json(const fs::path& p, const Json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << '\n';
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string fmt(double x, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << x;
  return os.str();
}

Json base_config(const std::string& name) { return read_json(kConfigDir / name); }

fs::path train(const Json& config, const fs::path& out) {
  fs::remove_all(out);
  write_json(out.string() + ".json", config);
  sh("train --config " + out.string() + ".json --out " + out.string());
  return out;
}

// approximate rank by direct cumulative sums over the sorted absolute diagonal.
int brute_force_arank(std::vector<double> d, double delta) {
  for (double& x : d) x = std::abs(x);
  std::sort(d.begin(), d.end(), std::greater<>());
  double total = 0.0;
  for (double x : d) total += x;
  double acc = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    acc += d[k];
    if (acc >= (1.0 - delta) * total) return static_cast<int>(k + 1);
  }
  return static_cast<int>(d.size());
}

Matrix gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

Outcome criterion1(const fs::path&) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> dim(1, 64);
  int matches = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> d(static_cast<std::size_t>(dim(rng)));
    for (double& x : d) x = u(rng);
    const double delta = t % 5 == 0 ? 0.1 : 0.01;
    matches += approximate_rank(Matrix::diagonal(d), delta) == brute_force_arank(d, delta);
  }
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Matrix m = gaussian(static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng)), rng);
    worst = std::max(worst, (svd(m).reconstruct() - m).frobenius_norm() / m.frobenius_norm());
  }
  return {matches == 50 && worst < 1e-9,
          "arank matches " + std::to_string(matches) + "/50; worst SVD reconstruction error " + fmt(worst)};
}

Outcome criterion2(const fs::path&) {
  std::mt19937_64 rng(2);
  SoftImputeConfig cfg;
  cfg.zeta = 50.0;
  cfg.epsilon = 1e-4;
  cfg.max_iterations = 100;
  std::bernoulli_distribution drop(0.3);
  int recovered = 0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Matrix truth = gaussian(50, 3, rng) * gaussian(3, 50, rng);
    std::vector<Index2> removed;
    do {
      removed.clear();
      for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 50; ++j)
          if (drop(rng)) removed.emplace_back(i, j);
    } while (!ObservationMask::complement_of(50, 50, removed).feasible());
    const Matrix est = reconstruct(truth, removed, cfg).matrix;
    double num = 0.0, den = 0.0;
    for (const auto& [i, j] : removed) {
      num += (est(i, j) - truth(i, j)) * (est(i, j) - truth(i, j));
      den += truth(i, j) * truth(i, j);
    }
    const double err = std::sqrt(num / den);
    worst = std::max(worst, err);
    recovered += err < 0.05;
  }
  return {recovered >= 95, std::to_string(recovered) + "/100 recovered within 5%; worst error " + fmt(worst)};
}

double probe(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) { return net.forward(x).cwiseProduct(w).sum(); }

Outcome criterion3(const fs::path&) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> width(1, 8);
  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  for (int t = 0; t < 20; ++t) {
    const int in = width(rng), out = width(rng);
    const OutputActivation act = t % 2 ? OutputActivation::kBoundedTanh : OutputActivation::kIdentity;
    Mlp net({in, width(rng), width(rng), out}, act, rng);
    if (act == OutputActivation::kBoundedTanh) net.set_output_bounds(Eigen::VectorXd::Constant(out, -2.0), Eigen::VectorXd::Constant(out, 2.0));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(in, 4), w = Eigen::MatrixXd::Random(out, 4);
    ForwardCache cache;
    net.forward(x, cache);
    Eigen::MatrixXd dx;
    const std::vector<double> g = flatten(net.backward(cache, w, &dx));
    std::vector<double> p = net.flatten();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double orig = p[k];
      p[k] = orig + h;
      net.unflatten(p);
      const double up = probe(net, x, w);
      p[k] = orig - h;
      net.unflatten(p);
      const double down = probe(net, x, w);
      p[k] = orig;
      net.unflatten(p);
      worst = std::max(worst, rel(g[k], (up - down) / (2 * h)));
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      worst = std::max(worst, rel(dx(i), (probe(net, xp, w) - probe(net, xm, w)) / (2 * h)));
    }
  }
  return {worst < 1e-4, "max relative gradient error " + fmt(worst)};
}

Outcome criterion4(const fs::path&) {
  const EnvConfig env_cfg;
  auto env = make_environment(env_cfg, 0.99, 4);
  const auto& lqr = dynamic_cast<const LqrEnv&>(*env);
  ReplayBuffer buffer(20000, 1, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> act(-lqr.params().action_bound, lqr.params().action_bound);
  Eigen::VectorXd s = env->reset();
  while (buffer.size() < 20000) {
    const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, act(rng));
    const StepResult r = env->step(a);
    buffer.push({s, a, r.reward, r.next_state, r.terminal});
    s = r.terminal ? env->reset() : r.next_state;
  }
  const QEvaluator qstar = [&](const StateActionGrid& g) {
    Matrix m(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) m(i, j) = lqr_optimal_q(*env, g.states.col(i), g.actions.col(j));
    return m;
  };
  Rng scan = make_stream(4, streams::kRankScan);
  const RankScanResult r = rank_scan(qstar, buffer, 100, 64, 0.01, scan);
  const int worst = *std::max_element(r.aranks.begin(), r.aranks.end());
  return {worst <= 3, "max arank over 100 matrices " + std::to_string(worst) + " (mean " + fmt(r.mean) + ")"};
}

double mean_arank(const std::vector<MetricsRow>& rows, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = begin; i < end; ++i)
    if (!std::isnan(rows[i].arank_mean)) {
      sum += rows[i].arank_mean;
      ++n;
    }
  return n ? sum / n : std::nan("");
}

fs::path pendulum_runs(const fs::path& out) { return out / "c5_pendulum_ddpg"; }

Outcome criterion5(const fs::path& out) {
  const fs::path dir = train(base_config("acceptance_pendulum.json"), pendulum_runs(out));
  int decreased = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto rows = read_metrics(dir / ("seed_" + std::to_string(seed)) / "metrics.csv");
    const std::size_t n = std::max<std::size_t>(1, rows.size() / 10);
    const double first = mean_arank(rows, 0, n), last = mean_arank(rows, rows.size() - n, rows.size());
    decreased += last < first;
    detail += " seed" + std::to_string(seed) + ": " + fmt(first) + "->" + fmt(last);
  }
  return {decreased >= 2, std::to_string(decreased) + "/3 seeds decrease;" + detail};
}

Outcome criterion6(const fs::path& out) {
  const fs::path dir = pendulum_runs(out);
  if (!fs::exists(dir / "report.json")) return {false, "criterion 5 runs missing"};
  int positive = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const fs::path run = dir / ("seed_" + std::to_string(seed));
    const int total = read_json(run / "config.json").at("total_steps").get<int>();
    const fs::path ckpt = run / "checkpoints" / ("step_" + std::to_string(total / 2));
    const Shell r = sh("correlate --checkpoint " + ckpt.string() + " --quantifier bb --n 100 --size 64 --seed " +
                       std::to_string(seed) + " --out " + (run / "correlation").string());
    const Json j = Json::parse(r.out.substr(r.out.rfind('{')));
    const bool defined = j.at("correlation_defined").get<bool>();
    const double rho = defined ? j.at("spearman").get<double>() : std::nan("");
    positive += defined && rho > 0.0;
    detail += " seed" + std::to_string(seed) + ": rho=" + (defined ? fmt(rho) : "undefined");
  }
  return {positive >= 2, std::to_string(positive) + "/3 seeds with rho > 0;" + detail};
}

Outcome criterion7(const fs::path& out) {
  Json cfg = base_config("acceptance_lqr.json");
  cfg["total_steps"] = 5000;
  cfg["seeds"] = {0};
  cfg["rank_scan"] = {{"num_matrices", 10}, {"matrix_size", 32}, {"delta", 0.01}};
  cfg["agent"]["variant"] = "DDPG";
  const fs::path a = train(cfg, out / "c7_ddpg");
  cfg["agent"]["variant"] = "UALQE-T-BB";
  cfg["agent"]["p"] = 0.0;
  const fs::path b = train(cfg, out / "c7_tbb_p0");
  const std::string ma = slurp(a / "seed_0" / "metrics.csv"), mb = slurp(b / "seed_0" / "metrics.csv");
  return {!ma.empty() && ma == mb, ma == mb ? "metrics.csv bit-identical" : "metrics.csv differs"};
}

Outcome criterion8(const fs::path& out) {
  std::string runs;
  for (Variant v : kAllVariants) {
    Json cfg = base_config("acceptance_lqr.json");
    cfg["agent"]["variant"] = to_string(v);
    runs += " " + train(cfg, out / ("c8_" + to_string(v))).string();
  }
  const Shell rep = sh("report --runs" + runs + " --svg --out " + (out / "c8_report").string());
  std::cout << rep.out;
  const Json agg = read_json(out / "c8_report" / "report.json");
  int ok = 0;
  std::string detail;
  for (const auto& g : agg.at("table")) {
    const int reached = g.at("seeds_reaching_80pct").get<int>();
    ok += reached >= 2;
    detail += " " + g.at("variant").get<std::string>() + "=" + std::to_string(reached) + "/3";
  }
  const int total = static_cast<int>(agg.at("table").size());
  return {total == 7 && ok == 7, std::to_string(ok) + "/" + std::to_string(total) + " variants reach 80% in >=2 seeds;" + detail};
}

Outcome criterion9(const fs::path& out) {
  std::string detail;
  bool all = true;
  Json lqr = base_config("acceptance_lqr.json");
  lqr["total_steps"] = 3000;
  lqr["seeds"] = {7};
  lqr["rank_scan"] = {{"num_matrices", 5}, {"matrix_size", 32}, {"delta", 0.01}};
  Json pend = base_config("acceptance_pendulum.json");
  pend["total_steps"] = 3000;
  pend["seeds"] = {7};
  pend["rank_scan"] = {{"num_matrices", 5}, {"matrix_size", 32}, {"delta", 0.01}};
  int k = 0;
  for (auto [cfg, variant] : {std::pair{lqr, "UALQE-T-BB"}, std::pair{lqr, "SVRL-E"}, std::pair{pend, "UALQE-E-CB"}}) {
    cfg["agent"]["variant"] = variant;
    const std::string tag = "c9_" + std::to_string(k++);
    const fs::path a = train(cfg, out / (tag + "_a")), b = train(cfg, out / (tag + "_b"));
    const bool same = slurp(a / "seed_7" / "metrics.csv") == slurp(b / "seed_7" / "metrics.csv");
    all = all && same;
    detail += std::string(" ") + cfg["env"]["name"].get<std::string>() + "/" + variant + (same ? "=identical" : "=DIFFERENT");
  }
  return {all, "repeated train runs:" + detail};
}

struct Criterion {
  int id;
  double budget_s;
  std::function<Outcome(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  fs::path out = fs::temp_directory_path() / "ualqe_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::cerr << "usage: acceptance [--out DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(out);
  const std::vector<Criterion> criteria = {{1, 10, criterion1},   {2, 60, criterion2},   {3, 10, criterion3},
                                           {4, 30, criterion4},   {5, 1800, criterion5}, {6, 300, criterion6},
                                           {7, 300, criterion7},  {8, 1800, criterion8}, {9, 600, criterion9}};
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(out);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << "criterion " << c.id << ": " << (pass ? "PASS" : "FAIL") << " (" << fmt(secs, 4) << " s of " << c.budget_s
              << " s budget" << (in_time ? "" : ", over budget") << ") " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
