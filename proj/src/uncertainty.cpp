#include "ualqe/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ualqe/rng.hpp"

namespace ualqe {

HashNormalizer HashNormalizer::from_bounds(const Eigen::VectorXd& low, const Eigen::VectorXd& high) {
  if (low.size() != high.size()) throw std::invalid_argument("HashNormalizer: bound sizes differ");
  HashNormalizer n;
  n.center = 0.5 * (low + high);
  n.half_range = 0.5 * (high - low);
  for (Eigen::Index i = 0; i < n.half_range.size(); ++i)
    if (!(n.half_range[i] > 0.0)) throw std::invalid_argument("HashNormalizer: empty bound interval");
  return n;
}

CountTable::CountTable(int state_dim, int action_dim, std::uint64_t projection_seed)
    : CountTable(state_dim, action_dim, projection_seed,
                 HashNormalizer{Eigen::VectorXd::Zero(state_dim + action_dim),
                                Eigen::VectorXd::Ones(state_dim + action_dim)}) {}

CountTable::CountTable(int state_dim, int action_dim, std::uint64_t projection_seed, HashNormalizer normalizer)
    : state_dim_(state_dim), action_dim_(action_dim), seed_(projection_seed), norm_(std::move(normalizer)) {
  if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("CountTable: dimensions must be positive");
  const int d = state_dim + action_dim;
  if (norm_.center.size() != d || norm_.half_range.size() != d)
    throw std::invalid_argument("CountTable: normalizer dimension mismatch");
  Rng rng = make_stream(projection_seed, streams::kHashProjection);
  std::normal_distribution<double> gauss(0.0, 1.0);
  planes_.resize(kCodeBits, d);
  for (int b = 0; b < kCodeBits; ++b)
    for (int j = 0; j < d; ++j) planes_(b, j) = gauss(rng);
}

HashCode CountTable::hash(const Eigen::Ref<const Eigen::VectorXd>& state,
                          const Eigen::Ref<const Eigen::VectorXd>& action) const {
  if (state.size() != state_dim_ || action.size() != action_dim_)
    throw std::invalid_argument("CountTable::hash: dimension mismatch");
  Eigen::VectorXd x(state_dim_ + action_dim_);
  x << state, action;
  x = ((x - norm_.center).array() / norm_.half_range.array()).matrix();
  const Eigen::VectorXd dots = planes_ * x;
  HashCode code = 0;
  for (int b = 0; b < kCodeBits; ++b)
    if (dots[b] >= 0.0) code |= (HashCode{1} << b);
  return code;
}

void CountTable::record_visit(const Eigen::Ref<const Eigen::VectorXd>& state,
                              const Eigen::Ref<const Eigen::VectorXd>& action) {
  ++counts_[hash(state, action)];
  ++total_;
}

std::uint64_t CountTable::count(HashCode code) const {
  const auto it = counts_.find(code);
  return it == counts_.end() ? 0 : it->second;
}

std::uint64_t CountTable::count(const Eigen::Ref<const Eigen::VectorXd>& state,
                                const Eigen::Ref<const Eigen::VectorXd>& action) const {
  return count(hash(state, action));
}

HashCode hash_state_action(const Eigen::VectorXd& state, const Eigen::VectorXd& action, const CountTable& table) {
  return table.hash(state, action);
}

double u_cb_from_count(std::uint64_t n) { return n == 0 ? 1.0 : 1.0 / static_cast<double>(n); }

double u_cb(const CountTable& table, const Eigen::Ref<const Eigen::VectorXd>& state,
            const Eigen::Ref<const Eigen::VectorXd>& action) {
  return u_cb_from_count(table.count(state, action));
}

double u_bb(std::span<const double> estimates) {
  if (estimates.size() < 2) throw std::invalid_argument("u_bb: need at least two estimates");
  // Shifted by the first estimate so identical members give exactly zero.
  const double k = static_cast<double>(estimates.size());
  const double shift = estimates.front();
  double mean = 0.0;
  for (double q : estimates) mean += q - shift;
  mean /= k;
  double ss = 0.0;
  for (double q : estimates) ss += (q - shift - mean) * (q - shift - mean);
  return std::sqrt(ss / k);
}

UncertaintyMatrix::UncertaintyMatrix(Matrix values) : values_(std::move(values)) {
  for (double x : values_.data())
    if (!(x >= 0.0)) throw std::invalid_argument("UncertaintyMatrix: entries must be non-negative");
}

double UncertaintyMatrix::mean() const {
  const auto& d = values_.data();
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double UncertaintyMatrix::stddev() const {
  const double mu = mean();
  double ss = 0.0;
  for (double x : values_.data()) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(values_.size()));
}

UncertaintyMatrix cb_uncertainty_matrix(const StateActionGrid& grid, const CountTable& table) {
  Matrix u(grid.rows(), grid.cols());
  for (std::size_t i = 0; i < grid.rows(); ++i)
    for (std::size_t j = 0; j < grid.cols(); ++j)
      u(i, j) = u_cb(table, grid.states.col(static_cast<Eigen::Index>(i)), grid.actions.col(static_cast<Eigen::Index>(j)));
  return UncertaintyMatrix(std::move(u));
}

UncertaintyMatrix bb_uncertainty_matrix(std::span<const Matrix> member_estimates) {
  if (member_estimates.size() < 2) throw std::invalid_argument("bb_uncertainty_matrix: need at least two members");
  const std::size_t rows = member_estimates.front().rows();
  const std::size_t cols = member_estimates.front().cols();
  for (const Matrix& m : member_estimates)
    if (m.rows() != rows || m.cols() != cols) throw std::invalid_argument("bb_uncertainty_matrix: member shapes differ");
  Matrix u(rows, cols);
  std::vector<double> column(member_estimates.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t k = 0; k < member_estimates.size(); ++k) column[k] = member_estimates[k](i, j);
      u(i, j) = u_bb(column);
    }
  }
  return UncertaintyMatrix(std::move(u));
}

UncertaintyMatrix uncertainty_matrix(const StateActionGrid& grid, const Quantifier& quantifier) {
  if (const auto* table = std::get_if<std::reference_wrapper<const CountTable>>(&quantifier))
    return cb_uncertainty_matrix(grid, table->get());
  const auto& evaluate = std::get<EnsembleEvaluator>(quantifier);
  const std::vector<Matrix> members = evaluate(grid);
  for (const Matrix& m : members)
    if (m.rows() != grid.rows() || m.cols() != grid.cols())
      throw std::invalid_argument("uncertainty_matrix: ensemble output does not match grid");
  return bb_uncertainty_matrix(members);
}

std::size_t removals_per_row(double p, std::size_t cols) {
  if (!(p >= 0.0 && p < 100.0)) throw std::invalid_argument("removal percentage must lie in [0, 100)");
  return static_cast<std::size_t>(std::ceil(p * static_cast<double>(cols) / 100.0));
}

RemovalSet select_top_p_per_row(const UncertaintyMatrix& u, double p) {
  const std::size_t rows = u.rows();
  const std::size_t cols = u.cols();
  const std::size_t k = removals_per_row(p, cols);
  if (k == 0) return {};
  if (k > cols - 1) throw std::invalid_argument("select_top_p_per_row: percentage would empty a row");

  std::vector<std::vector<char>> chosen(rows, std::vector<char>(cols, 0));
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (u(r, a) != u(r, b)) return u(r, a) > u(r, b);
                        return a < b;
                      });
    for (std::size_t t = 0; t < k; ++t) chosen[r][order[t]] = 1;
  }

  // A single row cannot keep every column observed; the guard needs rows >= 2.
  for (std::size_t c = 0; rows > 1 && c < cols; ++c) {
    bool all_removed = true;
    for (std::size_t r = 0; r < rows && all_removed; ++r) all_removed = chosen[r][c] != 0;
    if (!all_removed) continue;
    std::size_t keep = 0;
    for (std::size_t r = 1; r < rows; ++r)
      if (u(r, c) < u(keep, c)) keep = r;
    chosen[keep][c] = 0;
  }

  RemovalSet out;
  out.reserve(rows * k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (chosen[r][c]) out.emplace_back(r, c);
  return out;
}

}  // namespace ualqe
