#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ualqe/completion.hpp"
#include "ualqe/linalg.hpp"

namespace ualqe {

/// Cross product of row states and column actions: entry (i, j) is the pair
/// (states.col(i), actions.col(j)).
struct StateActionGrid {
  Eigen::MatrixXd states;   // d_s x rows
  Eigen::MatrixXd actions;  // d_a x cols

  std::size_t rows() const { return static_cast<std::size_t>(states.cols()); }
  std::size_t cols() const { return static_cast<std::size_t>(actions.cols()); }
};

/// Affine map of each input dimension onto roughly [-1, 1] before hashing.
struct HashNormalizer {
  Eigen::VectorXd center;
  Eigen::VectorXd half_range;

  static HashNormalizer from_bounds(const Eigen::VectorXd& low, const Eigen::VectorXd& high);
};

using HashCode = std::uint64_t;

/// SimHash visit counter: 64 fixed random hyperplanes over the concatenated
/// (state, action) vector; bit b is set iff the dot product with plane b is >= 0.
class CountTable {
 public:
  static constexpr int kCodeBits = 64;

  CountTable(int state_dim, int action_dim, std::uint64_t projection_seed);
  CountTable(int state_dim, int action_dim, std::uint64_t projection_seed, HashNormalizer normalizer);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::uint64_t projection_seed() const { return seed_; }
  const Eigen::MatrixXd& hyperplanes() const { return planes_; }

  HashCode hash(const Eigen::Ref<const Eigen::VectorXd>& state, const Eigen::Ref<const Eigen::VectorXd>& action) const;
  void record_visit(const Eigen::Ref<const Eigen::VectorXd>& state, const Eigen::Ref<const Eigen::VectorXd>& action);
  std::uint64_t count(const Eigen::Ref<const Eigen::VectorXd>& state, const Eigen::Ref<const Eigen::VectorXd>& action) const;
  std::uint64_t count(HashCode code) const;

  const std::unordered_map<HashCode, std::uint64_t>& counts() const { return counts_; }
  void set_count(HashCode code, std::uint64_t n) { counts_[code] = n; }
  std::uint64_t total_visits() const { return total_; }

 private:
  int state_dim_;
  int action_dim_;
  std::uint64_t seed_;
  Eigen::MatrixXd planes_;  // 64 x (d_s + d_a)
  HashNormalizer norm_;
  std::unordered_map<HashCode, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

HashCode hash_state_action(const Eigen::VectorXd& state, const Eigen::VectorXd& action, const CountTable& table);

/// 1 / N(s, a); 1.0 for a pair never counted.
double u_cb(const CountTable& table, const Eigen::Ref<const Eigen::VectorXd>& state, const Eigen::Ref<const Eigen::VectorXd>& action);
double u_cb_from_count(std::uint64_t n);

/// Population standard deviation of an ensemble's estimates (K >= 2).
double u_bb(std::span<const double> estimates);

/// Non-negative per-entry uncertainty of a Q-matrix.
class UncertaintyMatrix {
 public:
  explicit UncertaintyMatrix(Matrix values);

  std::size_t rows() const { return values_.rows(); }
  std::size_t cols() const { return values_.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return values_(r, c); }
  const Matrix& values() const { return values_; }

  double mean() const;
  double stddev() const;  // population

 private:
  Matrix values_;
};

/// Per-member Q-matrices over a grid, one Matrix per ensemble member.
using EnsembleEvaluator = std::function<std::vector<Matrix>(const StateActionGrid&)>;
using Quantifier = std::variant<std::reference_wrapper<const CountTable>, EnsembleEvaluator>;

UncertaintyMatrix cb_uncertainty_matrix(const StateActionGrid& grid, const CountTable& table);
UncertaintyMatrix bb_uncertainty_matrix(std::span<const Matrix> member_estimates);
UncertaintyMatrix uncertainty_matrix(const StateActionGrid& grid, const Quantifier& quantifier);

using RemovalSet = std::vector<Index2>;  // sorted by (row, col)

/// Entries removed per row for a percentage p of `cols` columns: ceil(p/100 * cols).
std::size_t removals_per_row(double p, std::size_t cols);

/// Per row, the ceil(p% * cols) highest-uncertainty columns (ties to the lower
/// column index). A column chosen by every row gets its lowest-uncertainty
/// removal rescinded so that no column is emptied.
RemovalSet select_top_p_per_row(const UncertaintyMatrix& u, double p);

}  // namespace ualqe
