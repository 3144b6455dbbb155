#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ualqe/linalg.hpp"

namespace ualqe {

using Index2 = std::pair<std::size_t, std::size_t>;

/// Set of observed (row, col) positions of a rows x cols matrix.
class ObservationMask {
 public:
  ObservationMask(std::size_t rows, std::size_t cols, bool observed = true);

  static ObservationMask from_observed(std::size_t rows, std::size_t cols, const std::vector<Index2>& observed);
  /// Everything observed except the listed entries.
  static ObservationMask complement_of(std::size_t rows, std::size_t cols, const std::vector<Index2>& removed);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool observed(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool observed);
  std::size_t observed_count() const;

  /// Every row and every column keeps at least one observed entry.
  bool feasible() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<char> bits_;
};

/// P_Omega (keep_observed = true) or its complement: kept entries copied from m,
/// everything else zero.
Matrix project(const Matrix& m, const ObservationMask& mask, bool keep_observed);

enum class ShrinkageSchedule {
  // lambda = sigma_max(zero-filled input) / zeta, held for the whole solve
  kFixedFromInput,
  // lambda recomputed from the combined matrix at every iteration
  kPerIteration,
};

struct SoftImputeConfig {
  double zeta = 50.0;
  double epsilon = 1e-4;
  int max_iterations = 100;
  ShrinkageSchedule schedule = ShrinkageSchedule::kFixedFromInput;

  void validate() const;
};

struct SoftImputeResult {
  Matrix completed;  // last shrunk iterate
  int iterations = 0;
  bool converged = false;
  double final_relative_change = 0.0;
  double lambda = 0.0;  // shrinkage used by the last iteration
  std::vector<double> relative_changes;
};

SoftImputeResult soft_impute(const Matrix& m, const ObservationMask& mask, const SoftImputeConfig& cfg = {});

struct ReconstructResult {
  Matrix matrix;
  SoftImputeResult solve;  // iterations == 0 when nothing was removed
};

/// Erase `removed` from q, complete by soft_impute, and splice the estimates
/// back: only removed positions change.
ReconstructResult reconstruct(const Matrix& q, const std::vector<Index2>& removed, const SoftImputeConfig& cfg = {});

}  // namespace ualqe
