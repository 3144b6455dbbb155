#include "ualqe/completion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ualqe {

ObservationMask::ObservationMask(std::size_t rows, std::size_t cols, bool observed)
    : rows_(rows), cols_(cols), bits_(rows * cols, observed ? 1 : 0) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("ObservationMask: empty shape");
}

ObservationMask ObservationMask::from_observed(std::size_t rows, std::size_t cols, const std::vector<Index2>& observed) {
  ObservationMask mask(rows, cols, false);
  for (const auto& [r, c] : observed) mask.set(r, c, true);
  return mask;
}

ObservationMask ObservationMask::complement_of(std::size_t rows, std::size_t cols, const std::vector<Index2>& removed) {
  ObservationMask mask(rows, cols, true);
  for (const auto& [r, c] : removed) mask.set(r, c, false);
  return mask;
}

void ObservationMask::set(std::size_t r, std::size_t c, bool observed) {
  if (r >= rows_ || c >= cols_) throw std::out_of_range("ObservationMask: index out of range");
  bits_[r * cols_ + c] = observed ? 1 : 0;
}

std::size_t ObservationMask::observed_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

bool ObservationMask::feasible() const {
  std::vector<char> col_seen(cols_, 0);
  for (std::size_t r = 0; r < rows_; ++r) {
    bool row_seen = false;
    for (std::size_t c = 0; c < cols_; ++c) {
      if (observed(r, c)) {
        row_seen = true;
        col_seen[c] = 1;
      }
    }
    if (!row_seen) return false;
  }
  return std::all_of(col_seen.begin(), col_seen.end(), [](char x) { return x != 0; });
}

Matrix project(const Matrix& m, const ObservationMask& mask, bool keep_observed) {
  if (m.rows() != mask.rows() || m.cols() != mask.cols())
    throw std::invalid_argument("project: matrix and mask shapes differ");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (mask.observed(r, c) == keep_observed) out(r, c) = m(r, c);
  return out;
}

void SoftImputeConfig::validate() const {
  if (!(zeta > 1.0) || !std::isfinite(zeta)) throw std::invalid_argument("SoftImputeConfig: zeta must be > 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("SoftImputeConfig: epsilon must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("SoftImputeConfig: max_iterations must be >= 1");
}

SoftImputeResult soft_impute(const Matrix& m, const ObservationMask& mask, const SoftImputeConfig& cfg) {
  cfg.validate();
  if (m.rows() != mask.rows() || m.cols() != mask.cols())
    throw std::invalid_argument("soft_impute: matrix and mask shapes differ");
  if (!mask.feasible()) throw std::invalid_argument("soft_impute: a row or column has no observed entry");

  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  Matrix observed(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask.observed(r, c)) continue;
      if (!std::isfinite(m(r, c))) throw std::invalid_argument("soft_impute: non-finite observed entry");
      observed(r, c) = m(r, c);
    }
  }

  SoftImputeResult res;
  Matrix previous = observed;  // X_0: observed entries, zeros elsewhere
  Matrix combined = observed;
  Matrix warm_v;
  double lambda = -1.0;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        combined(r, c) = mask.observed(r, c) ? observed(r, c) : previous(r, c);

    SvdResult dec = warm_v.empty() ? svd(combined) : svd_warm(combined, warm_v);
    if (lambda < 0.0 || cfg.schedule == ShrinkageSchedule::kPerIteration)
      lambda = dec.singular_values.front() / cfg.zeta;
    for (double& s : dec.singular_values) s = std::max(s - lambda, 0.0);
    Matrix next = dec.reconstruct();
    warm_v = std::move(dec.v);

    const double prev_norm = previous.frobenius_norm();
    const double diff = (next - previous).frobenius_norm();
    const double change = prev_norm > 0.0 ? diff / prev_norm : (diff > 0.0 ? 1.0 : 0.0);
    res.relative_changes.push_back(change);
    res.iterations = it + 1;
    res.lambda = lambda;
    res.final_relative_change = change;
    previous = std::move(next);
    if (change <= cfg.epsilon) {
      res.converged = true;
      break;
    }
  }
  res.completed = std::move(previous);
  return res;
}

ReconstructResult reconstruct(const Matrix& q, const std::vector<Index2>& removed, const SoftImputeConfig& cfg) {
  ReconstructResult out{q, {}};
  if (removed.empty()) {
    out.solve.completed = q;
    out.solve.converged = true;
    return out;
  }
  const ObservationMask mask = ObservationMask::complement_of(q.rows(), q.cols(), removed);
  out.solve = soft_impute(q, mask, cfg);
  for (const auto& [r, c] : removed) out.matrix(r, c) = out.solve.completed(r, c);
  return out;
}

}  // namespace ualqe
