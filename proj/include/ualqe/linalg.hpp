#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ualqe {

/// Dense row-major matrix of doubles. Constructors reject non-finite entries.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool all_finite() const;
  bool is_zero() const;
  double frobenius_norm() const;
  Matrix transpose() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// Thin SVD: m = u * diag(singular_values) * v^T with k = min(rows, cols).
struct SvdResult {
  Matrix u;                            // rows x k, orthonormal columns
  std::vector<double> singular_values; // non-increasing, non-negative
  Matrix v;                            // cols x k, orthonormal columns

  Matrix reconstruct() const;
};

struct JacobiOptions {
  double tolerance = 1e-12;
  int max_sweeps = 100;
};

/// One-sided (Hestenes) Jacobi SVD. Sign convention: the first nonzero entry of
/// every left singular vector is non-negative.
SvdResult svd(const Matrix& m, const JacobiOptions& opts = {});

/// Same decomposition, but starts the rotations from `v0` (cols x cols,
/// orthogonal). A good guess such as the previous iterate's right singular
/// vectors cuts the number of sweeps substantially.
SvdResult svd_warm(const Matrix& m, const Matrix& v0, const JacobiOptions& opts = {});

/// Singular values only (no vector accumulation), non-increasing.
std::vector<double> singular_values(const Matrix& m, const JacobiOptions& opts = {});

double nuclear_norm(const Matrix& m);

/// Smallest k with sigma_1 + ... + sigma_k >= (1 - delta) * sum(sigma).
/// Throws for an all-zero matrix or delta outside [0, 1).
int approximate_rank(const Matrix& m, double delta = 0.01);
int approximate_rank_from_singular_values(std::span<const double> sorted_sigma, double delta = 0.01);

double average_approximate_rank(std::span<const Matrix> ms, double delta = 0.01);

}  // namespace ualqe
