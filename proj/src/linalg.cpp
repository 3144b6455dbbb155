#include "ualqe/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ualqe {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw std::invalid_argument(std::string(what) + ": matrix has non-finite entries");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// Column-major working copy of an m x n matrix (m >= n) together with the
// accumulated right rotations.
struct JacobiWork {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> a;  // column j at a[j*m]
  std::vector<double> v;  // column j at v[j*n], empty when not accumulated
};

double dot(const double* x, const double* y, std::size_t len) {
  double s = 0.0;
  for (std::size_t i = 0; i < len; ++i) s += x[i] * y[i];
  return s;
}

void rotate(double* __restrict x, double* __restrict y, std::size_t len, double c, double s) {
  for (std::size_t i = 0; i < len; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

// Orthogonalize the columns of w.a in place; returns squared column norms.
std::vector<double> run_jacobi(JacobiWork& w, const JacobiOptions& opts) {
  constexpr double kTiny = 1e-280;
  const std::size_t m = w.m;
  const std::size_t n = w.n;
  const bool with_v = !w.v.empty();
  std::vector<double> norms(n);

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) norms[j] = dot(&w.a[j * m], &w.a[j * m], m);
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norms[p];
        const double beta = norms[q];
        if (alpha < kTiny || beta < kTiny) continue;
        const double gamma = dot(&w.a[p * m], &w.a[q * m], m);
        if (std::abs(gamma) <= opts.tolerance * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(&w.a[p * m], &w.a[q * m], m, c, s);
        if (with_v) rotate(&w.v[p * n], &w.v[q * n], n, c, s);
        norms[p] = alpha - t * gamma;
        norms[q] = beta + t * gamma;
      }
    }
    if (!rotated) break;
  }
  for (std::size_t j = 0; j < n; ++j) norms[j] = dot(&w.a[j * m], &w.a[j * m], m);
  return norms;
}

JacobiWork make_work(const Matrix& m, bool transpose, bool with_v) {
  JacobiWork w;
  w.m = transpose ? m.cols() : m.rows();
  w.n = transpose ? m.rows() : m.cols();
  w.a.resize(w.m * w.n);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      // working matrix entry (i, j) -> a[j*m + i]
      if (transpose) {
        w.a[r * w.m + c] = m(r, c);
      } else {
        w.a[c * w.m + r] = m(r, c);
      }
    }
  }
  if (with_v) {
    w.v.assign(w.n * w.n, 0.0);
    for (std::size_t j = 0; j < w.n; ++j) w.v[j * w.n + j] = 1.0;
  }
  return w;
}

// Fill unit vectors for columns whose singular value vanished, orthogonal to
// the columns already set in `basis` (len x k, column-major).
void complete_basis(std::vector<double>& basis, std::size_t len, std::vector<bool>& set) {
  const std::size_t k = set.size();
  for (std::size_t j = 0; j < k; ++j) {
    if (set[j]) continue;
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < len; ++e) {
      std::vector<double> cand(len, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < k; ++i) {
          if (!set[i]) continue;
          const double proj = dot(&basis[i * len], cand.data(), len);
          for (std::size_t t = 0; t < len; ++t) cand[t] -= proj * basis[i * len + t];
        }
      }
      const double nrm = std::sqrt(dot(cand.data(), cand.data(), len));
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = std::move(cand);
      }
      if (best_norm > 0.5) break;
    }
    for (std::size_t t = 0; t < len; ++t) basis[j * len + t] = best[t] / best_norm;
    set[j] = true;
  }
}

SvdResult finish(const Matrix& m, JacobiWork& w, bool transpose, const JacobiOptions& opts) {
  const std::vector<double> norms = run_jacobi(w, opts);
  const std::size_t len = w.m;
  const std::size_t k = w.n;

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  std::vector<double> sigma(k);
  std::vector<double> left(len * k, 0.0);   // working-left vectors, column-major
  std::vector<double> right(k * k, 0.0);    // working-right vectors, column-major
  std::vector<bool> set(k, false);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    sigma[j] = std::sqrt(std::max(norms[src], 0.0));
    for (std::size_t t = 0; t < k; ++t) right[j * k + t] = w.v[src * k + t];
    if (sigma[j] > 1e-300) {
      for (std::size_t t = 0; t < len; ++t) left[j * len + t] = w.a[src * len + t] / sigma[j];
      set[j] = true;
    } else {
      sigma[j] = 0.0;
    }
  }
  complete_basis(left, len, set);

  // Map back: for the transposed problem m^T = L S R^T, so m = R S L^T.
  const std::vector<double>& u_cols = transpose ? right : left;
  const std::vector<double>& v_cols = transpose ? left : right;
  const std::size_t u_len = m.rows();
  const std::size_t v_len = m.cols();

  SvdResult out;
  out.singular_values = std::move(sigma);
  out.u = Matrix(u_len, k);
  out.v = Matrix(v_len, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double* uc = &u_cols[j * u_len];
    const double* vc = &v_cols[j * v_len];
    std::size_t lead = 0;
    while (lead < u_len && std::abs(uc[lead]) <= 1e-12) ++lead;
    const double sign = (lead < u_len && uc[lead] < 0.0) ? -1.0 : 1.0;
    for (std::size_t t = 0; t < u_len; ++t) out.u(t, j) = sign * uc[t];
    for (std::size_t t = 0; t < v_len; ++t) out.v(t, j) = sign * vc[t];
  }
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw std::invalid_argument("Matrix: non-finite fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
  if (data_.size() != rows * cols) throw std::invalid_argument("Matrix: entry count does not match shape");
  if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  if (!m.all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

bool Matrix::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return x == 0.0; });
}

double Matrix::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator+");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator-");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("operator*: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& x : out.data()) x *= s;
  return out;
}

Matrix SvdResult::reconstruct() const {
  Matrix out(u.rows(), v.rows());
  for (std::size_t k = 0; k < singular_values.size(); ++k) {
    const double s = singular_values[k];
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      const double us = u(i, k) * s;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < v.rows(); ++j) orow[j] += us * v(j, k);
    }
  }
  return out;
}

SvdResult svd(const Matrix& m, const JacobiOptions& opts) {
  require_finite(m, "svd");
  if (m.empty()) throw std::invalid_argument("svd: empty matrix");
  const bool transpose = m.rows() < m.cols();
  JacobiWork w = make_work(m, transpose, true);
  return finish(m, w, transpose, opts);
}

SvdResult svd_warm(const Matrix& m, const Matrix& v0, const JacobiOptions& opts) {
  require_finite(m, "svd_warm");
  if (m.rows() < m.cols() || v0.rows() != m.cols() || v0.cols() != m.cols()) return svd(m, opts);
  const Matrix start = m * v0;
  JacobiWork w = make_work(start, false, true);
  const std::size_t n = w.n;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t t = 0; t < n; ++t) w.v[j * n + t] = v0(t, j);
  return finish(m, w, false, opts);
}

std::vector<double> singular_values(const Matrix& m, const JacobiOptions& opts) {
  require_finite(m, "singular_values");
  if (m.empty()) throw std::invalid_argument("singular_values: empty matrix");
  JacobiWork w = make_work(m, m.rows() < m.cols(), false);
  std::vector<double> norms = run_jacobi(w, opts);
  for (double& x : norms) x = std::sqrt(std::max(x, 0.0));
  std::sort(norms.begin(), norms.end(), std::greater<>());
  return norms;
}

double nuclear_norm(const Matrix& m) {
  const auto sigma = singular_values(m);
  return std::accumulate(sigma.begin(), sigma.end(), 0.0);
}

int approximate_rank_from_singular_values(std::span<const double> sorted_sigma, double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("approximate_rank: delta must lie in [0, 1)");
  const double total = std::accumulate(sorted_sigma.begin(), sorted_sigma.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("approximate_rank: all singular values are zero");
  const double threshold = total - delta * total;
  double running = 0.0;
  for (std::size_t k = 0; k < sorted_sigma.size(); ++k) {
    running += sorted_sigma[k];
    if (running >= threshold) return static_cast<int>(k + 1);
  }
  // Rounding in the running sum can leave it a hair below the total.
  return static_cast<int>(sorted_sigma.size());
}

int approximate_rank(const Matrix& m, double delta) {
  const auto sigma = singular_values(m);
  return approximate_rank_from_singular_values(sigma, delta);
}

double average_approximate_rank(std::span<const Matrix> ms, double delta) {
  if (ms.empty()) throw std::invalid_argument("average_approximate_rank: empty sequence");
  double sum = 0.0;
  for (const Matrix& m : ms) sum += approximate_rank(m, delta);
  return sum / static_cast<double>(ms.size());
}

}  // namespace ualqe
