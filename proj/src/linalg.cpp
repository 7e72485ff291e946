#include "vircov/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vircov/errors.hpp"

namespace vircov {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (entries_.size() != rows * cols) {
    throw std::invalid_argument("DenseMatrix: entries length must equal rows * cols");
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  entries_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("DenseMatrix: ragged initializer");
    entries_.insert(entries_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> d) {
  DenseMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

std::vector<double> DenseMatrix::multiply(std::span<const double> x) const {
  if (x.size() != cols_) throw std::invalid_argument("DenseMatrix::multiply: size mismatch");
  std::vector<double> y(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double* r = entries_.data() + i * cols_;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double e : entries_) m = std::max(m, std::abs(e));
  return m;
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) throw std::invalid_argument("DenseMatrix +=: shape");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] += other.entries_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) throw std::invalid_argument("DenseMatrix -=: shape");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] -= other.entries_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double c) {
  for (double& e : entries_) e *= c;
  return *this;
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("DenseMatrix *: inner dimension mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

DenseMatrix operator*(double c, DenseMatrix a) { return a *= c; }
DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }

double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_difference: shape mismatch");
  }
  double m = 0.0;
  for (std::size_t k = 0; k < a.entries().size(); ++k) {
    m = std::max(m, std::abs(a.entries()[k] - b.entries()[k]));
  }
  return m;
}

bool is_symmetric(const DenseMatrix& a, double tol) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

LowerTriangularMatrix::LowerTriangularMatrix(std::size_t dim) : dim_(dim), entries_(dim * dim, 0.0) {}

LowerTriangularMatrix LowerTriangularMatrix::identity(std::size_t dim) {
  LowerTriangularMatrix l(dim);
  for (std::size_t i = 0; i < dim; ++i) l.set(i, i, 1.0);
  return l;
}

void LowerTriangularMatrix::set(std::size_t i, std::size_t j, double value) {
  if (j > i) throw std::invalid_argument("LowerTriangularMatrix: entry above the diagonal");
  entries_[i * dim_ + j] = value;
}

DenseMatrix LowerTriangularMatrix::to_dense() const {
  return DenseMatrix(dim_, dim_, entries_);
}

DenseMatrix LowerTriangularMatrix::gram() const {
  DenseMatrix g(dim_, dim_);
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= j; ++k) acc += entries_[i * dim_ + k] * entries_[j * dim_ + k];
      g(i, j) = acc;
      g(j, i) = acc;
    }
  return g;
}

double LowerTriangularMatrix::log_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) s += std::log(entries_[i * dim_ + i]);
  return s;
}

bool LowerTriangularMatrix::has_unit_diagonal(double tol) const {
  for (std::size_t i = 0; i < dim_; ++i)
    if (std::abs(entries_[i * dim_ + i] - 1.0) > tol) return false;
  return true;
}

std::vector<double> LowerTriangularMatrix::solve(std::span<const double> b) const {
  if (b.size() != dim_) throw std::invalid_argument("LowerTriangularMatrix::solve: size mismatch");
  std::vector<double> x(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= entries_[i * dim_ + k] * x[k];
    x[i] = acc / entries_[i * dim_ + i];
  }
  return x;
}

std::vector<double> LowerTriangularMatrix::solve_transposed(std::span<const double> b) const {
  if (b.size() != dim_) throw std::invalid_argument("LowerTriangularMatrix::solve_transposed: size mismatch");
  std::vector<double> x(dim_);
  for (std::size_t ii = dim_; ii-- > 0;) {
    double acc = b[ii];
    for (std::size_t k = ii + 1; k < dim_; ++k) acc -= entries_[k * dim_ + ii] * x[k];
    x[ii] = acc / entries_[ii * dim_ + ii];
  }
  return x;
}

LowerTriangularMatrix LowerTriangularMatrix::inverse() const {
  LowerTriangularMatrix inv(dim_);
  std::vector<double> e(dim_, 0.0);
  for (std::size_t j = 0; j < dim_; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto col = solve(e);
    for (std::size_t i = j; i < dim_; ++i) inv.set(i, j, col[i]);
  }
  return inv;
}

LowerTriangularMatrix cholesky_factor(const DenseMatrix& a) {
  if (!a.is_square()) throw NotSymmetric("cholesky_factor: matrix is not square");
  if (!is_symmetric(a)) throw NotSymmetric("cholesky_factor: matrix is not symmetric");
  const std::size_t n = a.rows();
  LowerTriangularMatrix l(n);
  std::vector<double> work(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = a(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= work[j * n + k] * work[j * n + k];
    if (!(pivot > kPivotFloor)) {
      throw NotPositiveDefinite("cholesky_factor: pivot " + std::to_string(pivot) + " at index " +
                                std::to_string(j));
    }
    const double d = std::sqrt(pivot);
    work[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double acc = a(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= work[i * n + k] * work[j * n + k];
      work[i * n + j] = acc / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) l.set(i, j, work[i * n + j]);
  return l;
}

DenseMatrix kronecker(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return k;
}

bool is_positive_definite(const DenseMatrix& a) {
  if (!a.is_square() || !is_symmetric(a)) throw NotSymmetric("is_positive_definite: matrix is not symmetric");
  try {
    (void)cholesky_factor(a);
    return true;
  } catch (const NotPositiveDefinite&) {
    return false;
  }
}

double log_det_spd(const DenseMatrix& a) { return 2.0 * cholesky_factor(a).log_det(); }

DenseMatrix inverse_spd(const DenseMatrix& a) {
  const auto l = cholesky_factor(a);
  const std::size_t n = a.rows();
  DenseMatrix inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto col = l.solve_transposed(l.solve(e));
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  // Symmetrize away rounding so downstream factorizations accept it.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double m = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = m;
      inv(j, i) = m;
    }
  return inv;
}

double quadratic_form(const DenseMatrix& a, std::span<const double> x) {
  const auto ax = a.multiply(x);
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) q += x[i] * ax[i];
  return q;
}

std::vector<double> sample_mvn_precision(std::span<const double> mean,
                                         const LowerTriangularMatrix& precision_factor, Rng& rng) {
  if (mean.size() != precision_factor.dim()) {
    throw std::invalid_argument("sample_mvn_precision: mean and precision sizes differ");
  }
  std::vector<double> z(mean.size());
  for (double& zi : z) zi = rng.normal();
  auto x = precision_factor.solve_transposed(z);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += mean[i];
  return x;
}

std::vector<double> sample_mvn_precision(std::span<const double> mean, const DenseMatrix& precision,
                                         Rng& rng) {
  return sample_mvn_precision(mean, cholesky_factor(precision), rng);
}

}  // namespace vircov
