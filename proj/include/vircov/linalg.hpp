#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "vircov/rng.hpp"

namespace vircov {

inline constexpr double kSymmetryTolerance = 1e-10;
inline constexpr double kPivotFloor = 1e-12;

/// Dense row-major matrix for the small (at most a few hundred rows) systems the
/// model works with.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * cols_, cols_}; }
  std::span<const double> entries() const { return entries_; }

  DenseMatrix transpose() const;
  std::vector<double> multiply(std::span<const double> x) const;
  double max_abs() const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double c);

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double c, DenseMatrix a);
DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b);

double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b);
bool is_symmetric(const DenseMatrix& a, double tol = kSymmetryTolerance);

/// Square lower-triangular matrix; writes above the diagonal are rejected.
class LowerTriangularMatrix {
 public:
  LowerTriangularMatrix() = default;
  explicit LowerTriangularMatrix(std::size_t dim);

  static LowerTriangularMatrix identity(std::size_t dim);

  std::size_t dim() const { return dim_; }

  double operator()(std::size_t i, std::size_t j) const {
    return j > i ? 0.0 : entries_[i * dim_ + j];
  }
  void set(std::size_t i, std::size_t j, double value);

  DenseMatrix to_dense() const;
  /// L * L^T
  DenseMatrix gram() const;
  double log_det() const;
  bool has_unit_diagonal(double tol = 0.0) const;

  /// Solves L x = b.
  std::vector<double> solve(std::span<const double> b) const;
  /// Solves L^T x = b.
  std::vector<double> solve_transposed(std::span<const double> b) const;
  /// L^{-1}, itself lower triangular.
  LowerTriangularMatrix inverse() const;

  bool operator==(const LowerTriangularMatrix&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> entries_;
};

/// L with L L^T = a. Throws NotSymmetric / NotPositiveDefinite.
LowerTriangularMatrix cholesky_factor(const DenseMatrix& a);

DenseMatrix kronecker(const DenseMatrix& a, const DenseMatrix& b);

bool is_positive_definite(const DenseMatrix& a);

/// log det(a) for symmetric positive definite a, via its Cholesky factor.
double log_det_spd(const DenseMatrix& a);

/// a^{-1} for symmetric positive definite a, by column-wise factor solves.
DenseMatrix inverse_spd(const DenseMatrix& a);

/// Quadratic form x^T a x.
double quadratic_form(const DenseMatrix& a, std::span<const double> x);

/// One draw from MVN(mean, precision^{-1}): mean + L^{-T} z with L L^T = precision.
std::vector<double> sample_mvn_precision(std::span<const double> mean,
                                         const DenseMatrix& precision, Rng& rng);

/// Same draw using an already factorized precision.
std::vector<double> sample_mvn_precision(std::span<const double> mean,
                                         const LowerTriangularMatrix& precision_factor, Rng& rng);

}  // namespace vircov
