#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "vircov/errors.hpp"
#include "vircov/linalg.hpp"
#include "vircov/model.hpp"

using namespace vircov;

namespace {

Eigen::MatrixXd to_eigen(const DenseMatrix& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j);
  return m;
}

double min_eigenvalue(const DenseMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
  return es.eigenvalues().minCoeff();
}

DenseMatrix random_spd(std::size_t n, Rng& rng) {
  DenseMatrix b(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) = rng.normal();
  DenseMatrix a = b * b.transpose();
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 0.1;
  return a;
}

DenseMatrix random_symmetric(std::size_t n, Rng& rng) {
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
  return a;
}

}  // namespace

TEST_CASE("dense matrix shape and arithmetic") {
  DenseMatrix a{{1, 2, 3}, {4, 5, 6}};
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.entries().size() == 6);
  CHECK(a(1, 2) == 6);
  const auto at = a.transpose();
  CHECK(at(2, 1) == 6);
  const auto p = a * at;
  CHECK(p(0, 0) == 14);
  CHECK(p(0, 1) == 32);
  CHECK(p(1, 1) == 77);
  const std::vector<double> x{1, 0, -1};
  const auto y = a.multiply(x);
  CHECK(y[0] == -2);
  CHECK(y[1] == -2);
  CHECK_THROWS(DenseMatrix(2, 2, std::vector<double>{1, 2, 3}));
}

TEST_CASE("cholesky of the identity is the identity") {
  const auto l = cholesky_factor(DenseMatrix::identity(3));
  CHECK(max_abs_difference(l.to_dense(), DenseMatrix::identity(3)) == 0.0);
}

TEST_CASE("cholesky reconstructs a 2x2 matrix") {
  const DenseMatrix a{{4, 2}, {2, 3}};
  const auto l = cholesky_factor(a);
  CHECK(max_abs_difference(l.gram(), a) < 1e-12);
  CHECK(l(0, 0) == doctest::Approx(2.0));
  CHECK(l(1, 0) == doctest::Approx(1.0));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(l(0, 1) == 0.0);
}

TEST_CASE("cholesky rejects indefinite and asymmetric input") {
  CHECK_THROWS_AS(cholesky_factor(DenseMatrix{{1, 2}, {2, 1}}), NotPositiveDefinite);
  CHECK_THROWS_AS(cholesky_factor(DenseMatrix{{1, 0.5}, {0.4, 1}}), NotSymmetric);
  CHECK_THROWS_AS(cholesky_factor(DenseMatrix{{0, 0}, {0, 0}}), NotPositiveDefinite);
}

TEST_CASE("cholesky reconstruction on random SPD matrices") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rep % 12;
    const auto a = random_spd(n, rng);
    const auto l = cholesky_factor(a);
    CHECK(max_abs_difference(l.gram(), a) < 1e-10 * std::max(1.0, a.max_abs()));
    for (std::size_t i = 0; i < n; ++i) CHECK(l(i, i) > 0.0);
    CHECK(log_det_spd(a) == doctest::Approx(std::log(to_eigen(a).determinant())).epsilon(1e-9));
  }
}

TEST_CASE("lower triangular solves and inverse") {
  Rng rng(5);
  const auto a = random_spd(6, rng);
  const auto l = cholesky_factor(a);
  std::vector<double> b{1, -2, 0.5, 3, 0, 1};
  const auto x = l.solve(b);
  const auto lx = l.to_dense().multiply(x);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(lx[i] == doctest::Approx(b[i]).epsilon(1e-12));
  const auto y = l.solve_transposed(b);
  const auto lty = l.to_dense().transpose().multiply(y);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(lty[i] == doctest::Approx(b[i]).epsilon(1e-12));
  const auto prod = l.to_dense() * l.inverse().to_dense();
  CHECK(max_abs_difference(prod, DenseMatrix::identity(6)) < 1e-12);
  const auto inv = inverse_spd(a);
  CHECK(max_abs_difference(a * inv, DenseMatrix::identity(6)) < 1e-10);
  double quad = 0.0;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) quad += b[r] * a(r, c) * b[c];
  CHECK(quadratic_form(a, b) == doctest::Approx(quad).epsilon(1e-12));
}

TEST_CASE("lower triangular matrix rejects writes above the diagonal") {
  LowerTriangularMatrix l(3);
  CHECK_THROWS(l.set(0, 2, 1.0));
  l.set(2, 0, 1.5);
  CHECK(l(2, 0) == 1.5);
  CHECK(l(0, 2) == 0.0);
  CHECK_FALSE(l.has_unit_diagonal());
  CHECK(LowerTriangularMatrix::identity(3).has_unit_diagonal());
}

TEST_CASE("kronecker of the identity is block diagonal") {
  const DenseMatrix b{{1, 2}, {3, 4}};
  const auto k = kronecker(DenseMatrix::identity(2), b);
  REQUIRE(k.rows() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = (i / 2 == j / 2) ? b(i % 2, j % 2) : 0.0;
      CHECK(k(i, j) == expect);
    }
}

TEST_CASE("kronecker matches its definition entrywise") {
  const DenseMatrix a{{1, 2}, {3, 4}};
  const DenseMatrix b{{0, 1}, {1, 0}};
  const auto k = kronecker(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t q = 0; q < 2; ++q) CHECK(k(i * 2 + p, j * 2 + q) == a(i, j) * b(p, q));
  CHECK(k(0, 1) == 1);
  CHECK(k(3, 2) == 4);
}

TEST_CASE("kronecker dimensions and bilinearity") {
  Rng rng(3);
  DenseMatrix a(12, 12);
  DenseMatrix b(5, 5);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) a(i, j) = rng.normal();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) b(i, j) = rng.normal();
  const auto k = kronecker(a, b);
  CHECK(k.rows() == 60);
  CHECK(k.cols() == 60);
  const auto scaled = kronecker(2.5 * a, b);
  CHECK(max_abs_difference(scaled, 2.5 * k) < 1e-12);
  const auto rect = kronecker(DenseMatrix(2, 3), DenseMatrix(4, 5));
  CHECK(rect.rows() == 8);
  CHECK(rect.cols() == 15);
}

TEST_CASE("positive definiteness checks") {
  CHECK(is_positive_definite(DenseMatrix::identity(4)));
  CHECK_FALSE(is_positive_definite(DenseMatrix{{1, 2}, {2, 1}}));
  CHECK_THROWS_AS(is_positive_definite(DenseMatrix{{1, 0.5}, {0.4, 1}}), NotSymmetric);
  const auto w = build_w_neighborhood(3, true);
  DenseMatrix omega = -0.5 * w;
  for (std::size_t i = 0; i < 12; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 12; ++j) row += w(i, j);
    omega(i, i) += row;
  }
  CHECK(min_eigenvalue(omega) > 0.0);
  CHECK(is_positive_definite(omega));
}

TEST_CASE("is_positive_definite agrees with an eigenvalue oracle") {
  Rng rng(17);
  int agreements = 0;
  int positives = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 1 + rep % 6;
    auto a = random_symmetric(n, rng);
    for (std::size_t i = 0; i < n; ++i) a(i, i) += 2.0;
    const double lo = min_eigenvalue(a);
    if (std::abs(lo) < 1e-9) continue;
    const bool pd = is_positive_definite(a);
    if (pd == (lo > 0.0)) ++agreements;
    if (pd) ++positives;
    CHECK(pd == (lo > 0.0));
  }
  CHECK(agreements > 400);
  CHECK(positives > 50);
  CHECK(positives < agreements);
}

TEST_CASE("MVN sampling moments under identity precision") {
  Rng rng(2024);
  const int n = 50'000;
  const std::vector<double> mean{0.0, 0.0};
  double m0 = 0, m1 = 0, s00 = 0, s01 = 0, s11 = 0;
  for (int i = 0; i < n; ++i) {
    const auto x = sample_mvn_precision(mean, DenseMatrix::identity(2), rng);
    m0 += x[0];
    m1 += x[1];
    s00 += x[0] * x[0];
    s01 += x[0] * x[1];
    s11 += x[1] * x[1];
  }
  m0 /= n;
  m1 /= n;
  CHECK(std::abs(m0) < 0.02);
  CHECK(std::abs(m1) < 0.02);
  CHECK(std::abs(s00 / n - m0 * m0 - 1.0) < 0.03);
  CHECK(std::abs(s11 / n - m1 * m1 - 1.0) < 0.03);
  CHECK(std::abs(s01 / n - m0 * m1) < 0.03);
}

TEST_CASE("MVN sampling variance under a diagonal precision") {
  Rng rng(99);
  const int n = 50'000;
  const std::vector<double> mean{1.0, -2.0};
  const DenseMatrix prec{{2, 0}, {0, 2}};
  double s0 = 0, s1 = 0, q0 = 0, q1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto x = sample_mvn_precision(mean, prec, rng);
    s0 += x[0];
    s1 += x[1];
    q0 += x[0] * x[0];
    q1 += x[1] * x[1];
  }
  CHECK(std::abs(s0 / n - 1.0) < 0.02);
  CHECK(std::abs(s1 / n + 2.0) < 0.02);
  CHECK(std::abs(q0 / n - (s0 / n) * (s0 / n) - 0.5) < 0.02);
  CHECK(std::abs(q1 / n - (s1 / n) * (s1 / n) - 0.5) < 0.02);
}

TEST_CASE("MVN sample covariance converges to the inverse precision") {
  Rng rng(7);
  const DenseMatrix prec{{2.0, -0.8, 0.1}, {-0.8, 1.5, 0.3}, {0.1, 0.3, 1.0}};
  const auto cov = inverse_spd(prec);
  const int n = 50'000;
  const std::vector<double> mean(3, 0.0);
  const auto factor = cholesky_factor(prec);
  DenseMatrix acc(3, 3);
  std::vector<double> sum(3, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto x = sample_mvn_precision(mean, factor, rng);
    for (int i = 0; i < 3; ++i) {
      sum[i] += x[i];
      for (int j = 0; j < 3; ++j) acc(i, j) += x[i] * x[j];
    }
  }
  double max_diag = 0.0;
  for (int i = 0; i < 3; ++i) max_diag = std::max(max_diag, cov(i, i));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double c = acc(i, j) / n - (sum[i] / n) * (sum[j] / n);
      CHECK(std::abs(c - cov(i, j)) < 5.0 * std::sqrt(1.0 / n) * max_diag);
    }
}

TEST_CASE("MVN sampling is reproducible for a fixed seed") {
  const DenseMatrix prec{{2.0, 0.5}, {0.5, 1.0}};
  const std::vector<double> mean{0.3, -0.1};
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 20; ++i) CHECK(sample_mvn_precision(mean, prec, a) == sample_mvn_precision(mean, prec, b));
  CHECK_THROWS_AS(sample_mvn_precision(mean, DenseMatrix{{1, 2}, {2, 1}}, a), NotPositiveDefinite);
}
