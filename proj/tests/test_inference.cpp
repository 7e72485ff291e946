#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "vircov/errors.hpp"
#include "vircov/inference.hpp"
#include "vircov/rng.hpp"

using namespace vircov;

namespace {

// Rejection set of the step-up rule: the k smallest, k = max{i : p_(i) <= i q / m}.
std::vector<bool> step_up_rejections(const std::vector<double>& p, double q) {
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = p.size();
  double threshold = -1.0;
  for (std::size_t i = 1; i <= m; ++i)
    if (sorted[i - 1] <= static_cast<double>(i) * q / static_cast<double>(m)) threshold = sorted[i - 1];
  std::vector<bool> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = p[i] <= threshold;
  return out;
}

ModelState state_with_cov(const DenseMatrix& cov, int years = 1) {
  const auto l = cholesky_factor(cov);
  const int nv = static_cast<int>(cov.rows());
  ModelState st = ModelState::zeros(years, nv);
  for (int i = 0; i < nv; ++i) {
    st.sigma_diag[i] = l(i, i);
    for (int j = 0; j < i; ++j) st.gamma.set(i, j, l(i, j) / l(i, i));
  }
  return st;
}

std::vector<std::string> names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("v" + std::to_string(i + 1));
  return out;
}

}  // namespace

TEST_CASE("posterior interval examples") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  const auto ci = posterior_interval(v, 0.95);
  CHECK(ci.low == doctest::Approx(3.475).epsilon(1e-12));
  CHECK(ci.high == doctest::Approx(97.525).epsilon(1e-12));

  const std::vector<double> c(7, 2.5);
  const auto cc = posterior_interval(c);
  CHECK(cc.low == 2.5);
  CHECK(cc.high == 2.5);

  const std::vector<double> sym{-3, -1, -0.5, 0, 0.5, 1, 3};
  const auto cs = posterior_interval(sym, 0.8);
  CHECK(cs.low == doctest::Approx(-cs.high));

  CHECK_THROWS_AS(posterior_interval(std::vector<double>{1.0}), InsufficientData);
  CHECK_THROWS_AS(posterior_interval(v, 1.0), ConfigError);
  CHECK_THROWS_AS(posterior_interval(v, 0.0), ConfigError);
}

TEST_CASE("sample quantile interpolates between order statistics") {
  const std::vector<double> v{4, 1, 3, 2};
  CHECK(sample_quantile(v, 0.0) == 1.0);
  CHECK(sample_quantile(v, 1.0) == 4.0);
  CHECK(sample_quantile(v, 0.5) == 2.5);
  CHECK(sample_quantile(v, 0.25) == doctest::Approx(1.75));
}

TEST_CASE("interval brackets the median") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(2 + rep % 50);
    for (auto& x : v) x = rng.normal() * 3.0;
    const double med = sample_quantile(v, 0.5);
    for (double level : {0.5, 0.8, 0.95}) {
      const auto ci = posterior_interval(v, level);
      CHECK(ci.low <= med);
      CHECK(ci.high >= med);
    }
  }
}

TEST_CASE("tail p-value examples") {
  std::vector<double> pos(1000, 1.0);
  CHECK(posterior_p_zero(pos) == doctest::Approx(1.0 / 1000));
  std::vector<double> half(1000, 1.0);
  std::fill(half.begin(), half.begin() + 500, -1.0);
  CHECK(posterior_p_zero(half) == 1.0);
  std::vector<double> mostly(1000, 0.3);
  std::fill(mostly.begin(), mostly.begin() + 50, -0.2);
  CHECK(posterior_p_zero(mostly) == doctest::Approx(0.1).epsilon(1e-12));
  std::vector<double> zeros(20, 0.0);
  CHECK(posterior_p_zero(zeros) == 1.0);
  std::vector<double> some_zero(20, 0.0);
  some_zero[0] = 1.0;
  some_zero[1] = -1.0;
  some_zero[2] = 1.0;
  CHECK(posterior_p_zero(some_zero) == doctest::Approx(0.1));
  CHECK_THROWS_AS(posterior_p_zero(std::vector<double>(9, 1.0)), InsufficientData);
}

TEST_CASE("tail p-value is scale invariant and symmetric under negation") {
  Rng rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(10 + rep);
    for (auto& x : v) x = rng.normal() + 0.5;
    const double p = posterior_p_zero(v);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    auto scaled = v;
    const double c = std::exp(rng.normal() * 2.0);
    for (auto& x : scaled) x *= c;
    CHECK(posterior_p_zero(scaled) == p);
    auto neg = v;
    for (auto& x : neg) x = -x;
    CHECK(posterior_p_zero(neg) == p);
  }
}

TEST_CASE("Benjamini-Hochberg examples") {
  const auto a = bh_adjust(std::vector<double>{0.01, 0.02, 0.03, 0.04});
  for (double x : a) CHECK(x == doctest::Approx(0.04));
  CHECK(bh_adjust(std::vector<double>{0.3}) == std::vector<double>{0.3});
  const auto b = bh_adjust(std::vector<double>{0.005, 0.9});
  CHECK(b[0] == doctest::Approx(0.01));
  CHECK(b[1] == doctest::Approx(0.9));
  const auto c = bh_adjust(std::vector<double>{0.9, 0.005});
  CHECK(c[0] == doctest::Approx(0.9));
  CHECK(c[1] == doctest::Approx(0.01));
  CHECK(bh_adjust(std::vector<double>{}).empty());
}

TEST_CASE("Benjamini-Hochberg matches the brute-force step-up definition") {
  Rng rng(99);
  for (int rep = 0; rep < 1000; ++rep) {
    const int m = 1 + static_cast<int>(rng.uniform() * 10);
    std::vector<double> p(m);
    for (auto& x : p) {
      x = rng.uniform() < 0.3 ? 0.01 * (1 + static_cast<int>(rng.uniform() * 5)) : rng.uniform();
      x = std::max(x, 1e-6);
    }
    const auto fast = bh_adjust(p);
    const auto slow = testing::bh_brute(p);
    REQUIRE(fast.size() == p.size());
    for (int i = 0; i < m; ++i) {
      CHECK(fast[i] == slow[i]);
      CHECK(fast[i] >= p[i]);
      CHECK(fast[i] <= 1.0);
    }
    const auto rej = step_up_rejections(p, 0.05);
    for (int i = 0; i < m; ++i) CHECK((fast[i] <= 0.05 * (1 + 1e-12)) == rej[i]);

    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    const auto adj_sorted = bh_adjust(sorted);
    CHECK(std::is_sorted(adj_sorted.begin(), adj_sorted.end()));
  }
}

TEST_CASE("identity covariance draws give no significant pairs") {
  std::vector<ModelState> draws(100, ModelState::zeros(1, 3));
  const auto r = covariance_report(draws, names(3));
  REQUIRE(r.pairs.size() == 3);
  for (const auto& p : r.pairs) {
    CHECK(p.posterior_mean == 0.0);
    CHECK(p.ci_low == 0.0);
    CHECK(p.ci_high == 0.0);
    CHECK_FALSE(p.significant);
  }
  CHECK(r.significant_pairs().empty());
}

TEST_CASE("covariance report flags a clearly nonzero pair") {
  Rng rng(5);
  std::vector<ModelState> draws;
  for (int k = 0; k < 400; ++k) {
    DenseMatrix cov = DenseMatrix::identity(4);
    const double c = -0.5 + 0.05 * rng.normal();
    cov(0, 1) = cov(1, 0) = c;
    const double d = 0.1 * rng.normal();
    cov(2, 3) = cov(3, 2) = d;
    draws.push_back(state_with_cov(cov));
  }
  const auto r = covariance_report(draws, names(4));
  CHECK(r.pairs.size() == 6);
  const auto& p01 = r.pair(1, 0);
  CHECK(p01.virus_a == 0);
  CHECK(p01.virus_b == 1);
  CHECK(p01.name_b == "v2");
  CHECK(p01.posterior_mean == doctest::Approx(-0.5).epsilon(0.02));
  CHECK(p01.ci_high < 0.0);
  CHECK(p01.significant);
  CHECK(r.significant_pairs() == std::vector<std::pair<int, int>>{{0, 1}});
  for (const auto& p : r.pairs) CHECK(p.significant == (p.p_adjusted < r.fdr_level));
  CHECK_THROWS_AS(covariance_report(draws, names(3)), SchemaError);
}

TEST_CASE("significance flags follow virus relabelling") {
  Rng rng(21);
  const std::array<int, 4> perm{2, 0, 3, 1};
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<ModelState> draws;
    std::vector<ModelState> permuted;
    const double shift = -0.3 + 0.06 * rep;
    for (int k = 0; k < 200; ++k) {
      DenseMatrix cov = DenseMatrix::identity(4);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < i; ++j) cov(i, j) = cov(j, i) = 0.05 * (i - j) + 0.05 * rng.normal();
      cov(0, 1) = cov(1, 0) = shift + 0.1 * rng.normal();
      cov(1, 3) = cov(3, 1) = 0.4 + 0.1 * rng.normal();
      draws.push_back(state_with_cov(cov));
      DenseMatrix pc(4, 4);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) pc(perm[i], perm[j]) = cov(i, j);
      permuted.push_back(state_with_cov(pc));
    }
    const auto r = covariance_report(draws, names(4));
    const auto rp = covariance_report(permuted, names(4));
    for (const auto& p : r.pairs) {
      const auto& q = rp.pair(perm[p.virus_a], perm[p.virus_b]);
      CHECK(q.significant == p.significant);
      CHECK(q.p_raw == p.p_raw);
      CHECK(q.posterior_mean == doctest::Approx(p.posterior_mean).epsilon(1e-9));
    }
  }
}

TEST_CASE("relative risk summary trivial cases") {
  ModelState st = ModelState::zeros(2, 2);
  st.alpha = {0.2, -0.1};
  st.phi(3, 1, 0) = 0.5;
  std::vector<ModelState> same(5, st);
  const auto cells = relative_risk_summary(same);
  REQUIRE(cells.size() == 48);
  for (const auto& c : cells) {
    const double expect = std::exp(st.alpha[c.virus] + st.phi(c.month - 1, c.year, c.virus));
    CHECK(c.mean == doctest::Approx(expect));
    CHECK(c.ci_low == doctest::Approx(expect));
    CHECK(c.ci_high == doctest::Approx(expect));
  }
  CHECK(cells.front().month == 1);
  CHECK(cells.front().year == 0);

  std::vector<ModelState> varying;
  std::vector<double> alphas;
  Rng rng(6);
  for (int k = 0; k < 50; ++k) {
    ModelState d = ModelState::zeros(1, 1);
    d.alpha[0] = rng.normal() * 0.3;
    alphas.push_back(std::exp(d.alpha[0]));
    varying.push_back(d);
  }
  const auto ci = posterior_interval(alphas);
  const double mean = std::accumulate(alphas.begin(), alphas.end(), 0.0) / alphas.size();
  for (const auto& c : relative_risk_summary(varying)) {
    CHECK(c.mean == doctest::Approx(mean));
    CHECK(c.ci_low == doctest::Approx(ci.low));
    CHECK(c.ci_high == doctest::Approx(ci.high));
  }
  const auto rr = posterior_mean_rr(varying);
  CHECK(rr(5, 0, 0) == doctest::Approx(mean));
}

TEST_CASE("significant_from tracks the last unbroken run") {
  auto cut = [](int years, bool sig) {
    RollingCut c;
    c.years = years;
    CovariancePair p;
    p.virus_a = 0;
    p.virus_b = 1;
    p.significant = sig;
    c.report.pairs.push_back(p);
    return c;
  };
  std::vector<RollingCut> cuts{cut(1, true), cut(2, false), cut(3, true), cut(4, true)};
  CHECK(significant_from(cuts, 0, 1) == 3);
  cuts.push_back(cut(5, false));
  CHECK_FALSE(significant_from(cuts, 1, 0).has_value());
}

TEST_CASE("rolling covariance refits each leading window") {
  CountPanel panel;
  panel.observed = Cube<int>(3, 2, 4);
  panel.expected = Cube<double>(3, 2, 4.0);
  panel.virus_names = {"a", "b"};
  ChainConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iterations = 300;
  cfg.burn_in = 100;
  cfg.thin = 10;
  const auto cuts = rolling_covariance(panel, ProximitySpec{}, HyperParams{}, cfg, 2);
  REQUIRE(cuts.size() == 2);
  CHECK(cuts[0].years == 2);
  CHECK(cuts[1].years == 3);
  CHECK(cuts[0].report.pairs.size() == 1);
  CHECK(cuts[1].dic.mean_deviance > 0.0);
  CHECK_THROWS_AS(rolling_covariance(panel, ProximitySpec{}, HyperParams{}, cfg, 4), ConfigError);
}
