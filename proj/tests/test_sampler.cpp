#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "vircov/errors.hpp"
#include "vircov/inference.hpp"
#include "vircov/sampler.hpp"
#include "vircov/simgen.hpp"

using namespace vircov;

namespace {

CountPanel constant_panel(int years, int viruses, int y, double e) {
  CountPanel p;
  p.observed = Cube<int>(years, viruses, y);
  p.expected = Cube<double>(years, viruses, e);
  for (int v = 0; v < viruses; ++v) p.virus_names.push_back("v" + std::to_string(v + 1));
  return p;
}

ChainConfig small_config(long iterations, long burn_in, long thin, int chains = 1) {
  ChainConfig c;
  c.n_chains = chains;
  c.n_iterations = iterations;
  c.burn_in = burn_in;
  c.thin = thin;
  return c;
}

BlockMask alpha_only() {
  BlockMask m;
  m.phi = m.level_shift = m.s = m.lambda = m.rho = m.sigma = m.gamma = false;
  return m;
}

// Omega = 6 I - lambda W for the circular order-3 neighbourhood, built from the definition.
Eigen::MatrixXd omega_by_hand(double lambda) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(12, 12);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      const int d = std::min(std::abs(i - j), 12 - std::abs(i - j));
      if (d >= 1 && d <= 3) w(i, j) = 1.0;
    }
  return 6.0 * Eigen::MatrixXd::Identity(12, 12) - lambda * w;
}

// Quantiles of a density tabulated on an even grid.
std::vector<double> grid_quantiles(const std::vector<double>& x, const std::vector<double>& logd,
                                   const std::vector<double>& probs) {
  const double mx = *std::max_element(logd.begin(), logd.end());
  std::vector<double> cdf(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) cdf[i] = acc += std::exp(logd[i] - mx);
  std::vector<double> out;
  for (double p : probs) out.push_back(x[std::lower_bound(cdf.begin(), cdf.end(), p * acc) - cdf.begin()]);
  return out;
}

}  // namespace

TEST_CASE("chain configuration validation") {
  ChainConfig c = ChainConfig::desk();
  CHECK(c.n_chains == 5);
  CHECK(c.n_iterations == 50'000);
  CHECK(c.burn_in == 30'000);
  CHECK(c.thin == 20);
  CHECK(c.draws_per_chain() == 1000);
  const auto p = ChainConfig::paper();
  CHECK(p.n_iterations == 500'000);
  CHECK(p.burn_in == 300'000);
  CHECK(p.thin == 100);
  CHECK(p.draws_per_chain() == 2000);
  CHECK_NOTHROW(c.validate());
  c.burn_in = c.n_iterations;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ChainConfig::desk();
  c.thin = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ChainConfig::desk();
  c.chain_seeds = {1, 2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.chain_seeds = {10, 20, 30, 40, 50};
  CHECK(c.seed_for_chain(3) == 40);
  c.chain_seeds.clear();
  c.seed = 100;
  CHECK(c.seed_for_chain(3) == 103);
}

TEST_CASE("parameter naming and flattening") {
  const auto names = parameter_names(2, 2);
  CHECK(names.size() == 2 + 48 + 2 + 2 + 2 + 1);
  CHECK(names[0] == "alpha[1]");
  CHECK(names[2] == "phi[1,1,1]");
  CHECK(names[3] == "phi[1,1,2]");
  CHECK(names[4] == "phi[1,2,1]");
  CHECK(names[6] == "phi[2,1,1]");
  CHECK(names[50] == "s[1]");
  CHECK(names[52] == "lambda");
  CHECK(names[53] == "rho");
  CHECK(names[54] == "sigma[1]");
  CHECK(names.back() == "gamma[2,1]");

  Rng rng(4);
  ModelState st = ModelState::zeros(2, 3);
  for (auto& a : st.alpha) a = rng.normal();
  for (auto& x : st.phi.values()) x = rng.normal();
  st.s = {0.1, 0.2, 0.3};
  st.lambda = 0.7;
  st.rho = 0.2;
  st.sigma_diag = {1.5, 0.5, 2.0};
  st.gamma.set(1, 0, 0.3);
  st.gamma.set(2, 0, -0.2);
  st.gamma.set(2, 1, 0.9);
  const auto flat = flatten(st);
  CHECK(flat.size() == parameter_names(2, 3).size());
  CHECK(unflatten(flat, 2, 3) == st);
  CHECK(flat[3 + 1 * 6 + 0 * 3 + 2] == st.phi(1, 0, 2));
  CHECK_THROWS_AS(unflatten(std::vector<double>(5), 2, 3), SchemaError);
}

TEST_CASE("incremental updates agree with the full log posterior") {
  const auto sim = simulate(scenario_three_virus(), 5);
  for (int kind = 0; kind < 3; ++kind) {
    ProximitySpec spec;
    if (kind > 0) spec.kind = ProximityKind::autoregressive;
    if (kind == 2) spec.fixed_rho = 0.4;
    auto cfg = small_config(600, 300, 10);
    cfg.audit = true;
    CHECK_NOTHROW(run_chain(sim.panel, spec, HyperParams{}, cfg, 0));
  }
  auto five = scenario_five_virus();
  five.n_years = 3;
  const auto sim5 = simulate(five, 1);
  auto cfg = small_config(300, 100, 10);
  cfg.audit = true;
  CHECK_NOTHROW(run_chain(sim5.panel, ProximitySpec{}, HyperParams{}, cfg, 0));
}

TEST_CASE("thinning keeps every thin-th post-burn-in iteration") {
  const auto panel = constant_panel(1, 1, 5, 5.0);
  const auto r = run_chain(panel, ProximitySpec{}, HyperParams{}, small_config(100, 40, 15), 0);
  CHECK(r.iterations == std::vector<long>{55, 70, 85, 100});
  CHECK(r.draws.size() == 4);
  const auto r1 = run_chain(panel, ProximitySpec{}, HyperParams{}, small_config(10, 0, 1), 0);
  CHECK(r1.draws.size() == 10);
}

TEST_CASE("disabled blocks keep their initial values") {
  const auto panel = constant_panel(2, 2, 4, 4.0);
  auto cfg = small_config(200, 100, 10);
  cfg.updates = alpha_only();
  const auto r = run_chain(panel, ProximitySpec{}, HyperParams{}, cfg, 0);
  const auto init = ModelState::initial(panel);
  for (const auto& d : r.draws) {
    CHECK(d.phi == init.phi);
    CHECK(d.lambda == init.lambda);
    CHECK(d.gamma == init.gamma);
    CHECK(d.sigma_diag == init.sigma_diag);
  }
  CHECK(r.blocks.size() == 2);
}

TEST_CASE("alpha posterior quantiles match grid quadrature (V = 1, T = 1)") {
  CountPanel panel = constant_panel(1, 1, 0, 1.0);
  const std::vector<int> y{3, 5, 2, 8, 6, 4, 1, 0, 2, 5, 7, 3};
  for (int m = 0; m < 12; ++m) {
    panel.observed(m, 0, 0) = y[m];
    panel.expected(m, 0, 0) = 3.0 + 0.25 * m;
  }
  auto cfg = small_config(60'000, 10'000, 5, 2);
  cfg.updates = alpha_only();
  const auto samples = run_chains(panel, ProximitySpec{}, HyperParams{}, cfg);
  std::vector<double> alpha;
  for (const auto& d : samples.draws) alpha.push_back(d.alpha[0]);
  double y_tot = 0.0;
  double m_tot = 0.0;
  for (int m = 0; m < 12; ++m) {
    y_tot += panel.observed(m, 0, 0);
    m_tot += panel.expected(m, 0, 0);
  }
  const std::vector<double> probs{0.1, 0.5, 0.9};
  const auto oracle = testing::alpha_grid_quantiles(y_tot, m_tot, 10.0, probs);
  for (std::size_t k = 0; k < probs.size(); ++k) CHECK(std::abs(sample_quantile(alpha, probs[k]) - oracle[k]) < 0.05);
}

TEST_CASE("Y = E gives an alpha posterior centred near zero") {
  const auto panel = constant_panel(1, 1, 10, 10.0);
  auto cfg = small_config(40'000, 5'000, 5);
  cfg.updates = alpha_only();
  const auto r = run_chain(panel, ProximitySpec{}, HyperParams{}, cfg, 0);
  std::vector<double> a;
  for (const auto& d : r.draws) a.push_back(d.alpha[0]);
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  // Posterior mean by quadrature over the same 1-d target.
  const int n = 100'001;
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = -1.0 + 2.0 * i / (n - 1);
    const double w = std::exp(120.0 * x - 120.0 * std::exp(x) - 0.5 * x * x / 100.0 + 120.0);
    num += x * w;
    den += w;
  }
  const double target = num / den;
  // Thinned draws of a well-mixing scalar walk; generous 3 standard errors at an
  // effective sample size of a quarter of the draws.
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  var /= a.size() - 1;
  const double se = std::sqrt(var / (a.size() / 4.0));
  CHECK(std::abs(mean - target) < 3.0 * se);
  CHECK(std::abs(target) < 0.01);
}

TEST_CASE("proposal adaptation reaches the target acceptance rates") {
  const auto sim = simulate(scenario_three_virus(), 8);
  const auto r = run_chain(sim.panel, ProximitySpec{}, HyperParams{}, small_config(20'000, 10'000, 20), 0);
  for (const auto& b : r.blocks) {
    if (b.scalar) {
      CHECK(b.rate() > 0.3);
      CHECK(b.rate() < 0.6);
    } else {
      CHECK(b.rate() > 0.15);
      CHECK(b.rate() < 0.35);
    }
  }
}

TEST_CASE("chains are deterministic and independent of the thread count") {
  const auto sim = simulate(scenario_three_virus(), 3);
  auto cfg = small_config(1'000, 500, 10, 3);
  cfg.n_threads = 1;
  const auto a = run_chains(sim.panel, ProximitySpec{}, HyperParams{}, cfg);
  cfg.n_threads = 3;
  const auto b = run_chains(sim.panel, ProximitySpec{}, HyperParams{}, cfg);
  REQUIRE(a.draws.size() == 150);
  CHECK(a.draws == b.draws);
  CHECK(a.chain == b.chain);
  CHECK(a.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(a.draws[0] != a.draws[50]);
  CHECK(a.rhat.size() == parameter_names(4, 3).size());

  const auto single = run_chain(sim.panel, ProximitySpec{}, HyperParams{}, cfg, 1);
  CHECK(std::equal(single.draws.begin(), single.draws.end(), a.draws.begin() + 50));
}

TEST_CASE("duplicate chain seeds produce a warning") {
  const auto panel = constant_panel(1, 2, 3, 3.0);
  auto cfg = small_config(100, 50, 10, 2);
  cfg.chain_seeds = {7, 7};
  const auto s = run_chains(panel, ProximitySpec{}, HyperParams{}, cfg);
  REQUIRE_FALSE(s.warnings.empty());
  CHECK(s.warnings.front().find("share seed") != std::string::npos);
  CHECK(std::equal(s.draws.begin(), s.draws.begin() + 5, s.draws.begin() + 5));
}

TEST_CASE("a zero-density initial state is rejected") {
  const auto panel = constant_panel(1, 1, 3, 3.0);
  auto cfg = small_config(10, 0, 1);
  ModelState bad = ModelState::initial(panel);
  bad.lambda = 1.5;
  cfg.initial_state = bad;
  CHECK_THROWS_AS(run_chain(panel, ProximitySpec{}, HyperParams{}, cfg, 0), NonFiniteDensity);
  cfg.initial_state = ModelState::zeros(2, 1);
  CHECK_THROWS_AS(run_chain(panel, ProximitySpec{}, HyperParams{}, cfg, 0), ConfigError);
}

TEST_CASE("single chain has no R-hat") {
  const auto panel = constant_panel(1, 1, 3, 3.0);
  const auto s = run_chains(panel, ProximitySpec{}, HyperParams{}, small_config(200, 100, 10));
  CHECK_FALSE(s.rhat_applicable());
  CHECK(s.rhat.empty());
}

TEST_CASE("Gelman-Rubin statistic") {
  // Two chains with equal means: B = 0, so R-hat = sqrt((n-1)/n).
  const std::vector<std::vector<double>> same{{1, 2, 3, 4}, {4, 3, 2, 1}};
  CHECK(*gelman_rubin(same) == doctest::Approx(std::sqrt(3.0 / 4.0)));
  // Hand computation: means 2.5 and 6.5, W = 5/3, B/n = 8.
  const std::vector<std::vector<double>> apart{{1, 2, 3, 4}, {5, 6, 7, 8}};
  const double w = 5.0 / 3.0;
  CHECK(*gelman_rubin(apart) == doctest::Approx(std::sqrt((0.75 * w + 8.0) / w)));
  CHECK_FALSE(gelman_rubin({{1, 1, 1}, {2, 2, 2}}).has_value());
  CHECK_FALSE(gelman_rubin({{1, 2, 3}}).has_value());
}

TEST_CASE("DIC arithmetic") {
  const std::vector<double> dev{10, 12, 14};
  const auto d = dic_from_deviances(dev, 11.0);
  CHECK(d.mean_deviance == 12.0);
  CHECK(d.p_d == 1.0);
  CHECK(d.dic == 13.0);

  const auto panel = constant_panel(1, 1, 2, 2.0);
  std::vector<ModelState> draws(10, ModelState::initial(panel));
  const auto flat = dic(draws, panel);
  CHECK(flat.p_d == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(flat.dic == doctest::Approx(deviance(draws[0], panel)));
  CHECK(deviance(draws[0], panel) == doctest::Approx(-2.0 * log_likelihood(draws[0], panel)));
  draws.pop_back();
  CHECK_THROWS_AS(dic(draws, panel), InsufficientData);
}

TEST_CASE("posterior mean state averages every parameter") {
  std::vector<ModelState> draws(2, ModelState::zeros(1, 2));
  draws[0].alpha = {1.0, 2.0};
  draws[1].alpha = {3.0, 6.0};
  draws[1].gamma.set(1, 0, 0.5);
  const auto m = posterior_mean_state(draws);
  CHECK(m.alpha == std::vector<double>{2.0, 4.0});
  CHECK(m.gamma(1, 0) == 0.25);
}

TEST_CASE("two-parameter reduced model matches grid quadrature") {
  // V = 1, T = 1 with phi held at fixed values; alpha and lambda are sampled.
  CountPanel panel;
  panel.observed = Cube<int>(1, 1);
  panel.expected = Cube<double>(1, 1);
  panel.virus_names = {"v"};
  const std::vector<double> phi{0.4, 0.3, 0.1, -0.2, -0.5, -0.6, -0.3, 0.0, 0.2, 0.5, 0.7, 0.6};
  const std::vector<int> y{9, 8, 6, 4, 3, 3, 4, 5, 6, 8, 10, 9};
  for (int m = 0; m < kMonths; ++m) {
    panel.observed(m, 0, 0) = y[m];
    panel.expected(m, 0, 0) = 5.0;
  }
  ModelState init = ModelState::initial(panel);
  for (int m = 0; m < kMonths; ++m) init.phi(m, 0, 0) = phi[m];

  ChainConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iterations = 80'000;
  cfg.burn_in = 10'000;
  cfg.thin = 5;
  cfg.initial_state = init;
  cfg.updates.phi = cfg.updates.level_shift = cfg.updates.s = cfg.updates.rho = cfg.updates.sigma = false;
  cfg.updates.gamma = false;
  const auto samples = run_chains(panel, ProximitySpec{}, HyperParams{}, cfg);
  std::vector<double> alpha;
  std::vector<double> lambda;
  for (const auto& d : samples.draws) {
    alpha.push_back(d.alpha[0]);
    lambda.push_back(d.lambda);
    CHECK(d.phi == init.phi);
  }

  // The joint density factorizes, but it is tabulated on the full product grid.
  const int na = 601;
  const int nl = 601;
  std::vector<double> ag(na);
  std::vector<double> lg(nl);
  for (int i = 0; i < na; ++i) ag[i] = -1.0 + 2.0 * i / (na - 1);
  for (int j = 0; j < nl; ++j) lg[j] = (j + 0.5) / nl;
  Eigen::Map<const Eigen::VectorXd> ph(phi.data(), 12);
  std::vector<double> lam_term(nl);
  for (int j = 0; j < nl; ++j) {
    const Eigen::MatrixXd om = omega_by_hand(lg[j]);
    lam_term[j] = 0.5 * std::log(om.determinant()) - 0.5 * ph.dot(om * ph);
  }
  std::vector<double> a_term(na);
  for (int i = 0; i < na; ++i) {
    double ll = -0.5 * ag[i] * ag[i] / 100.0;
    for (int m = 0; m < kMonths; ++m) ll += y[m] * (ag[i] + phi[m]) - 5.0 * std::exp(ag[i] + phi[m]);
    a_term[i] = ll;
  }
  std::vector<double> a_marg(na, 0.0);
  std::vector<double> l_marg(nl, 0.0);
  const double amax = *std::max_element(a_term.begin(), a_term.end());
  const double lmax = *std::max_element(lam_term.begin(), lam_term.end());
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nl; ++j) {
      const double w = std::exp(a_term[i] - amax + lam_term[j] - lmax);
      a_marg[i] += w;
      l_marg[j] += w;
    }
  for (auto& x : a_marg) x = std::log(x);
  for (auto& x : l_marg) x = std::log(x);
  const std::vector<double> probs{0.1, 0.5, 0.9};
  const auto qa = grid_quantiles(ag, a_marg, probs);
  const auto ql = grid_quantiles(lg, l_marg, probs);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    CHECK(std::abs(sample_quantile(alpha, probs[k]) - qa[k]) < 0.05);
    CHECK(std::abs(sample_quantile(lambda, probs[k]) - ql[k]) < 0.05);
  }
}

TEST_CASE("sigma update matches grid quadrature with phi held fixed") {
  CountPanel panel;
  panel.observed = Cube<int>(1, 1, 5);
  panel.expected = Cube<double>(1, 1, 5.0);
  panel.virus_names = {"v"};
  ModelState init = ModelState::initial(panel);
  const std::vector<double> phi{0.8, 0.5, 0.1, -0.4, -0.9, -1.1, -0.6, 0.0, 0.3, 0.9, 1.2, 1.0};
  for (int m = 0; m < kMonths; ++m) init.phi(m, 0, 0) = phi[m];
  ChainConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iterations = 60'000;
  cfg.burn_in = 10'000;
  cfg.thin = 5;
  cfg.initial_state = init;
  cfg.updates.alpha = cfg.updates.phi = cfg.updates.level_shift = cfg.updates.s = cfg.updates.lambda = false;
  cfg.updates.rho = cfg.updates.gamma = false;
  const auto samples = run_chains(panel, ProximitySpec{}, HyperParams{}, cfg);
  std::vector<double> sigma;
  for (const auto& d : samples.draws) sigma.push_back(d.sigma_diag[0]);

  // Lambda = sigma^-2, so log p(phi | sigma) = -12 log sigma - Q / (2 sigma^2); Gamma(1, 1) prior.
  Eigen::Map<const Eigen::VectorXd> ph(phi.data(), 12);
  const double q = ph.dot(omega_by_hand(0.5) * ph);
  std::vector<double> g(200'000);
  std::vector<double> logd(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = 1e-4 * (i + 1);
    logd[i] = -g[i] - 12.0 * std::log(g[i]) - q / (2.0 * g[i] * g[i]);
  }
  const std::vector<double> probs{0.1, 0.5, 0.9};
  const auto oracle = grid_quantiles(g, logd, probs);
  for (std::size_t k = 0; k < probs.size(); ++k) CHECK(std::abs(sample_quantile(sigma, probs[k]) - oracle[k]) < 0.05);
}

TEST_CASE("desk-scale chains on the three-virus simulation converge and stay in support") {
  const auto sim = simulate(scenario_three_virus(), 1);
  const auto samples = run_chains(sim.panel, ProximitySpec{}, HyperParams{}, ChainConfig::desk());
  REQUIRE(samples.draws.size() == 5000);
  REQUIRE(samples.rhat_applicable());
  std::string worst_name;
  double worst = 0.0;
  for (const auto& r : samples.rhat) {
    if (r.parameter == "rho") {
      CHECK_FALSE(r.value.has_value());
      continue;
    }
    REQUIRE(r.value.has_value());
    if (*r.value > worst) {
      worst = *r.value;
      worst_name = r.parameter;
    }
  }
  CAPTURE(worst_name);
  CHECK(worst < 1.1);
  CHECK(samples.rhat_flagged().empty());
  for (const auto& chain : samples.accept_rates)
    for (const auto& b : chain) {
      CAPTURE(b.name);
      CHECK(b.rate() >= 0.1);
      CHECK(b.rate() <= 0.7);
    }
  for (const auto& d : samples.draws) {
    for (double s : d.s) CHECK((s >= 0.0 && s < 1.0));
    CHECK((d.lambda > 0.0 && d.lambda < 1.0));
    for (double x : d.sigma_diag) CHECK(x > 0.0);
    CHECK(d.gamma.has_unit_diagonal());
  }
}
