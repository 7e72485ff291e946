#include "vircov/simgen.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vircov/errors.hpp"

namespace vircov {

namespace {

constexpr int kLastSafeDay = 28;

int draw_age(const std::vector<AgeBand>& bands, Rng& rng) {
  double total = 0.0;
  for (const auto& b : bands) total += b.weight;
  double u = rng.uniform() * total;
  for (const auto& b : bands) {
    if (u < b.weight) return rng.uniform_int(b.lo, b.hi);
    u -= b.weight;
  }
  return rng.uniform_int(bands.back().lo, bands.back().hi);
}

std::string patient_id(long n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%07ld", n);
  return buf;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void Demographics::validate() const {
  if (age_bands.empty()) throw ConfigError("at least one age band is required");
  double total = 0.0;
  for (const auto& b : age_bands) {
    if (b.lo < 0 || b.hi < b.lo || !(b.weight >= 0.0)) throw ConfigError("invalid age band");
    total += b.weight;
  }
  if (!(total > 0.0)) throw ConfigError("age band weights must not all be zero");
  if (!(p_male >= 0.0 && p_male <= 1.0) || !(p_gp >= 0.0 && p_gp <= 1.0)) {
    throw ConfigError("demographic proportions must lie in [0, 1]");
  }
}

std::array<double, kMonths> seasonal_cosine(int peak_month, double amplitude) {
  if (peak_month < 1 || peak_month > kMonths) throw ConfigError("peak month must be in 1..12");
  std::array<double, kMonths> out{};
  for (int m = 0; m < kMonths; ++m) {
    out[m] = amplitude * std::cos(2.0 * std::numbers::pi * (m + 1 - peak_month) / kMonths);
  }
  return out;
}

void SimScenario::validate() const {
  if (n_viruses < 1 || n_years < 1) throw ConfigError("scenario needs at least one virus and one year");
  if (samples_per_month < 1) throw ConfigError("samples_per_month must be positive");
  const auto nv = static_cast<std::size_t>(n_viruses);
  if (seasonal_effects.size() != nv || s_true.size() != nv || alpha_true.size() != nv) {
    throw ConfigError("per-virus scenario vectors must have one entry per virus");
  }
  if (true_cov.rows() != nv || true_cov.cols() != nv) throw ConfigError("true_cov must be V x V");
  if (!is_positive_definite(true_cov)) throw NotPositiveDefinite("true_cov is not positive definite");
  for (double s : s_true)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("s_true entries must lie in [0, 1)");
  if (!(lambda_true >= 0.0 && lambda_true < 1.0)) throw ConfigError("lambda_true must lie in [0, 1)");
  if (!(coef_sd >= 0.0)) throw ConfigError("coef_sd must be non-negative");
  proximity.validate();
  demographics.validate();
}

SimScenario scenario_three_virus() {
  SimScenario sc;
  sc.name = "three-virus";
  sc.n_viruses = 3;
  sc.n_years = 4;
  sc.seasonal_effects = {seasonal_cosine(1), seasonal_cosine(7), seasonal_flat()};
  sc.true_cov = DenseMatrix{{1.0, -0.5, 0.0}, {-0.5, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  sc.s_true.assign(3, 0.5);
  sc.alpha_true.assign(3, 0.0);
  return sc;
}

SimScenario scenario_five_virus() {
  SimScenario sc;
  sc.name = "five-virus";
  sc.n_viruses = 5;
  sc.n_years = 15;
  sc.seasonal_effects = {seasonal_cosine(1), seasonal_cosine(7), seasonal_flat(), seasonal_cosine(10),
                         seasonal_cosine(10)};
  sc.true_cov = DenseMatrix::identity(5);
  sc.true_cov(0, 1) = sc.true_cov(1, 0) = -0.5;
  sc.true_cov(3, 4) = sc.true_cov(4, 3) = 0.5;
  sc.s_true.assign(5, 0.5);
  sc.alpha_true.assign(5, 0.0);
  return sc;
}

Cube<double> draw_mcar_field(int years, std::span<const double> s, const DenseMatrix& omega,
                             const DenseMatrix& lambda_precision, Rng& rng) {
  const int nv = static_cast<int>(lambda_precision.rows());
  if (static_cast<int>(s.size()) != nv) throw ConfigError("s must have one entry per virus");
  const auto factor = cholesky_factor(kronecker(omega, lambda_precision));
  Cube<double> phi(years, nv);
  std::vector<double> mean(static_cast<std::size_t>(kMonths) * nv, 0.0);
  for (int t = 0; t < years; ++t) {
    if (t > 0) {
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv; ++v) mean[m * nv + v] = s[v] * phi(m, t - 1, v);
    }
    const auto x = sample_mvn_precision(mean, factor, rng);
    std::copy(x.begin(), x.end(), phi.year_slice(t).begin());
  }
  return phi;
}

SimOutput simulate(const SimScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  Rng rng(seed);
  const int nv = scenario.n_viruses;
  const int nt = scenario.n_years;
  SimOutput out;
  out.scenario = scenario;
  out.seed = seed;

  for (int v = 0; v < nv; ++v) {
    TrueCoefficients c;
    c.age = rng.normal(0.0, scenario.coef_sd);
    c.sex = rng.normal(0.0, scenario.coef_sd);
    c.severity = rng.normal(0.0, scenario.coef_sd);
    out.true_coefficients.push_back(c);
    out.records.virus_names.push_back("virus" + std::to_string(v + 1));
  }

  const auto& demo = scenario.demographics;
  long next_id = 1;
  for (int t = 0; t < nt; ++t) {
    for (int m = 0; m < kMonths; ++m) {
      for (int k = 0; k < scenario.samples_per_month; ++k) {
        EpisodeRecord r;
        r.patient_id = patient_id(next_id++);
        r.date = std::chrono::year{scenario.first_year + t} / std::chrono::month{static_cast<unsigned>(m + 1)} /
                 std::chrono::day{static_cast<unsigned>(rng.uniform_int(1, kLastSafeDay))};
        r.age = draw_age(demo.age_bands, rng);
        r.sex = rng.bernoulli(demo.p_male) ? Sex::male : Sex::female;
        r.severity = rng.bernoulli(demo.p_gp) ? Severity::gp : Severity::hospital;
        for (int v = 0; v < nv; ++v) {
          const auto& c = out.true_coefficients[v];
          const double eta = c.age * (r.age / 10.0) + c.sex * (r.sex == Sex::male ? 1.0 : 0.0) +
                             c.severity * (r.severity == Severity::hospital ? 1.0 : 0.0) +
                             scenario.seasonal_effects[v][m];
          r.results.push_back(rng.bernoulli(logistic(eta)) ? TestResult::positive : TestResult::negative);
        }
        out.records.records.push_back(std::move(r));
      }
    }
  }

  out.expected = compute_expected_counts(out.records, scenario.expected_options);
  out.panel = build_panel(out.expected, out.records.virus_names, 0.5);

  if (scenario.zero_field) {
    out.true_phi = Cube<double>(nt, nv);
  } else {
    const auto omega = build_omega(build_w(scenario.proximity, scenario.rho_true), scenario.lambda_true);
    out.true_phi = draw_mcar_field(nt, scenario.s_true, omega, inverse_spd(scenario.true_cov), rng);
  }

  out.true_rr = Cube<double>(nt, nv);
  for (int t = 0; t < nt; ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < nv; ++v) {
        const double rr = std::exp(scenario.alpha_true[v] + out.true_phi(m, t, v));
        out.true_rr(m, t, v) = rr;
        const double mu = rr * out.panel.expected(m, t, v);
        out.panel.observed(m, t, v) = scenario.observed_mode == ObservedMode::product
                                          ? static_cast<int>(std::lround(mu))
                                          : static_cast<int>(rng.poisson(mu));
      }
  out.panel.validate();
  return out;
}

}  // namespace vircov
