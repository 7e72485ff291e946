#include "vircov/expected_counts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "vircov/errors.hpp"
#include "vircov/linalg.hpp"

namespace vircov {

namespace {

enum class TermKind { intercept, age, age_band, sex, severity, month, year };

struct Term {
  TermKind kind;
  int level = 0;
  bool penalized = false;
  std::string name;
};

double term_value(const Term& term, std::span<const int> edges, int age, Sex sex, Severity severity, int month,
                  int year) {
  switch (term.kind) {
    case TermKind::intercept:
      return 1.0;
    case TermKind::age:
      return static_cast<double>(age);
    case TermKind::age_band:
      return age_band(age, edges) == term.level ? 1.0 : 0.0;
    case TermKind::sex:
      return sex == Sex::male ? 1.0 : 0.0;
    case TermKind::severity:
      return severity == Severity::hospital ? 1.0 : 0.0;
    case TermKind::month:
      return month == term.level ? 1.0 : 0.0;
    case TermKind::year:
      return year == term.level ? 1.0 : 0.0;
  }
  return 0.0;
}

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Coefficients beyond this linear predictor magnitude mean the IRLS weights have
// collapsed to nothing: the data are (quasi-)separated.
constexpr double kSeparationEta = 50.0;

// A coefficient whose standard error exceeds this is carried by vanishing IRLS
// weights, which at a zero score means the outcome is separated along it.
constexpr double kSeparationStandardError = 100.0;

void check_identified(const DenseMatrix& info, const std::string& label) {
  LowerTriangularMatrix chol;
  try {
    chol = cholesky_factor(info);
  } catch (const NotPositiveDefinite&) {
    throw Separation("fit_logistic(" + label + "): information matrix is singular (weights collapsed)");
  }
  const std::size_t p = info.rows();
  std::vector<double> e(p, 0.0);
  for (std::size_t k = 0; k < p; ++k) {
    std::fill(e.begin(), e.end(), 0.0);
    e[k] = 1.0;
    const auto col = chol.solve(e);
    double var = 0.0;
    for (double c : col) var += c * c;
    if (std::sqrt(var) > kSeparationStandardError) {
      throw Separation("fit_logistic(" + label + "): coefficient " + std::to_string(k) +
                       " is not identified (separation)");
    }
  }
}

}  // namespace

std::string month_term(int month) { return "month[" + std::to_string(month) + "]"; }
std::string year_term(int year) { return "year[" + std::to_string(year) + "]"; }
std::string age_band_term(int band) { return "age_band[" + std::to_string(band) + "]"; }

int age_band(int age, std::span<const int> edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), age) - edges.begin());
}

double LogisticFit::coefficient(std::string_view term) const {
  for (std::size_t k = 0; k < terms.size(); ++k)
    if (terms[k] == term) return coefficients[k];
  return 0.0;
}

double LogisticFit::linear_predictor(int age, Sex sex, Severity severity, int month_of_year, int year) const {
  double eta = coefficient("intercept");
  if (age_band_edges.empty()) {
    eta += coefficient("age") * age;
  } else {
    eta += coefficient(age_band_term(age_band(age, age_band_edges)));
  }
  if (sex == Sex::male) eta += coefficient("sex");
  if (severity == Severity::hospital) eta += coefficient("severity");
  if (!month) eta += coefficient(month_term(month_of_year));
  eta += coefficient(year_term(year));
  return eta;
}

double LogisticFit::predict(int age, Sex sex, Severity severity, int month_of_year, int year) const {
  return inv_logit(linear_predictor(age, sex, severity, month_of_year, year));
}

LogisticFit fit_logistic(std::span<const EpisodeRecord> records, std::size_t virus, std::string_view virus_label,
                         const LogisticOptions& options, std::optional<int> only_month) {
  if (!(options.ridge_year > 0.0)) throw ConfigError("ridge_year must be strictly positive");

  std::vector<const EpisodeRecord*> rows;
  std::size_t n_pos = 0;
  for (const auto& r : records) {
    if (virus >= r.results.size()) throw MalformedRecord("record has fewer virus columns than requested");
    if (!r.tested(virus)) continue;
    if (only_month && r.month() != *only_month) continue;
    rows.push_back(&r);
    if (r.positive(virus)) ++n_pos;
  }
  const std::string label(virus_label);
  if (n_pos == 0 || n_pos == rows.size()) {
    throw InsufficientData("fit_logistic(" + label + "): need at least one positive and one negative outcome");
  }

  const auto& edges = options.age_band_edges;
  if (!std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ConfigError("age band edges must be strictly ascending");
  }
  std::vector<Term> candidates{{TermKind::intercept, 0, false, "intercept"}};
  if (edges.empty()) {
    candidates.push_back({TermKind::age, 0, false, "age"});
  } else {
    for (int b = 1; b <= static_cast<int>(edges.size()); ++b)
      candidates.push_back({TermKind::age_band, b, false, age_band_term(b)});
  }
  candidates.push_back({TermKind::sex, 0, false, "sex"});
  candidates.push_back({TermKind::severity, 0, false, "severity"});
  if (!only_month) {
    for (int m = 2; m <= kMonths; ++m) candidates.push_back({TermKind::month, m, false, month_term(m)});
  }
  std::vector<int> years;
  for (const auto* r : rows) years.push_back(r->year());
  std::sort(years.begin(), years.end());
  years.erase(std::unique(years.begin(), years.end()), years.end());
  for (int y : years) candidates.push_back({TermKind::year, y, true, year_term(y)});

  std::vector<Term> terms;
  for (const auto& term : candidates) {
    if (term.kind == TermKind::intercept || term.penalized) {
      terms.push_back(term);
      continue;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto* r : rows) {
      const double x = term_value(term, edges, r->age, r->sex, r->severity, r->month(), r->year());
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi > lo) terms.push_back(term);
  }

  const std::size_t n = rows.size();
  const std::size_t p = terms.size();
  std::vector<double> x(n * p);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* r = rows[i];
    for (std::size_t k = 0; k < p; ++k) x[i * p + k] = term_value(terms[k], edges, r->age, r->sex, r->severity, r->month(), r->year());
    y[i] = r->positive(virus) ? 1.0 : 0.0;
  }
  std::vector<double> penalty(p, 0.0);
  for (std::size_t k = 0; k < p; ++k)
    if (terms[k].penalized) penalty[k] = options.ridge_year;

  std::vector<double> beta(p, 0.0);
  const double ybar = static_cast<double>(n_pos) / static_cast<double>(n);
  beta[0] = std::log(ybar / (1.0 - ybar));

  std::vector<double> eta(n);
  auto objective = [&](const std::vector<double>& b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (std::size_t k = 0; k < p; ++k) e += x[i * p + k] * b[k];
      eta[i] = e;
      ll += y[i] * e - log1p_exp(e);
    }
    for (std::size_t k = 0; k < p; ++k) ll -= 0.5 * penalty[k] * b[k] * b[k];
    return ll;
  };

  LogisticFit fit;
  fit.virus = label;
  fit.month = only_month;
  fit.age_band_edges = edges;
  double current = objective(beta);
  std::vector<double> score(p);
  DenseMatrix info(p, p);
  for (int iter = 0;; ++iter) {
    std::fill(score.begin(), score.end(), 0.0);
    info = DenseMatrix(p, p);
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = inv_logit(eta[i]);
      const double w = mu * (1.0 - mu);
      const double resid = y[i] - mu;
      const double* xi = x.data() + i * p;
      for (std::size_t k = 0; k < p; ++k) {
        score[k] += xi[k] * resid;
        const double wx = w * xi[k];
        if (wx == 0.0) continue;
        for (std::size_t l = 0; l <= k; ++l) info(k, l) += wx * xi[l];
      }
    }
    double max_score = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      score[k] -= penalty[k] * beta[k];
      info(k, k) += penalty[k];
      max_score = std::max(max_score, std::abs(score[k]));
    }
    fit.max_score_residual = max_score;
    fit.iterations = iter;
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t l = 0; l < k; ++l) info(l, k) = info(k, l);
    if (max_score < options.tolerance) {
      fit.converged = true;
      check_identified(info, label);
      break;
    }
    if (iter >= options.max_iterations) break;

    std::vector<double> step;
    try {
      const auto chol = cholesky_factor(info);
      step = chol.solve_transposed(chol.solve(score));
    } catch (const NotPositiveDefinite&) {
      throw Separation("fit_logistic(" + label + "): information matrix is singular (weights collapsed)");
    }
    // Damped Newton: halve until the penalized log-likelihood does not decrease.
    std::vector<double> trial(p);
    double scale = 1.0;
    double next = -std::numeric_limits<double>::infinity();
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      for (std::size_t k = 0; k < p; ++k) trial[k] = beta[k] + scale * step[k];
      next = objective(trial);
      if (std::isfinite(next) && next >= current - 1e-12 * std::abs(current)) break;
    }
    if (!std::isfinite(next)) throw Separation("fit_logistic(" + label + "): non-finite likelihood");
    beta = trial;
    current = objective(beta);
    for (double e : eta) {
      if (std::abs(e) > kSeparationEta) {
        throw Separation("fit_logistic(" + label + "): fitted probabilities collapsed to 0 or 1 (separation)");
      }
    }
  }

  for (const auto& t : terms) fit.terms.push_back(t.name);
  fit.coefficients = beta;
  return fit;
}

MonthlyProbs standardize(const Predictor& predict, std::span<const EpisodeRecord> records, std::size_t virus) {
  // Ordered strata keep the summation order independent of record order.
  using Stratum = std::tuple<int, int, int, int>;  // age, sex, severity, year
  std::array<std::map<Stratum, long>, kMonths> strata;
  for (const auto& r : records) {
    if (!r.tested(virus)) continue;
    strata[r.month() - 1][{r.age, static_cast<int>(r.sex), static_cast<int>(r.severity), r.year()}] += 1;
  }
  MonthlyProbs out{};
  for (int m = 0; m < kMonths; ++m) {
    long n_month = 0;
    double acc = 0.0;
    for (const auto& [key, count] : strata[m]) {
      const auto& [age, sex, severity, year] = key;
      acc += static_cast<double>(count) *
             predict(age, static_cast<Sex>(sex), static_cast<Severity>(severity), m + 1, year);
      n_month += count;
    }
    if (n_month == 0) {
      throw EmptyMonth("standardize: no records tested for virus " + std::to_string(virus + 1) + " in month " +
                       std::to_string(m + 1));
    }
    out[m] = acc / static_cast<double>(n_month);
  }
  return out;
}

MonthlyProbs standardize(const LogisticFit& fit, std::span<const EpisodeRecord> records, std::size_t virus) {
  return standardize(
      [&fit](int age, Sex sex, Severity severity, int month, int year) {
        return fit.predict(age, sex, severity, month, year);
      },
      records, virus);
}

MonthlyProbs standardize(std::span<const LogisticFit> monthly_fits, std::span<const EpisodeRecord> records,
                         std::size_t virus) {
  if (monthly_fits.size() != static_cast<std::size_t>(kMonths)) {
    throw std::invalid_argument("standardize: expected twelve monthly fits");
  }
  return standardize(
      [monthly_fits](int age, Sex sex, Severity severity, int month, int year) {
        return monthly_fits[month - 1].predict(age, sex, severity, month, year);
      },
      records, virus);
}

ExpectedTable expected_panel(const StandardizedProbs& probs, const Cube<int>& n_tested) {
  if (static_cast<int>(probs.p_s.size()) != n_tested.viruses()) {
    throw std::invalid_argument("expected_panel: virus count mismatch");
  }
  ExpectedTable out{Cube<double>(n_tested.years(), n_tested.viruses()), {}};
  for (int t = 0; t < n_tested.years(); ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < n_tested.viruses(); ++v) {
        const int n = n_tested(m, t, v);
        if (n < 0) throw std::invalid_argument("expected_panel: negative test count");
        out.expected(m, t, v) = n * probs(m, v);
        if (n == 0) out.zero_cells.push_back({m, t, v});
      }
  return out;
}

TestCounts count_tests(const EpisodeTable& table) {
  if (table.records.empty()) throw InsufficientData("no episode records");
  int lo = table.records.front().year();
  int hi = lo;
  for (const auto& r : table.records) {
    lo = std::min(lo, r.year());
    hi = std::max(hi, r.year());
  }
  const int nv = static_cast<int>(table.virus_names.size());
  TestCounts counts{lo, Cube<int>(hi - lo + 1, nv, 0), Cube<int>(hi - lo + 1, nv, 0)};
  for (const auto& r : table.records) {
    for (int v = 0; v < nv; ++v) {
      if (!r.tested(v)) continue;
      counts.n_tested(r.month() - 1, r.year() - lo, v) += 1;
      if (r.positive(v)) counts.positives(r.month() - 1, r.year() - lo, v) += 1;
    }
  }
  return counts;
}

bool ExpectedCountsResult::all_converged() const {
  for (const auto& per_virus : fits)
    for (const auto& f : per_virus)
      if (!f.converged) return false;
  return true;
}

ExpectedCountsResult compute_expected_counts(const EpisodeTable& table, const ExpectedCountsOptions& options) {
  ExpectedCountsResult result;
  result.counts = count_tests(table);
  result.probs.virus_names = table.virus_names;
  const std::span<const EpisodeRecord> records(table.records);
  for (std::size_t v = 0; v < table.virus_names.size(); ++v) {
    const auto& label = table.virus_names[v];
    if (options.month_model == MonthModel::factor) {
      result.fits.push_back({fit_logistic(records, v, label, options.logistic)});
      result.probs.p_s.push_back(standardize(result.fits.back().front(), records, v));
    } else {
      std::vector<LogisticFit> monthly;
      for (int m = 1; m <= kMonths; ++m) monthly.push_back(fit_logistic(records, v, label, options.logistic, m));
      result.probs.p_s.push_back(standardize(std::span<const LogisticFit>(monthly), records, v));
      result.fits.push_back(std::move(monthly));
    }
  }
  result.expected = expected_panel(result.probs, result.counts.n_tested);
  return result;
}

CountPanel build_panel(const ExpectedCountsResult& result, const std::vector<std::string>& virus_names,
                       double expected_floor) {
  if (!(expected_floor > 0.0)) throw ConfigError("expected-count floor must be strictly positive");
  CountPanel panel;
  panel.first_year = result.counts.first_year;
  panel.virus_names = virus_names;
  panel.observed = result.counts.positives;
  panel.expected = result.expected.expected;
  panel.n_tested = result.counts.n_tested;
  for (const auto& c : result.expected.zero_cells) panel.expected(c.month, c.year, c.virus) = expected_floor;
  return panel;
}

}  // namespace vircov
