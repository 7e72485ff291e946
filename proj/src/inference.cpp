#include "vircov/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vircov/errors.hpp"

namespace vircov {

double sample_quantile(std::span<const double> values, double p) {
  if (values.empty()) throw InsufficientData("quantile of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval posterior_interval(std::span<const double> values, double level) {
  if (values.size() < 2) throw InsufficientData("posterior_interval needs at least two values");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
  const double tail = (1.0 - level) / 2.0;
  return {sample_quantile(values, tail), sample_quantile(values, 1.0 - tail)};
}

double posterior_p_zero(std::span<const double> values) {
  if (values.size() < 10) throw InsufficientData("posterior_p_zero needs at least 10 values");
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (double x : values) {
    if (x > 0.0) ++pos;
    else if (x < 0.0) ++neg;
  }
  if (pos + neg == 0) return 1.0;
  const double n = static_cast<double>(values.size());
  const double p = 2.0 * static_cast<double>(std::min(pos, neg)) / n;
  return std::clamp(p, 1.0 / n, 1.0);
}

std::vector<double> bh_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    running = std::min(running, p[i] * (static_cast<double>(m) / static_cast<double>(r + 1)));
    out[i] = running;
  }
  return out;
}

const CovariancePair& CovarianceReport::pair(int a, int b) const {
  if (a > b) std::swap(a, b);
  for (const auto& p : pairs)
    if (p.virus_a == a && p.virus_b == b) return p;
  throw std::out_of_range("no such virus pair");
}

std::vector<std::pair<int, int>> CovarianceReport::significant_pairs() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : pairs)
    if (p.significant) out.emplace_back(p.virus_a, p.virus_b);
  return out;
}

CovarianceReport covariance_report(std::span<const ModelState> draws, std::span<const std::string> virus_names,
                                   double level, double fdr) {
  if (draws.empty()) throw InsufficientData("covariance_report: no draws");
  if (!(fdr > 0.0 && fdr < 1.0)) throw ConfigError("fdr level must lie in (0, 1)");
  const int nv = draws.front().viruses();
  if (static_cast<int>(virus_names.size()) != nv) throw SchemaError("virus name count does not match the draws");

  std::vector<DenseMatrix> cov;
  cov.reserve(draws.size());
  for (const auto& d : draws) cov.push_back(covariance_from_cholesky(d.sigma_diag, d.gamma));

  CovarianceReport report;
  report.level = level;
  report.fdr_level = fdr;
  std::vector<double> values(draws.size());
  for (int a = 0; a < nv; ++a) {
    for (int b = a + 1; b < nv; ++b) {
      for (std::size_t k = 0; k < draws.size(); ++k) values[k] = cov[k](a, b);
      CovariancePair pr;
      pr.virus_a = a;
      pr.virus_b = b;
      pr.name_a = virus_names[a];
      pr.name_b = virus_names[b];
      pr.posterior_mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      const auto ci = posterior_interval(values, level);
      pr.ci_low = ci.low;
      pr.ci_high = ci.high;
      pr.p_raw = posterior_p_zero(values);
      report.pairs.push_back(std::move(pr));
    }
  }
  std::vector<double> raw;
  for (const auto& p : report.pairs) raw.push_back(p.p_raw);
  const auto adjusted = bh_adjust(raw);
  for (std::size_t i = 0; i < report.pairs.size(); ++i) {
    report.pairs[i].p_adjusted = adjusted[i];
    report.pairs[i].significant = adjusted[i] < fdr;
  }
  return report;
}

CovarianceReport covariance_report(const PosteriorSamples& samples, std::span<const std::string> virus_names,
                                   double level, double fdr) {
  return covariance_report(samples.draws, virus_names, level, fdr);
}

std::vector<RiskCell> relative_risk_summary(std::span<const ModelState> draws, double level) {
  if (draws.empty()) throw InsufficientData("relative_risk_summary: no draws");
  const int nt = draws.front().years();
  const int nv = draws.front().viruses();
  std::vector<Cube<double>> rr;
  rr.reserve(draws.size());
  for (const auto& d : draws) rr.push_back(relative_risks(d));
  std::vector<RiskCell> out;
  std::vector<double> values(draws.size());
  for (int t = 0; t < nt; ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < nv; ++v) {
        for (std::size_t k = 0; k < draws.size(); ++k) values[k] = rr[k](m, t, v);
        RiskCell c;
        c.month = m + 1;
        c.year = t;
        c.virus = v;
        c.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        if (values.size() >= 2) {
          const auto ci = posterior_interval(values, level);
          c.ci_low = ci.low;
          c.ci_high = ci.high;
        } else {
          c.ci_low = c.ci_high = values.front();
        }
        out.push_back(c);
      }
  return out;
}

Cube<double> posterior_mean_rr(std::span<const ModelState> draws) {
  if (draws.empty()) throw InsufficientData("posterior_mean_rr: no draws");
  Cube<double> acc(draws.front().years(), draws.front().viruses());
  for (const auto& d : draws) {
    const auto rr = relative_risks(d);
    for (std::size_t k = 0; k < acc.values().size(); ++k) acc.values()[k] += rr.values()[k];
  }
  for (double& x : acc.values()) x /= static_cast<double>(draws.size());
  return acc;
}

std::vector<RollingCut> rolling_covariance(const CountPanel& panel, const ProximitySpec& spec,
                                           const HyperParams& hyper, const ChainConfig& config, int first_cut,
                                           double level, double fdr) {
  if (first_cut < 1 || first_cut > panel.years()) throw ConfigError("first rolling cut out of range");
  std::vector<RollingCut> out;
  for (int k = first_cut; k <= panel.years(); ++k) {
    const CountPanel cut = panel.leading_years(k);
    const auto samples = run_chains(cut, spec, hyper, config);
    RollingCut rc;
    rc.years = k;
    rc.report = covariance_report(samples, cut.virus_names, level, fdr);
    rc.dic = dic(samples, cut);
    out.push_back(std::move(rc));
  }
  return out;
}

std::optional<int> significant_from(const std::vector<RollingCut>& cuts, int a, int b) {
  std::optional<int> from;
  for (const auto& c : cuts) {
    if (c.report.pair(a, b).significant) {
      if (!from) from = c.years;
    } else {
      from.reset();
    }
  }
  return from;
}

}  // namespace vircov
