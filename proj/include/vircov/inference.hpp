#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vircov/sampler.hpp"

namespace vircov {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Equal-tailed interval from linearly interpolated sample quantiles.
Interval posterior_interval(std::span<const double> values, double level = 0.95);
/// Linearly interpolated sample quantile at probability p.
double sample_quantile(std::span<const double> values, double p);

/// 2 min(#{x > 0}, #{x < 0}) / n, floored at 1/n and capped at 1; exact zeros count toward
/// neither tail and an all-zero sample gives 1. Needs n >= 10.
double posterior_p_zero(std::span<const double> values);

/// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_adjust(std::span<const double> p);

struct CovariancePair {
  int virus_a = 0;  // 0-based, virus_a < virus_b
  int virus_b = 0;
  std::string name_a;
  std::string name_b;
  double posterior_mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
};

struct CovarianceReport {
  std::vector<CovariancePair> pairs;
  double level = 0.95;
  double fdr_level = 0.05;

  const CovariancePair& pair(int a, int b) const;
  std::vector<std::pair<int, int>> significant_pairs() const;
};

/// Off-diagonal entries of Sigma Gamma Gamma^T Sigma summarized over draws, with BH
/// correction pooled across all pairs.
CovarianceReport covariance_report(std::span<const ModelState> draws, std::span<const std::string> virus_names,
                                   double level = 0.95, double fdr = 0.05);
CovarianceReport covariance_report(const PosteriorSamples& samples, std::span<const std::string> virus_names,
                                   double level = 0.95, double fdr = 0.05);

struct RiskCell {
  int month = 0;  // 1..12
  int year = 0;   // index from 0
  int virus = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

std::vector<RiskCell> relative_risk_summary(std::span<const ModelState> draws, double level = 0.95);
/// Posterior-mean relative risk per cell.
Cube<double> posterior_mean_rr(std::span<const ModelState> draws);

struct RollingCut {
  int years = 0;
  CovarianceReport report;
  DicResult dic;
};

/// Refits the model on years 1..k for each k in [first_cut, T] and reports the
/// covariance pairs at every cut, each cut corrected on its own.
std::vector<RollingCut> rolling_covariance(const CountPanel& panel, const ProximitySpec& spec,
                                           const HyperParams& hyper, const ChainConfig& config, int first_cut = 1,
                                           double level = 0.95, double fdr = 0.05);

/// First cut from which the pair stays significant through the last cut; empty if never.
std::optional<int> significant_from(const std::vector<RollingCut>& cuts, int a, int b);

}  // namespace vircov
