#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vircov/cube.hpp"
#include "vircov/episodes.hpp"
#include "vircov/model.hpp"

namespace vircov {

/// How month enters the positivity regressions: one fit per virus with an 11-level
/// month factor (January is the reference), or a separate fit per (virus, month).
enum class MonthModel { factor, per_month };

struct LogisticOptions {
  /// L2 penalty on year indicator coefficients (stand-in for a yearly random effect).
  double ridge_year = 1.0;
  int max_iterations = 100;
  /// Convergence threshold on the max absolute penalized score component.
  double tolerance = 1e-8;
  /// Empty: age enters linearly in years. Otherwise ascending lower edges of age bands
  /// beyond the first (e.g. {1, 5, 18, 65}), each band after the first getting an indicator.
  std::vector<int> age_band_edges;
};

struct LogisticFit {
  std::string virus;
  /// Active design columns; columns without variation in the data are left out.
  std::vector<std::string> terms;
  std::vector<double> coefficients;
  bool converged = false;
  int iterations = 0;
  double max_score_residual = 0.0;
  /// Set for per-month fits; the month factor is then absent.
  std::optional<int> month;
  /// Copied from the options; empty when age is linear.
  std::vector<int> age_band_edges;

  /// 0 for a term the fit does not carry.
  double coefficient(std::string_view term) const;
  double linear_predictor(int age, Sex sex, Severity severity, int month, int year) const;
  double predict(int age, Sex sex, Severity severity, int month, int year) const;
};

std::string month_term(int month);
std::string year_term(int year);
std::string age_band_term(int band);
/// 0 for ages below the first edge.
int age_band(int age, std::span<const int> edges);

/// Penalized IRLS for P(positive) of one virus, over records that tested for it.
/// When only_month is set, only that month's records are used and no month factor
/// is fitted. Throws InsufficientData (an empty outcome class) or Separation.
LogisticFit fit_logistic(std::span<const EpisodeRecord> records, std::size_t virus, std::string_view virus_label,
                         const LogisticOptions& options = {}, std::optional<int> only_month = std::nullopt);

/// Monthly standardized probabilities for one virus, month index 0..11.
using MonthlyProbs = std::array<double, kMonths>;

using Predictor = std::function<double(int age, Sex sex, Severity severity, int month, int year)>;

/// For each month, the stratum-count weighted mean prediction over the observed
/// (age, sex, severity, year) strata among that month's records tested for the
/// virus. Throws EmptyMonth when a month has no such records.
MonthlyProbs standardize(const Predictor& predict, std::span<const EpisodeRecord> records, std::size_t virus);
MonthlyProbs standardize(const LogisticFit& fit, std::span<const EpisodeRecord> records, std::size_t virus);
/// Per-month fits, indexed by month 0..11.
MonthlyProbs standardize(std::span<const LogisticFit> monthly_fits, std::span<const EpisodeRecord> records,
                         std::size_t virus);

struct StandardizedProbs {
  std::vector<std::string> virus_names;
  /// p_s[v][m]
  std::vector<MonthlyProbs> p_s;

  double operator()(int month, int virus) const { return p_s[virus][month]; }
};

struct CellIndex {
  int month;
  int year;
  int virus;
  bool operator==(const CellIndex&) const = default;
};

struct ExpectedTable {
  Cube<double> expected;
  /// Cells with no tests, whose expected count is zero.
  std::vector<CellIndex> zero_cells;
};

/// E = N * p_s per cell.
ExpectedTable expected_panel(const StandardizedProbs& probs, const Cube<int>& n_tested);

struct TestCounts {
  int first_year = 0;
  Cube<int> n_tested;
  Cube<int> positives;
};

/// Tests and positives per (month, year, virus) over the record years' full range.
TestCounts count_tests(const EpisodeTable& table);

struct ExpectedCountsOptions {
  LogisticOptions logistic;
  MonthModel month_model = MonthModel::factor;
};

struct ExpectedCountsResult {
  /// fits[v] holds one fit (factor model) or twelve (per-month model).
  std::vector<std::vector<LogisticFit>> fits;
  StandardizedProbs probs;
  TestCounts counts;
  ExpectedTable expected;

  bool all_converged() const;
};

/// Regressions, standardization and expected counts for every virus of the table.
ExpectedCountsResult compute_expected_counts(const EpisodeTable& table, const ExpectedCountsOptions& options = {});

/// Panel of observed positives and expected counts; cells with zero expected count
/// take expected_floor.
CountPanel build_panel(const ExpectedCountsResult& result, const std::vector<std::string>& virus_names,
                       double expected_floor);

}  // namespace vircov
