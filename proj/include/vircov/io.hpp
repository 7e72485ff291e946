#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "vircov/episodes.hpp"
#include "vircov/expected_counts.hpp"
#include "vircov/inference.hpp"
#include "vircov/model.hpp"
#include "vircov/sampler.hpp"
#include "vircov/simgen.hpp"

namespace vircov {

/// Shortest text that parses back to exactly the same double.
std::string format_double(double x);
double parse_double(std::string_view text);

/// Comma-separated fields; double quotes protect commas and "" escapes a quote.
std::vector<std::string> split_csv_line(std::string_view line);
/// Quotes the field when it contains a comma, quote or newline.
std::string csv_field(std::string_view text);

/// Columns: patient_id, date, age, sex, severity, then one pos/neg/nt column per virus.
EpisodeTable read_episodes(std::istream& in);
void write_episodes(std::ostream& out, const EpisodeTable& table);

/// Columns: month, year, virus, n_tested, p_standardized, expected.
void write_expected_csv(std::ostream& out, const ExpectedCountsResult& result);

/// Columns: month (1-12), year, virus, observed, expected, n_tested (may be blank).
CountPanel read_panel(std::istream& in);
void write_panel(std::ostream& out, const CountPanel& panel);

struct DrawTable {
  int years = 0;
  int viruses = 0;
  std::vector<int> chain;
  std::vector<long> iteration;
  std::vector<ModelState> draws;
};

/// Columns: chain, iteration, then parameter_names order.
void write_draws(std::ostream& out, const PosteriorSamples& samples);
DrawTable read_draws(std::istream& in);

nlohmann::ordered_json to_json(const CovarianceReport& report);
nlohmann::ordered_json to_json(const DenseMatrix& m);
nlohmann::ordered_json to_json(const LogisticFit& fit);
nlohmann::ordered_json to_json(const DicResult& dic);
/// Columns: pair, virus_a, virus_b, mean, ci_low, ci_high, p_raw, p_adjusted, significant.
void write_covariance_csv(std::ostream& out, const CovarianceReport& report);
/// Columns: month, year, virus, rr_mean, ci_low, ci_high.
void write_rr_csv(std::ostream& out, const std::vector<RiskCell>& cells, std::span<const std::string> virus_names,
                  int first_year);
/// One row per (cut, pair).
void write_rolling_csv(std::ostream& out, const std::vector<RollingCut>& cuts);
nlohmann::ordered_json truth_json(const SimOutput& sim);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place; creates parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace vircov
