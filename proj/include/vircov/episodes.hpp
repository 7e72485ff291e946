#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <vector>

namespace vircov {

enum class Sex { female, male };
enum class Severity { gp, hospital };
enum class TestResult { positive, negative, not_tested };

/// One clinical sample, or one aggregated episode of illness after aggregate_episodes.
struct EpisodeRecord {
  std::string patient_id;
  std::chrono::year_month_day date;
  int age = 0;
  Sex sex = Sex::female;
  Severity severity = Severity::gp;
  /// One entry per virus column of the owning table.
  std::vector<TestResult> results;

  int year() const { return static_cast<int>(date.year()); }
  /// 1..12
  int month() const { return static_cast<int>(static_cast<unsigned>(date.month())); }
  bool tested(std::size_t virus) const { return results[virus] != TestResult::not_tested; }
  bool positive(std::size_t virus) const { return results[virus] == TestResult::positive; }

  bool operator==(const EpisodeRecord&) const = default;
};

struct EpisodeTable {
  std::vector<std::string> virus_names;
  std::vector<EpisodeRecord> records;
};

/// Strict YYYY-MM-DD. Throws MalformedRecord.
std::chrono::year_month_day parse_iso_date(std::string_view text);
std::string format_iso_date(const std::chrono::year_month_day& date);

Sex parse_sex(std::string_view code);
Severity parse_severity(std::string_view code);
TestResult parse_result(std::string_view code);
std::string_view to_code(Sex sex);
std::string_view to_code(Severity severity);
std::string_view to_code(TestResult result);

/// Merges each patient's samples falling within window_days of the first sample of
/// the current episode. An episode is positive for a virus when any merged sample was
/// positive, negative when tested and never positive. Demographics and date come from
/// the first sample. Output is ordered by (patient_id, date).
std::vector<EpisodeRecord> aggregate_episodes(std::vector<EpisodeRecord> samples, int window_days = 30);

}  // namespace vircov
