#include "vircov/episodes.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "vircov/errors.hpp"

namespace vircov {

namespace {

int parse_fixed_digits(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw MalformedRecord("unparseable date '" + std::string(whole) + "'");
  }
  return value;
}

}  // namespace

std::chrono::year_month_day parse_iso_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw MalformedRecord("unparseable date '" + std::string(text) + "' (expected YYYY-MM-DD)");
  }
  const int y = parse_fixed_digits(text.substr(0, 4), text);
  const int m = parse_fixed_digits(text.substr(5, 2), text);
  const int d = parse_fixed_digits(text.substr(8, 2), text);
  const std::chrono::year_month_day date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                         std::chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok()) throw MalformedRecord("invalid calendar date '" + std::string(text) + "'");
  return date;
}

std::string format_iso_date(const std::chrono::year_month_day& date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

Sex parse_sex(std::string_view code) {
  if (code == "F") return Sex::female;
  if (code == "M") return Sex::male;
  throw MalformedRecord("unknown sex code '" + std::string(code) + "'");
}

Severity parse_severity(std::string_view code) {
  if (code == "GP") return Severity::gp;
  if (code == "HOSP") return Severity::hospital;
  throw MalformedRecord("unknown severity code '" + std::string(code) + "'");
}

TestResult parse_result(std::string_view code) {
  if (code == "pos") return TestResult::positive;
  if (code == "neg") return TestResult::negative;
  if (code == "nt") return TestResult::not_tested;
  throw MalformedRecord("unknown test result code '" + std::string(code) + "'");
}

std::string_view to_code(Sex sex) { return sex == Sex::female ? "F" : "M"; }
std::string_view to_code(Severity severity) { return severity == Severity::gp ? "GP" : "HOSP"; }

std::string_view to_code(TestResult result) {
  switch (result) {
    case TestResult::positive:
      return "pos";
    case TestResult::negative:
      return "neg";
    case TestResult::not_tested:
      break;
  }
  return "nt";
}

std::vector<EpisodeRecord> aggregate_episodes(std::vector<EpisodeRecord> samples, int window_days) {
  if (window_days < 1) throw ConfigError("window_days must be at least 1");
  for (const auto& s : samples) {
    if (std::none_of(s.results.begin(), s.results.end(),
                     [](TestResult r) { return r != TestResult::not_tested; })) {
      throw MalformedRecord("record for patient '" + s.patient_id + "' has no tested virus");
    }
  }
  std::stable_sort(samples.begin(), samples.end(), [](const EpisodeRecord& a, const EpisodeRecord& b) {
    if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
    return std::chrono::sys_days{a.date} < std::chrono::sys_days{b.date};
  });

  std::vector<EpisodeRecord> episodes;
  for (auto& sample : samples) {
    if (!episodes.empty()) {
      auto& current = episodes.back();
      const auto gap = std::chrono::sys_days{sample.date} - std::chrono::sys_days{current.date};
      if (current.patient_id == sample.patient_id && gap.count() < window_days) {
        if (current.results.size() != sample.results.size()) {
          throw MalformedRecord("records for patient '" + sample.patient_id + "' disagree on virus count");
        }
        for (std::size_t v = 0; v < current.results.size(); ++v) {
          const TestResult r = sample.results[v];
          if (r == TestResult::positive) {
            current.results[v] = TestResult::positive;
          } else if (r == TestResult::negative && current.results[v] == TestResult::not_tested) {
            current.results[v] = TestResult::negative;
          }
        }
        continue;
      }
    }
    episodes.push_back(std::move(sample));
  }
  return episodes;
}

}  // namespace vircov
