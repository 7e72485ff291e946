#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "vircov/episodes.hpp"

namespace testing {

inline vircov::EpisodeRecord record(std::string id, int y, unsigned m, unsigned d, int age, vircov::Sex sex,
                                    vircov::Severity sev, std::vector<vircov::TestResult> results) {
  vircov::EpisodeRecord r;
  r.patient_id = std::move(id);
  r.date = std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d};
  r.age = age;
  r.sex = sex;
  r.severity = sev;
  r.results = std::move(results);
  return r;
}

}  // namespace testing
