#include "vircov/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <system_error>

#include "vircov/errors.hpp"

namespace vircov {

namespace {

std::string location(int line) { return "line " + std::to_string(line) + ": "; }

int parse_int(std::string_view text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) throw std::invalid_argument("not an integer: " + std::string(text));
  return value;
}

long parse_long(std::string_view text) {
  long value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) throw std::invalid_argument("not an integer: " + std::string(text));
  return value;
}

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::vector<std::string> read_header(std::istream& in, const char* what) {
  std::string line;
  if (!next_line(in, line) || line.empty()) throw SchemaError(std::string(what) + ": missing header");
  return split_csv_line(line);
}

void expect_columns(const std::vector<std::string>& header, const std::vector<std::string>& expected,
                    const char* what) {
  if (header.size() < expected.size() || !std::equal(expected.begin(), expected.end(), header.begin())) {
    std::string msg = std::string(what) + ": expected columns ";
    for (std::size_t i = 0; i < expected.size(); ++i) msg += (i ? "," : "") + expected[i];
    throw SchemaError(msg);
  }
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) throw std::invalid_argument("not a number: " + std::string(text));
  return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c != '"') {
        out.back() += c;
      } else if (i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else {
        quoted = false;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw SchemaError("unterminated quoted CSV field");
  return out;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

EpisodeTable read_episodes(std::istream& in) {
  const auto header = read_header(in, "episode file");
  expect_columns(header, {"patient_id", "date", "age", "sex", "severity"}, "episode file");
  EpisodeTable table;
  table.virus_names.assign(header.begin() + 5, header.end());
  if (table.virus_names.empty()) throw SchemaError("episode file: no virus columns");
  std::string line;
  int line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw MalformedRecord(location(line_no) + "expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    EpisodeRecord r;
    try {
      r.patient_id = f[0];
      if (r.patient_id.empty()) throw MalformedRecord("empty patient_id");
      r.date = parse_iso_date(f[1]);
      r.age = parse_int(f[2]);
      if (r.age < 0) throw MalformedRecord("negative age");
      r.sex = parse_sex(f[3]);
      r.severity = parse_severity(f[4]);
      for (std::size_t v = 0; v < table.virus_names.size(); ++v) r.results.push_back(parse_result(f[5 + v]));
      if (std::none_of(r.results.begin(), r.results.end(), [](TestResult t) { return t != TestResult::not_tested; })) {
        throw MalformedRecord("no virus tested");
      }
    } catch (const MalformedRecord& e) {
      throw MalformedRecord(location(line_no) + e.what());
    } catch (const std::invalid_argument& e) {
      throw MalformedRecord(location(line_no) + e.what());
    }
    table.records.push_back(std::move(r));
  }
  return table;
}

void write_episodes(std::ostream& out, const EpisodeTable& table) {
  out << "patient_id,date,age,sex,severity";
  for (const auto& v : table.virus_names) out << ',' << csv_field(v);
  out << '\n';
  for (const auto& r : table.records) {
    out << csv_field(r.patient_id) << ',' << format_iso_date(r.date) << ',' << r.age << ',' << to_code(r.sex) << ','
        << to_code(r.severity);
    for (auto res : r.results) out << ',' << to_code(res);
    out << '\n';
  }
}

void write_expected_csv(std::ostream& out, const ExpectedCountsResult& result) {
  out << "month,year,virus,n_tested,p_standardized,expected\n";
  const auto& n = result.counts.n_tested;
  for (int t = 0; t < n.years(); ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < n.viruses(); ++v) {
        out << m + 1 << ',' << result.counts.first_year + t << ',' << csv_field(result.probs.virus_names[v]) << ','
            << n(m, t, v) << ',' << format_double(result.probs(m, v)) << ','
            << format_double(result.expected.expected(m, t, v)) << '\n';
      }
}

CountPanel read_panel(std::istream& in) {
  const auto header = read_header(in, "panel file");
  expect_columns(header, {"month", "year", "virus", "observed", "expected"}, "panel file");
  const bool has_n = header.size() > 5 && header[5] == "n_tested";

  struct Row {
    int month, year, virus;
    int observed;
    double expected;
    std::optional<int> n;
  };
  std::vector<Row> rows;
  std::vector<std::string> names;
  std::map<std::string, int> name_index;
  std::string line;
  int line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw SchemaError("panel file: " + location(line_no) + "wrong number of fields");
    Row r{};
    try {
      r.month = parse_int(f[0]);
      r.year = parse_int(f[1]);
      r.observed = parse_int(f[3]);
      r.expected = parse_double(f[4]);
      if (has_n && !f[5].empty()) r.n = parse_int(f[5]);
    } catch (const std::invalid_argument& e) {
      throw SchemaError("panel file: " + location(line_no) + e.what());
    }
    if (r.month < 1 || r.month > kMonths) throw SchemaError("panel file: " + location(line_no) + "month out of range");
    if (r.observed < 0) throw SchemaError("panel file: " + location(line_no) + "negative observed count");
    auto [it, inserted] = name_index.emplace(f[2], static_cast<int>(names.size()));
    if (inserted) names.push_back(f[2]);
    r.virus = it->second;
    rows.push_back(r);
  }
  if (rows.empty()) throw SchemaError("panel file: no rows");
  const auto [ymin, ymax] = std::minmax_element(rows.begin(), rows.end(),
                                                [](const Row& a, const Row& b) { return a.year < b.year; });
  const int first_year = ymin->year;
  const int nt = ymax->year - first_year + 1;
  const int nv = static_cast<int>(names.size());

  CountPanel panel;
  panel.first_year = first_year;
  panel.virus_names = names;
  panel.observed = Cube<int>(nt, nv);
  panel.expected = Cube<double>(nt, nv);
  Cube<int> seen(nt, nv, 0);
  const bool all_n = has_n && std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.n.has_value(); });
  if (all_n) panel.n_tested = Cube<int>(nt, nv);
  for (const auto& r : rows) {
    const int m = r.month - 1;
    const int t = r.year - first_year;
    if (seen(m, t, r.virus)++) {
      throw SchemaError("panel file: duplicate cell month " + std::to_string(r.month) + ", year " +
                        std::to_string(r.year) + ", virus " + names[r.virus]);
    }
    panel.observed(m, t, r.virus) = r.observed;
    panel.expected(m, t, r.virus) = r.expected;
    if (all_n) panel.n_tested(m, t, r.virus) = *r.n;
  }
  for (int t = 0; t < nt; ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < nv; ++v)
        if (!seen(m, t, v)) {
          throw SchemaError("panel file: missing cell month " + std::to_string(m + 1) + ", year " +
                            std::to_string(first_year + t) + ", virus " + names[v]);
        }
  panel.validate();
  return panel;
}

void write_panel(std::ostream& out, const CountPanel& panel) {
  out << "month,year,virus,observed,expected,n_tested\n";
  const bool has_n = panel.n_tested.size() == panel.observed.size();
  for (int t = 0; t < panel.years(); ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < panel.viruses(); ++v) {
        out << m + 1 << ',' << panel.first_year + t << ',' << csv_field(panel.virus_names[v]) << ',' << panel.observed(m, t, v)
            << ',' << format_double(panel.expected(m, t, v)) << ',';
        if (has_n) out << panel.n_tested(m, t, v);
        out << '\n';
      }
}

void write_draws(std::ostream& out, const PosteriorSamples& samples) {
  out << "chain,iteration";
  for (const auto& n : parameter_names(samples.years, samples.viruses)) out << ',' << csv_field(n);
  out << '\n';
  for (std::size_t k = 0; k < samples.draws.size(); ++k) {
    out << samples.chain[k] + 1 << ',' << samples.iteration[k];
    for (double x : flatten(samples.draws[k])) out << ',' << format_double(x);
    out << '\n';
  }
}

DrawTable read_draws(std::istream& in) {
  const auto header = read_header(in, "draws file");
  expect_columns(header, {"chain", "iteration"}, "draws file");
  DrawTable table;
  while (2 + table.viruses < static_cast<int>(header.size()) &&
         header[2 + table.viruses].starts_with("alpha["))
    ++table.viruses;
  if (table.viruses == 0) throw SchemaError("draws file: no alpha columns");
  const int nv = table.viruses;
  std::size_t phi_cols = 0;
  while (2 + nv + phi_cols < header.size() && header[2 + nv + phi_cols].starts_with("phi[")) ++phi_cols;
  if (phi_cols == 0 || phi_cols % (kMonths * nv) != 0) throw SchemaError("draws file: malformed phi columns");
  table.years = static_cast<int>(phi_cols / (kMonths * nv));
  const auto names = parameter_names(table.years, nv);
  if (header.size() != names.size() + 2 || !std::equal(names.begin(), names.end(), header.begin() + 2)) {
    throw SchemaError("draws file: parameter columns do not match the expected layout");
  }
  std::string line;
  int line_no = 1;
  std::vector<double> values(names.size());
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw SchemaError("draws file: " + location(line_no) + "wrong number of fields");
    try {
      table.chain.push_back(parse_int(f[0]) - 1);
      table.iteration.push_back(parse_long(f[1]));
      for (std::size_t p = 0; p < names.size(); ++p) values[p] = parse_double(f[p + 2]);
    } catch (const std::invalid_argument& e) {
      throw SchemaError("draws file: " + location(line_no) + e.what());
    }
    table.draws.push_back(unflatten(values, table.years, nv));
  }
  return table;
}

nlohmann::ordered_json to_json(const DenseMatrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::ordered_json to_json(const CovarianceReport& report) {
  nlohmann::ordered_json j;
  j["level"] = report.level;
  j["fdr_level"] = report.fdr_level;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"virus_a", p.name_a},
                     {"virus_b", p.name_b},
                     {"index_a", p.virus_a + 1},
                     {"index_b", p.virus_b + 1},
                     {"posterior_mean", p.posterior_mean},
                     {"ci_low", p.ci_low},
                     {"ci_high", p.ci_high},
                     {"p_raw", p.p_raw},
                     {"p_adjusted", p.p_adjusted},
                     {"significant", p.significant}});
  }
  j["pairs"] = std::move(pairs);
  return j;
}

nlohmann::ordered_json to_json(const LogisticFit& fit) {
  nlohmann::ordered_json j;
  j["virus"] = fit.virus;
  if (fit.month) j["month"] = *fit.month;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["max_score_residual"] = fit.max_score_residual;
  nlohmann::ordered_json coefs;
  for (std::size_t k = 0; k < fit.terms.size(); ++k) coefs[fit.terms[k]] = fit.coefficients[k];
  j["coefficients"] = std::move(coefs);
  return j;
}

nlohmann::ordered_json to_json(const DicResult& dic) {
  return {{"dic", dic.dic}, {"p_d", dic.p_d}, {"mean_deviance", dic.mean_deviance},
          {"deviance_at_mean", dic.deviance_at_mean}};
}

void write_covariance_csv(std::ostream& out, const CovarianceReport& report) {
  out << "pair,virus_a,virus_b,mean,ci_low,ci_high,p_raw,p_adjusted,significant\n";
  for (const auto& p : report.pairs) {
    out << p.virus_a + 1 << '-' << p.virus_b + 1 << ',' << csv_field(p.name_a) << ',' << csv_field(p.name_b) << ','
        << format_double(p.posterior_mean) << ',' << format_double(p.ci_low) << ',' << format_double(p.ci_high)
        << ',' << format_double(p.p_raw) << ',' << format_double(p.p_adjusted) << ','
        << (p.significant ? "true" : "false") << '\n';
  }
}

void write_rr_csv(std::ostream& out, const std::vector<RiskCell>& cells, std::span<const std::string> virus_names,
                  int first_year) {
  out << "month,year,virus,rr_mean,ci_low,ci_high\n";
  for (const auto& c : cells) {
    out << c.month << ',' << first_year + c.year << ',' << csv_field(virus_names[c.virus]) << ',' << format_double(c.mean)
        << ',' << format_double(c.ci_low) << ',' << format_double(c.ci_high) << '\n';
  }
}

void write_rolling_csv(std::ostream& out, const std::vector<RollingCut>& cuts) {
  out << "years,pair,virus_a,virus_b,mean,ci_low,ci_high,p_raw,p_adjusted,significant,dic\n";
  for (const auto& c : cuts)
    for (const auto& p : c.report.pairs) {
      out << c.years << ',' << p.virus_a + 1 << '-' << p.virus_b + 1 << ',' << csv_field(p.name_a) << ',' << csv_field(p.name_b) << ','
          << format_double(p.posterior_mean) << ',' << format_double(p.ci_low) << ','
          << format_double(p.ci_high) << ',' << format_double(p.p_raw) << ',' << format_double(p.p_adjusted)
          << ',' << (p.significant ? "true" : "false") << ',' << format_double(c.dic.dic) << '\n';
    }
}

nlohmann::ordered_json truth_json(const SimOutput& sim) {
  const auto& sc = sim.scenario;
  nlohmann::ordered_json j;
  j["scenario"] = sc.name;
  j["seed"] = sim.seed;
  j["n_viruses"] = sc.n_viruses;
  j["n_years"] = sc.n_years;
  j["first_year"] = sc.first_year;
  j["virus_names"] = sim.records.virus_names;
  j["true_cov"] = to_json(sc.true_cov);
  j["s_true"] = sc.s_true;
  j["lambda_true"] = sc.lambda_true;
  j["alpha_true"] = sc.alpha_true;
  j["proximity"] = sc.proximity.kind == ProximityKind::neighborhood ? "neighborhood" : "autoregressive";
  if (sc.proximity.kind == ProximityKind::autoregressive) j["rho_true"] = sc.rho_true;
  j["observed_mode"] = sc.observed_mode == ObservedMode::product ? "product" : "poisson";
  auto coefs = nlohmann::ordered_json::array();
  for (const auto& c : sim.true_coefficients)
    coefs.push_back({{"age_per_decade", c.age}, {"sex", c.sex}, {"severity", c.severity}});
  j["true_coefficients"] = std::move(coefs);
  auto cells = nlohmann::ordered_json::array();
  for (int t = 0; t < sc.n_years; ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < sc.n_viruses; ++v) {
        cells.push_back({{"month", m + 1},
                         {"year", sc.first_year + t},
                         {"virus", sim.records.virus_names[v]},
                         {"phi", sim.true_phi(m, t, v)},
                         {"rr", sim.true_rr(m, t, v)}});
      }
  j["cells"] = std::move(cells);
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace vircov
