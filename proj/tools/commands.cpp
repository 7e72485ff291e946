#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "vircov/episodes.hpp"
#include "vircov/errors.hpp"
#include "vircov/expected_counts.hpp"
#include "vircov/inference.hpp"
#include "vircov/io.hpp"
#include "vircov/log.hpp"
#include "vircov/sampler.hpp"
#include "vircov/simgen.hpp"

namespace vircov::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

/// Error that already carries its exit code.
struct CommandFailure : std::runtime_error {
  CommandFailure(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

template <typename Writer>
std::string render(Writer&& writer) {
  std::ostringstream ss;
  writer(ss);
  return ss.str();
}

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const auto day = std::chrono::floor<std::chrono::days>(now);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{now - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_iso_date(ymd).c_str(),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

void write_timing(const fs::path& dir, const std::string& command, double seconds) {
  write_text_file(dir / "timing.json", dump({{"command", command}, {"finished_utc", utc_timestamp()},
                                             {"elapsed_seconds", seconds}}));
}

json manifest_base(const std::string& command) { return {{"tool", "vircov"}, {"version", kVersion}, {"command", command}}; }

// ---------------------------------------------------------------- config file

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
}

// Config-file entries become flags unless the same option is already on the command line.
std::vector<std::string> merge_config(CLI::App& sub, std::vector<std::string> args, const std::string& path) {
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config_file(path)) {
    if (key == "config") throw ConfigError("config files cannot include other config files");
    const CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError("unknown config key '" + key + "' for command " + sub.get_name());
    if (given_on_command_line(args, key)) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true") {
        injected.push_back("--" + key);
      } else if (value != "false") {
        throw ConfigError("config key '" + key + "' takes true or false");
      }
    } else {
      injected.push_back("--" + key + "=" + value);
    }
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

// ---------------------------------------------------------------- sampler options

struct SamplerOptions {
  std::string proximity = "neigh";
  int neighbor_order = 3;
  bool linear_months = false;
  std::optional<double> fix_rho;
  std::string profile = "desk";
  std::optional<int> chains;
  std::optional<long> iterations;
  std::optional<long> burn_in;
  std::optional<long> thin;
  std::uint64_t seed = 1;
  int threads = 0;
  double alpha_sd = 10.0;
  double sigma_shape = 1.0;
  double sigma_rate = 1.0;
  double gamma_sd = 1.0;
};

void add_sampler_options(CLI::App* sub, SamplerOptions& o) {
  sub->add_option("--proximity", o.proximity, "Month proximity: neigh or auto")
      ->check(CLI::IsMember({"neigh", "auto"}))
      ->capture_default_str();
  sub->add_option("--neighbor-order", o.neighbor_order, "Neighbourhood order for neigh")->capture_default_str();
  sub->add_flag("--linear-months", o.linear_months, "Do not wrap December to January");
  sub->add_option("--fix-rho", o.fix_rho, "Hold rho at this value (auto proximity)");
  sub->add_option("--profile", o.profile, "Sampler profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  sub->add_option("--chains", o.chains, "Override the number of chains");
  sub->add_option("--iterations", o.iterations, "Override iterations per chain");
  sub->add_option("--burn-in", o.burn_in, "Override burn-in iterations");
  sub->add_option("--thin", o.thin, "Override thinning interval");
  sub->add_option("--seed", o.seed, "Base seed; chain c uses seed + c")->capture_default_str();
  sub->add_option("--threads", o.threads, "Worker threads for chains (0 = all cores)")->capture_default_str();
  sub->add_option("--alpha-sd", o.alpha_sd, "Prior sd of alpha")->capture_default_str();
  sub->add_option("--sigma-shape", o.sigma_shape, "Gamma prior shape of sigma")->capture_default_str();
  sub->add_option("--sigma-rate", o.sigma_rate, "Gamma prior rate of sigma")->capture_default_str();
  sub->add_option("--gamma-sd", o.gamma_sd, "Prior sd of Gamma entries")->capture_default_str();
}

struct ResolvedSampler {
  ProximitySpec spec;
  HyperParams hyper;
  ChainConfig chain;
};

ResolvedSampler resolve(const SamplerOptions& o) {
  ResolvedSampler r;
  r.spec.kind = o.proximity == "auto" ? ProximityKind::autoregressive : ProximityKind::neighborhood;
  r.spec.neighbor_order = o.neighbor_order;
  r.spec.circular = !o.linear_months;
  r.spec.fixed_rho = o.fix_rho;
  r.spec.validate();
  r.hyper.alpha_prior_sd = o.alpha_sd;
  r.hyper.sigma_prior_shape = o.sigma_shape;
  r.hyper.sigma_prior_rate = o.sigma_rate;
  r.hyper.gamma_entry_prior_sd = o.gamma_sd;
  r.hyper.validate();
  r.chain = o.profile == "paper" ? ChainConfig::paper() : ChainConfig::desk();
  if (o.chains) r.chain.n_chains = *o.chains;
  if (o.iterations) r.chain.n_iterations = *o.iterations;
  if (o.burn_in) r.chain.burn_in = *o.burn_in;
  if (o.thin) r.chain.thin = *o.thin;
  r.chain.seed = o.seed;
  r.chain.n_threads = o.threads;
  r.chain.validate();
  return r;
}

json to_json(const ResolvedSampler& r, const std::string& profile) {
  json prox;
  prox["kind"] = r.spec.kind == ProximityKind::neighborhood ? "neighborhood" : "autoregressive";
  prox["neighbor_order"] = r.spec.neighbor_order;
  prox["circular"] = r.spec.circular;
  prox["fixed_rho"] = r.spec.fixed_rho ? json(*r.spec.fixed_rho) : json(nullptr);
  json hyper{{"alpha_prior_mean", r.hyper.alpha_prior_mean},
             {"alpha_prior_sd", r.hyper.alpha_prior_sd},
             {"sigma_prior_shape", r.hyper.sigma_prior_shape},
             {"sigma_prior_rate", r.hyper.sigma_prior_rate},
             {"gamma_entry_prior_sd", r.hyper.gamma_entry_prior_sd},
             {"s_bounds", {r.hyper.s_bounds.lower, r.hyper.s_bounds.upper}},
             {"lambda_bounds", {r.hyper.lambda_bounds.lower, r.hyper.lambda_bounds.upper}},
             {"rho_bounds", {r.hyper.rho_bounds.lower, r.hyper.rho_bounds.upper}}};
  json chain{{"profile", profile},
             {"n_chains", r.chain.n_chains},
             {"n_iterations", r.chain.n_iterations},
             {"burn_in", r.chain.burn_in},
             {"thin", r.chain.thin},
             {"seed", r.chain.seed},
             {"adapt_window", r.chain.adapt_window},
             {"target_accept", r.chain.target_accept},
             {"target_accept_vector", r.chain.target_accept_vector},
             {"n_threads", r.chain.n_threads}};
  return {{"proximity", prox}, {"hyper", hyper}, {"chain", chain}};
}

json sampler_diagnostics(const PosteriorSamples& samples) {
  json seeds = samples.seeds;
  auto acceptance = json::array();
  for (std::size_t c = 0; c < samples.accept_rates.size(); ++c) {
    json blocks;
    for (const auto& b : samples.accept_rates[c]) blocks[b.name] = {{"rate", b.rate()}, {"proposal_scale", std::exp(b.log_scale)}};
    acceptance.push_back({{"chain", c + 1}, {"blocks", blocks}});
  }
  json rhat;
  for (const auto& r : samples.rhat) rhat[r.parameter] = r.value ? json(*r.value) : json(nullptr);
  return {{"chain_seeds", seeds},
          {"draws_per_chain", samples.n_chains > 0 ? samples.draws.size() / samples.n_chains : 0},
          {"acceptance", acceptance},
          {"rhat", samples.rhat_applicable() ? rhat : json(nullptr)},
          {"rhat_above_1_1", samples.rhat_flagged()},
          {"warnings", samples.warnings}};
}

// ---------------------------------------------------------------- commands

struct SimulateOptions {
  std::string preset = "three-virus";
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string observed_mode = "product";
  std::optional<int> years;
  std::optional<int> samples_per_month;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  SimScenario sc = o.preset == "five-virus" ? scenario_five_virus() : scenario_three_virus();
  sc.observed_mode = o.observed_mode == "poisson" ? ObservedMode::poisson : ObservedMode::product;
  if (o.years) sc.n_years = *o.years;
  if (o.samples_per_month) sc.samples_per_month = *o.samples_per_month;
  sc.validate();
  SimOutput sim;
  try {
    sim = simulate(sc, o.seed);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw CommandFailure(kExitPreprocessing, e.what());
  }
  const fs::path dir(o.out);
  write_text_file(dir / "episodes.csv", render([&](std::ostream& s) { write_episodes(s, sim.records); }));
  write_text_file(dir / "panel.csv", render([&](std::ostream& s) { write_panel(s, sim.panel); }));
  write_text_file(dir / "truth.json", dump(truth_json(sim)));
  json manifest = manifest_base("simulate");
  manifest["config"] = {{"preset", o.preset},
                        {"seed", o.seed},
                        {"observed_mode", o.observed_mode},
                        {"n_years", sc.n_years},
                        {"samples_per_month", sc.samples_per_month}};
  manifest["outputs"] = {"episodes.csv", "panel.csv", "truth.json"};
  manifest["panel_shape"] = {kMonths, sc.n_years, sc.n_viruses};
  write_text_file(dir / "manifest.json", dump(manifest));
  write_timing(dir, "simulate", elapsed_seconds(start));
  out << "simulated " << sc.name << " (" << kMonths << "x" << sc.n_years << "x" << sc.n_viruses << ") -> "
      << dir.string() << "\n";
  return kExitOk;
}

struct ExpectedOptions {
  std::string episodes;
  std::string out = "out";
  double ridge_year = 1.0;
  std::string month_model = "factor";
  int aggregate_window = 0;
  std::vector<int> age_bands;
  bool allow_nonconverged = false;
  double expected_floor = 0.5;
};

int cmd_expected(const ExpectedOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (!(o.expected_floor > 0.0)) throw ConfigError("expected-floor must be positive");
  if (o.aggregate_window < 0) throw ConfigError("aggregate-window must be non-negative");
  std::ifstream in(o.episodes);
  if (!in) throw ConfigError("cannot open episode file " + o.episodes);

  ExpectedCountsOptions opts;
  opts.logistic.ridge_year = o.ridge_year;
  opts.logistic.age_band_edges = o.age_bands;
  opts.month_model = o.month_model == "per-month" ? MonthModel::per_month : MonthModel::factor;

  EpisodeTable table;
  ExpectedCountsResult result;
  try {
    table = read_episodes(in);
    if (o.aggregate_window > 0) table.records = aggregate_episodes(std::move(table.records), o.aggregate_window);
    result = compute_expected_counts(table, opts);
  } catch (const ConfigError&) {
    throw;
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw CommandFailure(kExitPreprocessing, e.what());
  }
  if (!result.all_converged() && !o.allow_nonconverged) {
    throw CommandFailure(kExitPreprocessing, "logistic fit did not converge (use --allow-nonconverged to continue)");
  }
  for (const auto& c : result.expected.zero_cells) {
    log_warning("no tests for " + table.virus_names[c.virus] + " in month " + std::to_string(c.month + 1) +
                " of " + std::to_string(result.counts.first_year + c.year) + "; expected count floored at " +
                format_double(o.expected_floor));
  }
  const CountPanel panel = build_panel(result, table.virus_names, o.expected_floor);

  const fs::path dir(o.out);
  write_text_file(dir / "expected.csv", render([&](std::ostream& s) { write_expected_csv(s, result); }));
  write_text_file(dir / "panel.csv", render([&](std::ostream& s) { write_panel(s, panel); }));
  json fits = json::array();
  for (const auto& per_virus : result.fits)
    for (const auto& f : per_virus) fits.push_back(vircov::to_json(f));
  json zero = json::array();
  for (const auto& c : result.expected.zero_cells)
    zero.push_back({{"month", c.month + 1}, {"year", result.counts.first_year + c.year},
                    {"virus", table.virus_names[c.virus]}});
  write_text_file(dir / "fits.json", dump({{"all_converged", result.all_converged()}, {"fits", fits},
                                           {"zero_expected_cells", zero}}));
  json manifest = manifest_base("expected");
  manifest["config"] = {{"episodes", o.episodes},
                        {"ridge_year", o.ridge_year},
                        {"month_model", o.month_model},
                        {"aggregate_window", o.aggregate_window},
                        {"age_bands", o.age_bands},
                        {"allow_nonconverged", o.allow_nonconverged},
                        {"expected_floor", o.expected_floor}};
  manifest["inputs"] = {{o.episodes, sha256_file(o.episodes)}};
  manifest["outputs"] = {"expected.csv", "panel.csv", "fits.json"};
  manifest["records"] = table.records.size();
  write_text_file(dir / "manifest.json", dump(manifest));
  write_timing(dir, "expected", elapsed_seconds(start));
  out << "expected counts for " << table.virus_names.size() << " viruses over " << panel.years() << " years -> "
      << dir.string() << "\n";
  return kExitOk;
}

CountPanel load_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open panel file " + path);
  return read_panel(in);
}

struct FitOptions {
  std::string panel;
  std::string out = "out";
  SamplerOptions sampler;
};

int cmd_fit(const FitOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto resolved = resolve(o.sampler);
  const CountPanel panel = load_panel(o.panel);
  PosteriorSamples samples;
  DicResult d;
  try {
    samples = run_chains(panel, resolved.spec, resolved.hyper, resolved.chain);
    d = dic(samples, panel);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw CommandFailure(kExitInference, e.what());
  }
  const fs::path dir(o.out);
  write_text_file(dir / "draws.csv", render([&](std::ostream& s) { write_draws(s, samples); }));
  json manifest = manifest_base("fit");
  manifest["config"] = to_json(resolved, o.sampler.profile);
  manifest["config"]["panel"] = o.panel;
  manifest["inputs"] = {{o.panel, sha256_file(o.panel)}};
  manifest["panel_shape"] = {kMonths, panel.years(), panel.viruses()};
  manifest["virus_names"] = panel.virus_names;
  manifest["first_year"] = panel.first_year;
  manifest["dic"] = vircov::to_json(d);
  manifest["sampler"] = sampler_diagnostics(samples);
  manifest["outputs"] = {"draws.csv"};
  write_text_file(dir / "manifest.json", dump(manifest));
  write_timing(dir, "fit", elapsed_seconds(start));
  out << "fit " << samples.draws.size() << " draws, DIC " << format_double(d.dic) << " -> " << dir.string() << "\n";
  return kExitOk;
}

struct ReportOptions {
  std::string draws;
  std::optional<std::string> panel;
  std::string out = "out";
  double level = 0.95;
  double fdr = 0.05;
  bool by_year = false;
  int first_cut = 1;
  SamplerOptions sampler;
};

int cmd_report(const ReportOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (!(o.level > 0.0 && o.level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (!(o.fdr > 0.0 && o.fdr < 1.0)) throw ConfigError("fdr must lie in (0, 1)");
  if (o.by_year && !o.panel) throw ConfigError("--by-year needs --panel to refit cumulative years");
  std::ifstream in(o.draws);
  if (!in) throw ConfigError("cannot open draws file " + o.draws);
  const DrawTable table = read_draws(in);
  if (table.draws.empty()) throw CommandFailure(kExitInference, "draws file contains no draws");

  std::optional<CountPanel> panel;
  if (o.panel) panel = load_panel(*o.panel);
  std::vector<std::string> names;
  int first_year = 0;
  if (panel) {
    if (panel->viruses() != table.viruses || panel->years() != table.years) {
      throw SchemaError("panel dimensions do not match the draws");
    }
    names = panel->virus_names;
    first_year = panel->first_year;
  } else {
    for (int v = 0; v < table.viruses; ++v) names.push_back("virus" + std::to_string(v + 1));
  }

  const fs::path dir(o.out);
  json manifest = manifest_base("report");
  manifest["config"] = {{"draws", o.draws}, {"panel", o.panel ? json(*o.panel) : json(nullptr)},
                        {"level", o.level}, {"fdr", o.fdr}, {"by_year", o.by_year}};
  manifest["inputs"] = {{o.draws, sha256_file(o.draws)}};
  if (o.panel) manifest["inputs"][*o.panel] = sha256_file(*o.panel);
  json outputs = {"covariance.json", "covariance.csv", "rr_summary.csv"};

  CovarianceReport report;
  std::vector<RiskCell> rr;
  std::vector<RollingCut> cuts;
  try {
    report = covariance_report(table.draws, names, o.level, o.fdr);
    rr = relative_risk_summary(table.draws, o.level);
    if (o.by_year) {
      const auto resolved = resolve(o.sampler);
      manifest["config"]["first_cut"] = o.first_cut;
      manifest["config"]["rolling"] = to_json(resolved, o.sampler.profile);
      cuts = rolling_covariance(*panel, resolved.spec, resolved.hyper, resolved.chain, o.first_cut, o.level, o.fdr);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw CommandFailure(kExitInference, e.what());
  }

  write_text_file(dir / "covariance.json", dump(vircov::to_json(report)));
  write_text_file(dir / "covariance.csv", render([&](std::ostream& s) { write_covariance_csv(s, report); }));
  write_text_file(dir / "rr_summary.csv", render([&](std::ostream& s) { write_rr_csv(s, rr, names, first_year); }));
  if (o.by_year) {
    write_text_file(dir / "rolling.csv", render([&](std::ostream& s) { write_rolling_csv(s, cuts); }));
    json rolling = json::array();
    for (const auto& c : cuts) {
      json sig = json::array();
      for (const auto& [a, b] : c.report.significant_pairs()) sig.push_back({a + 1, b + 1});
      rolling.push_back({{"years", c.years}, {"significant_pairs", sig}, {"dic", vircov::to_json(c.dic)},
                         {"report", vircov::to_json(c.report)}});
    }
    write_text_file(dir / "rolling.json", dump(rolling));
    outputs.push_back("rolling.csv");
    outputs.push_back("rolling.json");
  }
  manifest["outputs"] = outputs;
  write_text_file(dir / "manifest.json", dump(manifest));
  write_timing(dir, "report", elapsed_seconds(start));

  out << "covariance pairs significant after FDR correction:";
  const auto sig = report.significant_pairs();
  if (sig.empty()) out << " none";
  for (const auto& [a, b] : sig) out << " (" << names[a] << "," << names[b] << ")";
  out << "\n";
  return kExitOk;
}

}  // namespace

std::string sha256_file(const std::string& path) {
  const std::string data = read_text_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed for " + path);
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian MCAR analysis of multi-virus monthly counts", "vircov"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset from a preset scenario");
  sim_cmd->add_option("--preset", sim.preset, "three-virus or five-virus")
      ->check(CLI::IsMember({"three-virus", "five-virus"}))
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "Output directory")->capture_default_str();
  sim_cmd->add_option("--observed-mode", sim.observed_mode, "product or poisson")
      ->check(CLI::IsMember({"product", "poisson"}))
      ->capture_default_str();
  sim_cmd->add_option("--years", sim.years, "Override the number of years");
  sim_cmd->add_option("--samples-per-month", sim.samples_per_month, "Override samples per month");

  ExpectedOptions exp;
  auto* exp_cmd = app.add_subcommand("expected", "Expected counts from an episode file");
  exp_cmd->add_option("--episodes", exp.episodes, "Episode CSV")->required();
  exp_cmd->add_option("--out", exp.out, "Output directory")->capture_default_str();
  exp_cmd->add_option("--ridge-year", exp.ridge_year, "L2 penalty on year coefficients")->capture_default_str();
  exp_cmd->add_option("--month-model", exp.month_model, "factor or per-month")
      ->check(CLI::IsMember({"factor", "per-month"}))
      ->capture_default_str();
  exp_cmd->add_option("--aggregate-window", exp.aggregate_window,
                      "Merge a patient's samples within this many days (0 = input is already episodes)")
      ->capture_default_str();
  exp_cmd->add_option("--age-bands", exp.age_bands, "Age band lower edges; empty = linear age")->delimiter(',');
  exp_cmd->add_flag("--allow-nonconverged", exp.allow_nonconverged, "Continue when a fit does not converge");
  exp_cmd->add_option("--expected-floor", exp.expected_floor, "Expected count for cells with no tests")
      ->capture_default_str();

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Run the MCMC sampler on a panel");
  fit_cmd->add_option("--panel", fit.panel, "Panel CSV")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->capture_default_str();
  add_sampler_options(fit_cmd, fit.sampler);

  ReportOptions rep;
  auto* rep_cmd = app.add_subcommand("report", "Summaries and covariance significance from posterior draws");
  rep_cmd->add_option("--draws", rep.draws, "Draws CSV")->required();
  rep_cmd->add_option("--panel", rep.panel, "Panel CSV (virus names, calendar years, --by-year)");
  rep_cmd->add_option("--out", rep.out, "Output directory")->capture_default_str();
  rep_cmd->add_option("--level", rep.level, "Credible interval level")->capture_default_str();
  rep_cmd->add_option("--fdr", rep.fdr, "False discovery rate")->capture_default_str();
  rep_cmd->add_flag("--by-year", rep.by_year, "Refit on years 1..k for every k and report each cut");
  rep_cmd->add_option("--first-cut", rep.first_cut, "Smallest number of years for --by-year")->capture_default_str();
  add_sampler_options(rep_cmd, rep.sampler);

  std::string config_path;
  for (auto* sub : {sim_cmd, exp_cmd, fit_cmd, rep_cmd}) {
    sub->add_option("--config", config_path, "Flat key = value file of option defaults");
  }

  try {
    std::vector<std::string> effective = args;
    if (!args.empty()) {
      CLI::App* sub = nullptr;
      for (auto* s : {sim_cmd, exp_cmd, fit_cmd, rep_cmd})
        if (s->get_name() == args.front()) sub = s;
      for (std::size_t i = 0; sub && i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].starts_with("--config=")) path = args[i].substr(9);
        if (!path.empty()) effective = merge_config(*sub, effective, path);
      }
    }
    std::vector<std::string> reversed(effective.rbegin(), effective.rend());
    app.parse(reversed);

    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*exp_cmd) return cmd_expected(exp, out);
    if (*fit_cmd) return cmd_fit(fit, out);
    return cmd_report(rep, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const CommandFailure& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vircov::cli
