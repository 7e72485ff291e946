#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vircov/model.hpp"

namespace vircov {

/// Which update blocks run each sweep. Disabled blocks stay at their initial value.
struct BlockMask {
  bool alpha = true;
  bool phi = true;
  /// Joint move alpha_v + c, phi_{..v} - c; leaves the likelihood unchanged.
  bool level_shift = true;
  bool s = true;
  bool lambda = true;
  bool rho = true;
  bool sigma = true;
  bool gamma = true;
};

struct ChainConfig {
  int n_chains = 5;
  long n_iterations = 500'000;
  long burn_in = 300'000;
  long thin = 100;
  std::uint64_t seed = 1;
  long adapt_window = 50;
  double target_accept = 0.44;
  /// Target for the 12-dimensional phi month-vector proposals.
  double target_accept_vector = 0.234;
  /// Per-chain seeds; when empty chain c uses seed + c.
  std::vector<std::uint64_t> chain_seeds;
  /// Worker threads for chains; 0 means one per hardware thread.
  int n_threads = 0;
  BlockMask updates;
  std::optional<ModelState> initial_state;
  /// Recompute the full log posterior after every sweep and compare it with the value
  /// tracked through the accepted moves; throws std::logic_error on a mismatch. Slow.
  bool audit = false;

  /// 5 chains, 500k iterations, 300k burn-in, thin 100.
  static ChainConfig paper();
  /// 5 chains, 50k iterations, 30k burn-in, thin 20.
  static ChainConfig desk();

  void validate() const;
  std::uint64_t seed_for_chain(int chain) const;
  long draws_per_chain() const { return (n_iterations - burn_in) / thin; }
};

struct BlockStats {
  std::string name;
  long proposed = 0;
  long accepted = 0;
  double log_scale = 0.0;

  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / proposed; }
  /// Blocks that propose a single scalar; the phi month vectors are not scalar.
  bool scalar = true;
};

struct ChainResult {
  int chain = 0;
  std::uint64_t seed = 0;
  std::vector<ModelState> draws;
  std::vector<long> iterations;
  /// Acceptance counted after burn-in; log_scale is the frozen proposal scale.
  std::vector<BlockStats> blocks;
};

struct RhatEntry {
  std::string parameter;
  /// Empty when the parameter does not vary within chains (fixed or held).
  std::optional<double> value;
};

struct PosteriorSamples {
  int n_chains = 0;
  int years = 0;
  int viruses = 0;
  /// Chains concatenated in chain order.
  std::vector<ModelState> draws;
  std::vector<int> chain;
  std::vector<long> iteration;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<BlockStats>> accept_rates;
  /// Empty with a single chain: the diagnostic is undefined.
  std::vector<RhatEntry> rhat;
  std::vector<std::string> warnings;

  bool rhat_applicable() const { return n_chains > 1; }
  std::vector<std::string> rhat_flagged(double threshold = 1.1) const;
};

ChainResult run_chain(const CountPanel& panel, const ProximitySpec& spec, const HyperParams& hyper,
                      const ChainConfig& config, int chain_index);

/// Runs config.n_chains chains (concurrently when threads allow) and computes R-hat.
/// Results do not depend on the thread count.
PosteriorSamples run_chains(const CountPanel& panel, const ProximitySpec& spec, const HyperParams& hyper,
                            const ChainConfig& config);

/// Scalar parameter names in flatten order: alpha[v], phi[m,t,v], s[v], lambda, rho,
/// sigma[v], gamma[i,j] (strictly lower); indices are 1-based.
std::vector<std::string> parameter_names(int years, int viruses);
std::vector<double> flatten(const ModelState& state);
ModelState unflatten(std::span<const double> values, int years, int viruses);

/// Potential scale reduction over equal-length chains; empty if undefined.
std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& chains);

struct DicResult {
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  double p_d = 0.0;
  double dic = 0.0;
};

double deviance(const ModelState& state, const CountPanel& panel);
/// Elementwise posterior mean of every parameter.
ModelState posterior_mean_state(std::span<const ModelState> draws);
DicResult dic_from_deviances(std::span<const double> deviances, double deviance_at_mean);
/// Requires at least 10 draws.
DicResult dic(std::span<const ModelState> draws, const CountPanel& panel);
DicResult dic(const PosteriorSamples& samples, const CountPanel& panel);

}  // namespace vircov
