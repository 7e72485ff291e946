#include "vircov/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>
#include <thread>

#include "vircov/errors.hpp"
#include "vircov/log.hpp"
#include "vircov/rng.hpp"

namespace vircov {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Shape constant added to the observed count when scaling phi proposals; stands in
// for the prior's conditional precision so zero counts do not get unit-scale steps.
constexpr double kPhiProposalShape = 5.0;

double logit_to(double u, const UniformBounds& b) {
  const double p = 1.0 / (1.0 + std::exp(-u));
  return b.lower + (b.upper - b.lower) * p;
}

double to_logit(double x, const UniformBounds& b) {
  const double p = (x - b.lower) / (b.upper - b.lower);
  return std::log(p / (1.0 - p));
}

// log |dx/du| for x = lower + (upper - lower) * logistic(u).
double logit_jacobian(double x, const UniformBounds& b) {
  return std::log((x - b.lower) * (b.upper - x) / (b.upper - b.lower));
}

double normal_log_kernel(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z;
}

double gamma_log_kernel(double x, double shape, double rate) { return (shape - 1.0) * std::log(x) - rate * x; }

std::string idx(std::initializer_list<int> ids) {
  std::string s = "[";
  bool first = true;
  for (int i : ids) {
    if (!first) s += ',';
    s += std::to_string(i);
    first = false;
  }
  return s + "]";
}

class ChainRunner {
 public:
  ChainRunner(const CountPanel& panel, const ProximitySpec& spec, const HyperParams& hyper,
              const ChainConfig& config, int chain_index)
      : panel_(panel), spec_(spec), hyper_(hyper), config_(config), chain_index_(chain_index),
        rng_(config.seed_for_chain(chain_index)), nv_(panel.viruses()), nt_(panel.years()) {
    state_ = config.initial_state ? *config.initial_state : ModelState::initial(panel);
    if (state_.viruses() != nv_ || state_.years() != nt_) {
      throw ConfigError("initial state does not match the panel dimensions");
    }
    if (spec_.fixed_rho) state_.rho = *spec_.fixed_rho;
    if (!state_.gamma.has_unit_diagonal(1e-12)) throw ConfigError("initial Gamma must have a unit diagonal");

    const double lp = log_posterior(state_, panel_, spec_, hyper_);
    if (!std::isfinite(lp)) {
      throw NonFiniteDensity("initial state has zero posterior density (chain " + std::to_string(chain_index) + ")");
    }
    tracked_ = lp;
    init_cache();
    init_blocks();
  }

  ChainResult run() {
    ChainResult result;
    result.chain = chain_index_;
    result.seed = config_.seed_for_chain(chain_index_);
    result.draws.reserve(static_cast<std::size_t>(config_.draws_per_chain()));
    long window = 0;
    for (long iter = 1; iter <= config_.n_iterations; ++iter) {
      const bool burning = iter <= config_.burn_in;
      sweep(!burning);
      if (config_.audit) audit(iter);
      if (burning && ++window == config_.adapt_window) {
        adapt(iter / config_.adapt_window);
        window = 0;
      }
      if (!burning && (iter - config_.burn_in) % config_.thin == 0) {
        result.draws.push_back(state_);
        result.iterations.push_back(iter);
      }
    }
    for (const auto& b : blocks_) result.blocks.push_back(b.stats);
    return result;
  }

 private:
  struct Block {
    BlockStats stats;
    double target = 0.44;
    long window_proposed = 0;
    long window_accepted = 0;
  };

  double scale(std::size_t b) const { return std::exp(blocks_[b].stats.log_scale); }

  void record(std::size_t b, bool accepted, bool count) {
    auto& blk = blocks_[b];
    ++blk.window_proposed;
    if (accepted) ++blk.window_accepted;
    if (count) {
      ++blk.stats.proposed;
      if (accepted) ++blk.stats.accepted;
    }
  }

  // d_target is the change in log posterior, d_jacobian the proposal's transform term.
  bool accept(double d_target, double d_jacobian = 0.0) {
    const double log_ratio = d_target + d_jacobian;
    if (std::isnan(log_ratio)) return false;
    const bool ok = log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio;
    if (ok) tracked_ += d_target;
    return ok;
  }

  // Robbins-Monro step on the log proposal scale toward each block's target rate.
  void adapt(long window_number) {
    const double gain = 1.0 / std::sqrt(static_cast<double>(window_number));
    for (auto& blk : blocks_) {
      if (blk.window_proposed == 0) continue;
      const double rate = static_cast<double>(blk.window_accepted) / blk.window_proposed;
      blk.stats.log_scale += gain * (rate - blk.target);
      blk.window_proposed = 0;
      blk.window_accepted = 0;
    }
  }

  void audit(long iter) const {
    const double direct = log_posterior(state_, panel_, spec_, hyper_);
    if (std::abs(direct - tracked_) > 1e-7 * std::max(1.0, std::abs(direct))) {
      throw std::logic_error("sampler audit failed at iteration " + std::to_string(iter) + ": tracked " +
                             std::to_string(tracked_) + ", direct " + std::to_string(direct));
    }
  }

  void init_blocks() {
    const auto& up = config_.updates;
    auto add = [&](std::string name, double initial_scale, bool vector_block) {
      Block b;
      b.stats.name = std::move(name);
      b.stats.log_scale = std::log(initial_scale);
      b.stats.scalar = !vector_block;
      b.target = vector_block ? config_.target_accept_vector : config_.target_accept;
      blocks_.push_back(b);
      return blocks_.size() - 1;
    };
    for (int v = 0; v < nv_; ++v)
      if (up.alpha) alpha_block_.push_back(add("alpha" + idx({v + 1}), 0.05, false));
    if (up.phi)
      for (int t = 0; t < nt_; ++t)
        for (int v = 0; v < nv_; ++v) phi_block_.push_back(add("phi" + idx({t + 1, v + 1}), 1.0, true));
    if (up.level_shift && up.alpha && up.phi)
      for (int v = 0; v < nv_; ++v) shift_block_.push_back(add("shift" + idx({v + 1}), 0.1, false));
    if (up.s)
      for (int v = 0; v < nv_; ++v) s_block_.push_back(add("s" + idx({v + 1}), 0.5, false));
    if (up.lambda) lambda_block_ = add("lambda", 0.5, false);
    if (up.rho && spec_.estimates_rho()) rho_block_ = add("rho", 0.5, false);
    if (up.sigma)
      for (int v = 0; v < nv_; ++v) sigma_block_.push_back(add("sigma" + idx({v + 1}), 0.1, false));
    if (up.gamma)
      for (int i = 1; i < nv_; ++i)
        for (int j = 0; j < i; ++j) gamma_block_.push_back({i, j, add("gamma" + idx({i + 1, j + 1}), 0.1, false)});
  }

  void init_cache() {
    omega_ = build_omega(build_w(spec_, state_.rho), state_.lambda);
    logdet_omega_ = log_det_spd(omega_);
    lambda_prec_ = precision_from_cholesky(state_.sigma_diag, state_.gamma);
    mu_ = Cube<double>(nt_, nv_);
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv_; ++v)
          mu_(m, t, v) = panel_.expected(m, t, v) * std::exp(state_.alpha[v] + state_.phi(m, t, v));
    y_total_.assign(nv_, 0.0);
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv_; ++v) y_total_[v] += panel_.observed(m, t, v);
    phi_step_ = Cube<double>(nt_, nv_);
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv_; ++v) phi_step_(m, t, v) = 1.0 / std::sqrt(panel_.observed(m, t, v) + kPhiProposalShape);
    gram_ = residual_gram(state_.phi, state_.s, omega_);
  }

  // S = sum_t R_t^T Omega R_t with R_t the 12 x V residual phi_t - s * phi_{t-1}.
  DenseMatrix residual_gram(const Cube<double>& phi, const std::vector<double>& s, const DenseMatrix& omega) const {
    DenseMatrix g(nv_, nv_);
    std::vector<double> r(static_cast<std::size_t>(kMonths) * nv_);
    std::vector<double> omr(r.size());
    for (int t = 0; t < nt_; ++t) {
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv_; ++v)
          r[m * nv_ + v] = phi(m, t, v) - (t == 0 ? 0.0 : s[v] * phi(m, t - 1, v));
      std::fill(omr.begin(), omr.end(), 0.0);
      for (int m = 0; m < kMonths; ++m)
        for (int mp = 0; mp < kMonths; ++mp) {
          const double o = omega(m, mp);
          if (o == 0.0) continue;
          for (int v = 0; v < nv_; ++v) omr[m * nv_ + v] += o * r[mp * nv_ + v];
        }
      for (int m = 0; m < kMonths; ++m)
        for (int v = 0; v < nv_; ++v) {
          const double rv = r[m * nv_ + v];
          for (int u = 0; u < nv_; ++u) g(v, u) += rv * omr[m * nv_ + u];
        }
    }
    return g;
  }

  static double frobenius_dot(const DenseMatrix& a, const DenseMatrix& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.entries().size(); ++k) acc += a.entries()[k] * b.entries()[k];
    return acc;
  }

  // Terms of log p(phi) that vary with Omega, Lambda and the residuals.
  double phi_prior_terms(double logdet_omega, double logdet_lambda, double quad) const {
    return 0.5 * nt_ * (nv_ * logdet_omega + kMonths * logdet_lambda) - 0.5 * quad;
  }

  double logdet_lambda(const std::vector<double>& sigma) const {
    double acc = 0.0;
    for (double sd : sigma) acc += std::log(sd);
    return -2.0 * acc;
  }

  void sweep(bool count) {
    if (config_.updates.alpha)
      for (int v = 0; v < nv_; ++v) update_alpha(v, count);
    if (config_.updates.phi) {
      for (int t = 0; t < nt_; ++t)
        for (int v = 0; v < nv_; ++v) update_phi(t, v, count);
      gram_ = residual_gram(state_.phi, state_.s, omega_);
    }
    for (std::size_t v = 0; v < shift_block_.size(); ++v) update_shift(static_cast<int>(v), count);
    for (std::size_t v = 0; v < s_block_.size(); ++v) update_s(static_cast<int>(v), count);
    if (lambda_block_) update_lambda(count);
    if (rho_block_) update_rho(count);
    for (std::size_t v = 0; v < sigma_block_.size(); ++v) update_sigma(static_cast<int>(v), count);
    for (const auto& g : gamma_block_) update_gamma(g, count);
  }

  void update_alpha(int v, bool count) {
    const std::size_t b = alpha_block_[v];
    const double step = scale(b) * rng_.normal();
    double mu_total = 0.0;
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m) mu_total += mu_(m, t, v);
    const double a_old = state_.alpha[v];
    const double a_new = a_old + step;
    const double d_ll = y_total_[v] * step - mu_total * std::expm1(step);
    const double d_prior = normal_log_kernel(a_new, hyper_.alpha_prior_mean, hyper_.alpha_prior_sd) -
                           normal_log_kernel(a_old, hyper_.alpha_prior_mean, hyper_.alpha_prior_sd);
    const bool ok = accept(d_ll + d_prior);
    record(b, ok, count);
    if (!ok) return;
    state_.alpha[v] = a_new;
    const double factor = std::exp(step);
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m) mu_(m, t, v) *= factor;
  }

  // (R_t Lambda)_{., v} for the current phi.
  void residual_times_lambda_column(int t, int v, std::array<double, kMonths>& out) const {
    for (int m = 0; m < kMonths; ++m) {
      double acc = 0.0;
      for (int u = 0; u < nv_; ++u) {
        const double r = state_.phi(m, t, u) - (t == 0 ? 0.0 : state_.s[u] * state_.phi(m, t - 1, u));
        acc += r * lambda_prec_(u, v);
      }
      out[m] = acc;
    }
  }

  double omega_bilinear(const std::array<double, kMonths>& a, const std::array<double, kMonths>& b) const {
    double acc = 0.0;
    for (int m = 0; m < kMonths; ++m) {
      double row = 0.0;
      for (int mp = 0; mp < kMonths; ++mp) row += omega_(m, mp) * b[mp];
      acc += a[m] * row;
    }
    return acc;
  }

  void update_phi(int t, int v, bool count) {
    const std::size_t b = phi_block_[static_cast<std::size_t>(t) * nv_ + v];
    const double sc = scale(b);
    std::array<double, kMonths> delta{};
    for (int m = 0; m < kMonths; ++m) delta[m] = sc * phi_step_(m, t, v) * rng_.normal();

    double d_ll = 0.0;
    std::array<double, kMonths> ex{};
    for (int m = 0; m < kMonths; ++m) {
      ex[m] = std::expm1(delta[m]);
      d_ll += panel_.observed(m, t, v) * delta[m] - mu_(m, t, v) * ex[m];
    }

    const double lvv = lambda_prec_(v, v);
    const double dod = omega_bilinear(delta, delta);
    std::array<double, kMonths> rl{};
    residual_times_lambda_column(t, v, rl);
    double d_quad = 2.0 * omega_bilinear(delta, rl) + lvv * dod;
    if (t + 1 < nt_) {
      const double sv = state_.s[v];
      residual_times_lambda_column(t + 1, v, rl);
      d_quad += -2.0 * sv * omega_bilinear(delta, rl) + lvv * sv * sv * dod;
    }
    const bool ok = accept(d_ll - 0.5 * d_quad);
    record(b, ok, count);
    if (!ok) return;
    for (int m = 0; m < kMonths; ++m) {
      state_.phi(m, t, v) += delta[m];
      mu_(m, t, v) *= 1.0 + ex[m];
    }
  }

  void update_shift(int v, bool count) {
    const std::size_t b = shift_block_[v];
    const double c = scale(b) * rng_.normal();
    Cube<double> phi = state_.phi;
    for (int t = 0; t < nt_; ++t)
      for (int m = 0; m < kMonths; ++m) phi(m, t, v) -= c;
    const DenseMatrix gram = residual_gram(phi, state_.s, omega_);
    const double d_prior_phi = -0.5 * (frobenius_dot(lambda_prec_, gram) - frobenius_dot(lambda_prec_, gram_));
    const double a_old = state_.alpha[v];
    const double d_prior = normal_log_kernel(a_old + c, hyper_.alpha_prior_mean, hyper_.alpha_prior_sd) -
                           normal_log_kernel(a_old, hyper_.alpha_prior_mean, hyper_.alpha_prior_sd);
    const bool ok = accept(d_prior_phi + d_prior);
    record(b, ok, count);
    if (!ok) return;
    // alpha + phi is unchanged, so mu stays valid.
    state_.alpha[v] = a_old + c;
    state_.phi = std::move(phi);
    gram_ = gram;
  }

  void update_s(int v, bool count) {
    const std::size_t b = s_block_[v];
    const auto& bounds = hyper_.s_bounds;
    const double s_old = state_.s[v];
    const double s_new = logit_to(to_logit(s_old, bounds) + scale(b) * rng_.normal(), bounds);
    bool ok = false;
    DenseMatrix gram;
    if (s_new > bounds.lower && s_new < bounds.upper) {
      std::vector<double> s = state_.s;
      s[v] = s_new;
      gram = residual_gram(state_.phi, s, omega_);
      ok = accept(-0.5 * (frobenius_dot(lambda_prec_, gram) - frobenius_dot(lambda_prec_, gram_)),
                  logit_jacobian(s_new, bounds) - logit_jacobian(s_old, bounds));
    }
    record(b, ok, count);
    if (!ok) return;
    state_.s[v] = s_new;
    gram_ = std::move(gram);
  }

  // Shared by lambda and rho: both only move Omega.
  bool try_omega(double lambda, double rho) {
    DenseMatrix omega;
    try {
      omega = build_omega(build_w(spec_, rho), lambda);
    } catch (const NotPositiveDefinite&) {
      return false;
    } catch (const ConfigError&) {
      return false;
    }
    pending_logdet_omega_ = log_det_spd(omega);
    pending_gram_ = residual_gram(state_.phi, state_.s, omega);
    pending_omega_ = std::move(omega);
    return true;
  }

  double omega_move_delta() const {
    const double quad_old = frobenius_dot(lambda_prec_, gram_);
    const double quad_new = frobenius_dot(lambda_prec_, pending_gram_);
    const double ld = logdet_lambda(state_.sigma_diag);
    return phi_prior_terms(pending_logdet_omega_, ld, quad_new) - phi_prior_terms(logdet_omega_, ld, quad_old);
  }

  void commit_omega() {
    omega_ = std::move(pending_omega_);
    logdet_omega_ = pending_logdet_omega_;
    gram_ = std::move(pending_gram_);
  }

  void update_lambda(bool count) {
    const std::size_t b = *lambda_block_;
    const auto& bounds = hyper_.lambda_bounds;
    const double old_v = state_.lambda;
    const double new_v = logit_to(to_logit(old_v, bounds) + scale(b) * rng_.normal(), bounds);
    bool ok = false;
    if (new_v > bounds.lower && new_v < bounds.upper && try_omega(new_v, state_.rho)) {
      ok = accept(omega_move_delta(), logit_jacobian(new_v, bounds) - logit_jacobian(old_v, bounds));
    }
    record(b, ok, count);
    if (!ok) return;
    state_.lambda = new_v;
    commit_omega();
  }

  void update_rho(bool count) {
    const std::size_t b = *rho_block_;
    const auto& bounds = hyper_.rho_bounds;
    const double old_v = state_.rho;
    const double new_v = logit_to(to_logit(old_v, bounds) + scale(b) * rng_.normal(), bounds);
    bool ok = false;
    if (new_v > bounds.lower && new_v < bounds.upper && try_omega(state_.lambda, new_v)) {
      ok = accept(omega_move_delta(), logit_jacobian(new_v, bounds) - logit_jacobian(old_v, bounds));
    }
    record(b, ok, count);
    if (!ok) return;
    state_.rho = new_v;
    commit_omega();
  }

  // Delta of log p(phi) when Lambda changes and Omega, residuals stay put.
  double lambda_move_delta(const DenseMatrix& lambda_new, const std::vector<double>& sigma_new) const {
    return phi_prior_terms(logdet_omega_, logdet_lambda(sigma_new), frobenius_dot(lambda_new, gram_)) -
           phi_prior_terms(logdet_omega_, logdet_lambda(state_.sigma_diag), frobenius_dot(lambda_prec_, gram_));
  }

  void update_sigma(int v, bool count) {
    const std::size_t b = sigma_block_[v];
    const double old_v = state_.sigma_diag[v];
    const double new_v = old_v * std::exp(scale(b) * rng_.normal());
    bool ok = false;
    DenseMatrix lam;
    std::vector<double> sigma = state_.sigma_diag;
    if (new_v > 0.0 && std::isfinite(new_v)) {
      sigma[v] = new_v;
      lam = precision_from_cholesky(sigma, state_.gamma);
      const double d = lambda_move_delta(lam, sigma) +
                       gamma_log_kernel(new_v, hyper_.sigma_prior_shape, hyper_.sigma_prior_rate) -
                       gamma_log_kernel(old_v, hyper_.sigma_prior_shape, hyper_.sigma_prior_rate);
      ok = accept(d, std::log(new_v) - std::log(old_v));
    }
    record(b, ok, count);
    if (!ok) return;
    state_.sigma_diag = std::move(sigma);
    lambda_prec_ = std::move(lam);
  }

  struct GammaBlock {
    int i;
    int j;
    std::size_t block;
  };

  void update_gamma(const GammaBlock& g, bool count) {
    const double old_v = state_.gamma(g.i, g.j);
    const double new_v = old_v + scale(g.block) * rng_.normal();
    LowerTriangularMatrix gamma = state_.gamma;
    gamma.set(g.i, g.j, new_v);
    DenseMatrix lam = precision_from_cholesky(state_.sigma_diag, gamma);
    const double d = lambda_move_delta(lam, state_.sigma_diag) +
                     normal_log_kernel(new_v, 0.0, hyper_.gamma_entry_prior_sd) -
                     normal_log_kernel(old_v, 0.0, hyper_.gamma_entry_prior_sd);
    const bool ok = accept(d);
    record(g.block, ok, count);
    if (!ok) return;
    state_.gamma = std::move(gamma);
    lambda_prec_ = std::move(lam);
  }

  const CountPanel& panel_;
  const ProximitySpec& spec_;
  const HyperParams& hyper_;
  const ChainConfig& config_;
  int chain_index_;
  Rng rng_;
  double tracked_ = 0.0;
  int nv_;
  int nt_;
  ModelState state_;

  DenseMatrix omega_;
  double logdet_omega_ = 0.0;
  DenseMatrix lambda_prec_;
  DenseMatrix gram_;
  Cube<double> mu_;
  Cube<double> phi_step_;
  std::vector<double> y_total_;

  DenseMatrix pending_omega_;
  double pending_logdet_omega_ = 0.0;
  DenseMatrix pending_gram_;

  std::vector<Block> blocks_;
  std::vector<std::size_t> alpha_block_;
  std::vector<std::size_t> phi_block_;
  std::vector<std::size_t> shift_block_;
  std::vector<std::size_t> s_block_;
  std::optional<std::size_t> lambda_block_;
  std::optional<std::size_t> rho_block_;
  std::vector<std::size_t> sigma_block_;
  std::vector<GammaBlock> gamma_block_;
};

}  // namespace

ChainConfig ChainConfig::paper() { return ChainConfig{}; }

ChainConfig ChainConfig::desk() {
  ChainConfig c;
  c.n_iterations = 50'000;
  c.burn_in = 30'000;
  c.thin = 20;
  return c;
}

void ChainConfig::validate() const {
  if (n_chains < 1) throw ConfigError("n_chains must be at least 1");
  if (n_iterations < 1) throw ConfigError("n_iterations must be positive");
  if (burn_in < 0 || burn_in >= n_iterations) throw ConfigError("burn_in must satisfy 0 <= burn_in < n_iterations");
  if (thin < 1) throw ConfigError("thin must be at least 1");
  if (adapt_window < 1) throw ConfigError("adapt_window must be at least 1");
  if (!(target_accept > 0.0 && target_accept < 1.0) || !(target_accept_vector > 0.0 && target_accept_vector < 1.0)) {
    throw ConfigError("target acceptance rates must lie in (0, 1)");
  }
  if (!chain_seeds.empty() && static_cast<int>(chain_seeds.size()) != n_chains) {
    throw ConfigError("chain_seeds must list one seed per chain");
  }
  if (n_threads < 0) throw ConfigError("n_threads must be non-negative");
}

std::uint64_t ChainConfig::seed_for_chain(int chain) const {
  if (!chain_seeds.empty()) return chain_seeds.at(static_cast<std::size_t>(chain));
  return seed + static_cast<std::uint64_t>(chain);
}

std::vector<std::string> PosteriorSamples::rhat_flagged(double threshold) const {
  std::vector<std::string> out;
  for (const auto& r : rhat)
    if (r.value && *r.value > threshold) out.push_back(r.parameter);
  return out;
}

ChainResult run_chain(const CountPanel& panel, const ProximitySpec& spec, const HyperParams& hyper,
                      const ChainConfig& config, int chain_index) {
  panel.validate();
  spec.validate();
  hyper.validate();
  config.validate();
  if (chain_index < 0 || chain_index >= config.n_chains) throw ConfigError("chain index out of range");
  ChainRunner runner(panel, spec, hyper, config, chain_index);
  return runner.run();
}

PosteriorSamples run_chains(const CountPanel& panel, const ProximitySpec& spec, const HyperParams& hyper,
                            const ChainConfig& config) {
  config.validate();
  PosteriorSamples out;
  out.n_chains = config.n_chains;
  out.years = panel.years();
  out.viruses = panel.viruses();

  std::set<std::uint64_t> seen;
  for (int c = 0; c < config.n_chains; ++c) {
    const auto seed = config.seed_for_chain(c);
    out.seeds.push_back(seed);
    if (!seen.insert(seed).second) {
      const std::string msg = "chains share seed " + std::to_string(seed) + "; they will produce identical draws";
      out.warnings.push_back(msg);
      log_warning(msg);
    }
  }

  std::vector<ChainResult> chains(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = std::min<int>(config.n_chains, config.n_threads > 0 ? config.n_threads : static_cast<int>(hw));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int c = next++; c < config.n_chains; c = next++) {
      try {
        chains[c] = run_chain(panel, spec, hyper, config, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& ch : chains) {
    for (std::size_t k = 0; k < ch.draws.size(); ++k) {
      out.draws.push_back(std::move(ch.draws[k]));
      out.chain.push_back(ch.chain);
      out.iteration.push_back(ch.iterations[k]);
    }
    out.accept_rates.push_back(std::move(ch.blocks));
  }

  if (config.n_chains > 1) {
    const auto names = parameter_names(out.years, out.viruses);
    const std::size_t per_chain = static_cast<std::size_t>(config.draws_per_chain());
    std::vector<std::vector<std::vector<double>>> by_param(names.size(),
                                                           std::vector<std::vector<double>>(config.n_chains));
    for (std::size_t k = 0; k < out.draws.size(); ++k) {
      const auto flat = flatten(out.draws[k]);
      for (std::size_t p = 0; p < flat.size(); ++p) by_param[p][out.chain[k]].push_back(flat[p]);
    }
    for (std::size_t p = 0; p < names.size(); ++p) {
      out.rhat.push_back({names[p], per_chain >= 2 ? gelman_rubin(by_param[p]) : std::nullopt});
    }
    const auto flagged = out.rhat_flagged();
    if (!flagged.empty()) {
      const std::string msg = std::to_string(flagged.size()) + " parameter(s) have R-hat above 1.1 (first: " +
                              flagged.front() + ")";
      out.warnings.push_back(msg);
      log_warning(msg);
    }
  }
  return out;
}

std::vector<std::string> parameter_names(int years, int viruses) {
  std::vector<std::string> names;
  for (int v = 0; v < viruses; ++v) names.push_back("alpha" + idx({v + 1}));
  for (int m = 0; m < kMonths; ++m)
    for (int t = 0; t < years; ++t)
      for (int v = 0; v < viruses; ++v) names.push_back("phi" + idx({m + 1, t + 1, v + 1}));
  for (int v = 0; v < viruses; ++v) names.push_back("s" + idx({v + 1}));
  names.push_back("lambda");
  names.push_back("rho");
  for (int v = 0; v < viruses; ++v) names.push_back("sigma" + idx({v + 1}));
  for (int i = 1; i < viruses; ++i)
    for (int j = 0; j < i; ++j) names.push_back("gamma" + idx({i + 1, j + 1}));
  return names;
}

std::vector<double> flatten(const ModelState& st) {
  const int nv = st.viruses();
  const int nt = st.years();
  std::vector<double> out(st.alpha);
  for (int m = 0; m < kMonths; ++m)
    for (int t = 0; t < nt; ++t)
      for (int v = 0; v < nv; ++v) out.push_back(st.phi(m, t, v));
  out.insert(out.end(), st.s.begin(), st.s.end());
  out.push_back(st.lambda);
  out.push_back(st.rho);
  out.insert(out.end(), st.sigma_diag.begin(), st.sigma_diag.end());
  for (int i = 1; i < nv; ++i)
    for (int j = 0; j < i; ++j) out.push_back(st.gamma(i, j));
  return out;
}

ModelState unflatten(std::span<const double> values, int years, int viruses) {
  const std::size_t expected = static_cast<std::size_t>(viruses) * (3 + kMonths * years) + 2 +
                               static_cast<std::size_t>(viruses) * (viruses - 1) / 2;
  if (values.size() != expected) throw SchemaError("parameter vector has the wrong length");
  ModelState st = ModelState::zeros(years, viruses);
  std::size_t k = 0;
  for (int v = 0; v < viruses; ++v) st.alpha[v] = values[k++];
  for (int m = 0; m < kMonths; ++m)
    for (int t = 0; t < years; ++t)
      for (int v = 0; v < viruses; ++v) st.phi(m, t, v) = values[k++];
  for (int v = 0; v < viruses; ++v) st.s[v] = values[k++];
  st.lambda = values[k++];
  st.rho = values[k++];
  for (int v = 0; v < viruses; ++v) st.sigma_diag[v] = values[k++];
  for (int i = 1; i < viruses; ++i)
    for (int j = 0; j < i; ++j) st.gamma.set(i, j, values[k++]);
  return st;
}

std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) return std::nullopt;
  const std::size_t n = chains.front().size();
  if (n < 2) return std::nullopt;
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("gelman_rubin: chains differ in length");
  std::vector<double> means(m);
  double within = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (double x : chains[j]) mean += x;
    mean /= static_cast<double>(n);
    means[j] = mean;
    double ss = 0.0;
    for (double x : chains[j]) ss += (x - mean) * (x - mean);
    within += ss / static_cast<double>(n - 1);
  }
  within /= static_cast<double>(m);
  if (!(within > 0.0)) return std::nullopt;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(m);
  double between_over_n = 0.0;
  for (double mu : means) between_over_n += (mu - grand) * (mu - grand);
  between_over_n /= static_cast<double>(m - 1);
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * within + between_over_n;
  return std::sqrt(var_plus / within);
}

double deviance(const ModelState& state, const CountPanel& panel) { return -2.0 * log_likelihood(state, panel); }

ModelState posterior_mean_state(std::span<const ModelState> draws) {
  if (draws.empty()) throw InsufficientData("posterior_mean_state: no draws");
  const int nt = draws.front().years();
  const int nv = draws.front().viruses();
  std::vector<double> acc(flatten(draws.front()).size(), 0.0);
  for (const auto& d : draws) {
    const auto flat = flatten(d);
    for (std::size_t k = 0; k < flat.size(); ++k) acc[k] += flat[k];
  }
  for (double& a : acc) a /= static_cast<double>(draws.size());
  return unflatten(acc, nt, nv);
}

DicResult dic_from_deviances(std::span<const double> deviances, double deviance_at_mean) {
  if (deviances.empty()) throw InsufficientData("dic: no deviances");
  DicResult r;
  for (double d : deviances) r.mean_deviance += d;
  r.mean_deviance /= static_cast<double>(deviances.size());
  r.deviance_at_mean = deviance_at_mean;
  r.p_d = r.mean_deviance - deviance_at_mean;
  r.dic = r.mean_deviance + r.p_d;
  return r;
}

DicResult dic(std::span<const ModelState> draws, const CountPanel& panel) {
  if (draws.size() < 10) throw InsufficientData("dic: at least 10 draws are required");
  std::vector<double> devs;
  devs.reserve(draws.size());
  for (const auto& d : draws) devs.push_back(deviance(d, panel));
  return dic_from_deviances(devs, deviance(posterior_mean_state(draws), panel));
}

DicResult dic(const PosteriorSamples& samples, const CountPanel& panel) { return dic(samples.draws, panel); }

}  // namespace vircov
