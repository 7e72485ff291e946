#include "vircov/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "vircov/errors.hpp"

namespace vircov {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// Closed interval: the bounds themselves carry density.
double uniform_logpdf(double x, const UniformBounds& b) {
  if (!(x >= b.lower && x <= b.upper)) return kNegInf;
  return -std::log(b.upper - b.lower);
}

}  // namespace

void CountPanel::validate() const {
  const int t = observed.years();
  const int v = observed.viruses();
  if (t <= 0 || v <= 0) throw SchemaError("panel: empty");
  if (expected.years() != t || expected.viruses() != v) {
    throw SchemaError("panel: observed and expected tables differ in shape");
  }
  if (n_tested.size() != 0 && (n_tested.years() != t || n_tested.viruses() != v)) {
    throw SchemaError("panel: n_tested table differs in shape");
  }
  if (static_cast<int>(virus_names.size()) != v) throw SchemaError("panel: virus name count mismatch");
  for (int tt = 0; tt < t; ++tt)
    for (int m = 0; m < kMonths; ++m)
      for (int vv = 0; vv < v; ++vv) {
        if (observed(m, tt, vv) < 0) throw SchemaError("panel: negative observed count");
        const double e = expected(m, tt, vv);
        if (!(e > 0.0) || !std::isfinite(e)) {
          throw SchemaError("panel: expected count must be strictly positive (month " +
                            std::to_string(m + 1) + ", year " + std::to_string(first_year + tt) +
                            ", virus " + virus_names[vv] + ")");
        }
      }
}

CountPanel CountPanel::leading_years(int k) const {
  CountPanel out;
  out.first_year = first_year;
  out.virus_names = virus_names;
  out.observed = observed.leading_years(k);
  out.expected = expected.leading_years(k);
  if (n_tested.size() != 0) out.n_tested = n_tested.leading_years(k);
  return out;
}

ModelState ModelState::zeros(int years, int viruses) {
  ModelState st;
  st.alpha.assign(viruses, 0.0);
  st.phi = Cube<double>(years, viruses, 0.0);
  st.s.assign(viruses, 0.5);
  st.lambda = 0.5;
  st.rho = 0.5;
  st.sigma_diag.assign(viruses, 1.0);
  st.gamma = LowerTriangularMatrix::identity(viruses);
  return st;
}

ModelState ModelState::initial(const CountPanel& panel) {
  ModelState st = zeros(panel.years(), panel.viruses());
  for (int v = 0; v < panel.viruses(); ++v) {
    double y = 0.0;
    double e = 0.0;
    for (int t = 0; t < panel.years(); ++t)
      for (int m = 0; m < kMonths; ++m) {
        y += panel.observed(m, t, v);
        e += panel.expected(m, t, v);
      }
    // An all-zero series would give log(0); fall back to half a count.
    st.alpha[v] = std::log(std::max(y, 0.5) / e);
  }
  return st;
}

void ProximitySpec::validate() const {
  if (neighbor_order < 1 || neighbor_order > 5) throw ConfigError("neighbor_order must lie in [1, 5]");
  if (fixed_rho && !(*fixed_rho > 0.0 && *fixed_rho < 1.0)) throw ConfigError("fixed rho must lie in (0, 1)");
  if (fixed_rho && kind != ProximityKind::autoregressive) {
    throw ConfigError("a fixed rho applies only to the autoregressive construction");
  }
}

void HyperParams::validate() const {
  if (!(alpha_prior_sd > 0.0) || !(sigma_prior_shape > 0.0) || !(sigma_prior_rate > 0.0) ||
      !(gamma_entry_prior_sd > 0.0)) {
    throw ConfigError("hyperparameters: scale, shape and rate values must be strictly positive");
  }
  for (const auto* b : {&s_bounds, &lambda_bounds, &rho_bounds}) {
    if (!(b->lower < b->upper)) throw ConfigError("hyperparameters: uniform bounds must satisfy lower < upper");
  }
  if (lambda_bounds.lower < 0.0 || lambda_bounds.upper > 1.0) {
    throw ConfigError("hyperparameters: lambda bounds must lie within [0, 1]");
  }
  if (rho_bounds.lower < 0.0 || rho_bounds.upper > 1.0) {
    throw ConfigError("hyperparameters: rho bounds must lie within [0, 1]");
  }
}

int month_distance(int i, int j, bool circular) {
  const int d = std::abs(i - j);
  return circular ? std::min(d, kMonths - d) : d;
}

DenseMatrix build_w_neighborhood(int order, bool circular) {
  if (order < 1 || order > 5) throw ConfigError("neighbor_order must lie in [1, 5]");
  DenseMatrix w(kMonths, kMonths);
  for (int i = 0; i < kMonths; ++i)
    for (int j = 0; j < kMonths; ++j)
      if (i != j && month_distance(i, j, circular) <= order) w(i, j) = 1.0;
  return w;
}

DenseMatrix build_w_autoregressive(double rho, bool circular) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
  DenseMatrix w(kMonths, kMonths);
  for (int i = 0; i < kMonths; ++i)
    for (int j = 0; j < kMonths; ++j)
      if (i != j) w(i, j) = std::pow(rho, month_distance(i, j, circular));
  return w;
}

DenseMatrix build_w(const ProximitySpec& spec, double rho) {
  if (spec.kind == ProximityKind::neighborhood) return build_w_neighborhood(spec.neighbor_order, spec.circular);
  return build_w_autoregressive(spec.fixed_rho.value_or(rho), spec.circular);
}

DenseMatrix build_omega(const DenseMatrix& w, double lambda) {
  if (!w.is_square()) throw NotSymmetric("build_omega: W is not square");
  const std::size_t n = w.rows();
  DenseMatrix omega(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += w(i, j);
    for (std::size_t j = 0; j < n; ++j) omega(i, j) = -lambda * w(i, j);
    omega(i, i) = d - lambda * w(i, i);
  }
  if (!is_positive_definite(omega)) {
    throw NotPositiveDefinite("build_omega: D - lambda W is not positive definite (lambda = " +
                              std::to_string(lambda) + ")");
  }
  return omega;
}

DenseMatrix covariance_from_cholesky(std::span<const double> sigma_diag, const LowerTriangularMatrix& gamma) {
  const std::size_t n = gamma.dim();
  if (sigma_diag.size() != n) throw std::invalid_argument("covariance_from_cholesky: size mismatch");
  DenseMatrix g = gamma.gram();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) *= sigma_diag[i] * sigma_diag[j];
  return g;
}

DenseMatrix precision_from_cholesky(std::span<const double> sigma_diag, const LowerTriangularMatrix& gamma) {
  const std::size_t n = gamma.dim();
  if (sigma_diag.size() != n) throw std::invalid_argument("precision_from_cholesky: size mismatch");
  // (Sigma Gamma Gamma^T Sigma)^{-1} = (Gamma^{-1} Sigma^{-1})^T (Gamma^{-1} Sigma^{-1})
  const auto ginv = gamma.inverse();
  DenseMatrix b(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) b(i, j) = ginv(i, j) / sigma_diag[j];
  DenseMatrix p(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t k = i; k < n; ++k) acc += b(k, i) * b(k, j);
      p(i, j) = acc;
      p(j, i) = acc;
    }
  return p;
}

double log_likelihood(const ModelState& state, const CountPanel& panel) {
  double ll = 0.0;
  for (int t = 0; t < panel.years(); ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < panel.viruses(); ++v) {
        const double eta = state.alpha[v] + state.phi(m, t, v);
        const double mu = panel.expected(m, t, v) * std::exp(eta);
        const int y = panel.observed(m, t, v);
        ll += y * (std::log(panel.expected(m, t, v)) + eta) - mu - std::lgamma(y + 1.0);
      }
  return ll;
}

double log_prior_phi(const Cube<double>& phi, std::span<const double> s, const DenseMatrix& omega,
                     const DenseMatrix& lambda_precision) {
  const int nv = phi.viruses();
  const int nt = phi.years();
  const double logdet_omega = log_det_spd(omega);
  const double logdet_lambda = log_det_spd(lambda_precision);
  const double dim = static_cast<double>(kMonths) * nv;
  const double norm = -0.5 * dim * std::log(2.0 * std::numbers::pi) +
                      0.5 * (nv * logdet_omega + kMonths * logdet_lambda);

  std::vector<double> resid(static_cast<std::size_t>(kMonths) * nv);
  std::vector<double> resid_lambda(resid.size());
  double total = 0.0;
  for (int t = 0; t < nt; ++t) {
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < nv; ++v) {
        const double prev = t == 0 ? 0.0 : s[v] * phi(m, t - 1, v);
        resid[m * nv + v] = phi(m, t, v) - prev;
      }
    // R Lambda
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < nv; ++v) {
        double acc = 0.0;
        for (int u = 0; u < nv; ++u) acc += resid[m * nv + u] * lambda_precision(u, v);
        resid_lambda[m * nv + v] = acc;
      }
    // tr(Omega R Lambda R^T)
    double q = 0.0;
    for (int m = 0; m < kMonths; ++m)
      for (int mp = 0; mp < kMonths; ++mp) {
        const double o = omega(m, mp);
        if (o == 0.0) continue;
        double acc = 0.0;
        for (int v = 0; v < nv; ++v) acc += resid[m * nv + v] * resid_lambda[mp * nv + v];
        q += o * acc;
      }
    total += norm - 0.5 * q;
  }
  return total;
}

double log_prior_phi(const ModelState& state, const ProximitySpec& spec) {
  const auto omega = build_omega(build_w(spec, state.rho), state.lambda);
  const auto lambda_precision = precision_from_cholesky(state.sigma_diag, state.gamma);
  return log_prior_phi(state.phi, state.s, omega, lambda_precision);
}

double log_prior_params(const ModelState& state, const HyperParams& hyper) {
  double lp = 0.0;
  for (double a : state.alpha) lp += normal_logpdf(a, hyper.alpha_prior_mean, hyper.alpha_prior_sd);
  const std::size_t nv = state.gamma.dim();
  for (std::size_t i = 0; i < nv; ++i)
    for (std::size_t j = 0; j < i; ++j) lp += normal_logpdf(state.gamma(i, j), 0.0, hyper.gamma_entry_prior_sd);
  for (double sd : state.sigma_diag) lp += gamma_logpdf(sd, hyper.sigma_prior_shape, hyper.sigma_prior_rate);
  for (double sv : state.s) lp += uniform_logpdf(sv, hyper.s_bounds);
  lp += uniform_logpdf(state.lambda, hyper.lambda_bounds);
  lp += uniform_logpdf(state.rho, hyper.rho_bounds);
  return std::isnan(lp) ? kNegInf : lp;
}

double log_posterior(const ModelState& state, const CountPanel& panel, const ProximitySpec& spec,
                     const HyperParams& hyper) {
  const double lp = log_prior_params(state, hyper);
  if (lp == kNegInf) return kNegInf;
  double prior_phi = kNegInf;
  try {
    prior_phi = log_prior_phi(state, spec);
  } catch (const NotPositiveDefinite&) {
    return kNegInf;
  } catch (const ConfigError&) {
    return kNegInf;
  }
  return log_likelihood(state, panel) + prior_phi + lp;
}

Cube<double> relative_risks(const ModelState& state) {
  Cube<double> rr(state.years(), state.viruses());
  for (int t = 0; t < state.years(); ++t)
    for (int m = 0; m < kMonths; ++m)
      for (int v = 0; v < state.viruses(); ++v) rr(m, t, v) = std::exp(state.alpha[v] + state.phi(m, t, v));
  return rr;
}

}  // namespace vircov
