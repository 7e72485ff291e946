#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vircov/cube.hpp"
#include "vircov/linalg.hpp"

namespace vircov {

/// Observed and expected monthly counts, indexed (month, year, virus).
struct CountPanel {
  int first_year = 1;
  std::vector<std::string> virus_names;
  Cube<int> observed;
  Cube<double> expected;
  /// Optional; empty when unknown.
  Cube<int> n_tested;

  int years() const { return observed.years(); }
  int viruses() const { return observed.viruses(); }

  /// Throws SchemaError when shapes disagree or an expected count is not positive.
  void validate() const;
  /// Panel restricted to the first k years.
  CountPanel leading_years(int k) const;
};

/// All latent parameters of the model.
struct ModelState {
  std::vector<double> alpha;
  Cube<double> phi;
  std::vector<double> s;
  double lambda = 0.5;
  double rho = 0.5;
  std::vector<double> sigma_diag;
  /// Unit diagonal; the strictly-lower entries are free.
  LowerTriangularMatrix gamma;

  int viruses() const { return static_cast<int>(alpha.size()); }
  int years() const { return phi.years(); }

  static ModelState zeros(int years, int viruses);
  /// alpha_v = log(sum Y / sum E), phi = 0, s = lambda = rho = 0.5, Sigma = Gamma = I.
  static ModelState initial(const CountPanel& panel);

  bool operator==(const ModelState&) const = default;
};

enum class ProximityKind { neighborhood, autoregressive };

struct ProximitySpec {
  ProximityKind kind = ProximityKind::neighborhood;
  int neighbor_order = 3;
  bool circular = true;
  /// Autoregressive construction only: hold rho at this value instead of estimating it.
  std::optional<double> fixed_rho;

  void validate() const;
  bool estimates_rho() const { return kind == ProximityKind::autoregressive && !fixed_rho; }
};

struct UniformBounds {
  double lower = 0.0;
  double upper = 1.0;
};

struct HyperParams {
  double alpha_prior_mean = 0.0;
  double alpha_prior_sd = 10.0;
  double sigma_prior_shape = 1.0;
  double sigma_prior_rate = 1.0;
  double gamma_entry_prior_sd = 1.0;
  UniformBounds s_bounds;
  UniformBounds lambda_bounds;
  UniformBounds rho_bounds;

  void validate() const;
};

int month_distance(int i, int j, bool circular);

DenseMatrix build_w_neighborhood(int order, bool circular = true);
DenseMatrix build_w_autoregressive(double rho, bool circular = true);
/// W for the given construction; rho is ignored for the neighborhood kind.
DenseMatrix build_w(const ProximitySpec& spec, double rho);
/// D - lambda W with D the diagonal of row sums of W.
DenseMatrix build_omega(const DenseMatrix& w, double lambda);

/// Sigma Gamma Gamma^T Sigma (the between-virus covariance).
DenseMatrix covariance_from_cholesky(std::span<const double> sigma_diag, const LowerTriangularMatrix& gamma);
/// (Sigma Gamma Gamma^T Sigma)^{-1}, formed from Gamma^{-1} without a general inverse.
DenseMatrix precision_from_cholesky(std::span<const double> sigma_diag, const LowerTriangularMatrix& gamma);

double log_likelihood(const ModelState& state, const CountPanel& panel);

/// MVN log-density of phi year by year with mean s_v phi_{.,t-1,v} (zero in year one)
/// and precision kron(omega, lambda_precision) over month-major vectors.
double log_prior_phi(const Cube<double>& phi, std::span<const double> s, const DenseMatrix& omega,
                     const DenseMatrix& lambda_precision);
double log_prior_phi(const ModelState& state, const ProximitySpec& spec);

/// -inf when any parameter leaves its support.
double log_prior_params(const ModelState& state, const HyperParams& hyper);

double log_posterior(const ModelState& state, const CountPanel& panel, const ProximitySpec& spec,
                     const HyperParams& hyper);

Cube<double> relative_risks(const ModelState& state);

}  // namespace vircov
