#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vircov/expected_counts.hpp"
#include "vircov/linalg.hpp"
#include "vircov/model.hpp"
#include "vircov/rng.hpp"

namespace vircov {

enum class ObservedMode { product, poisson };

struct AgeBand {
  int lo = 0;  // inclusive
  int hi = 0;  // inclusive
  double weight = 1.0;
};

/// Marginals for the synthetic patient population.
struct Demographics {
  std::vector<AgeBand> age_bands{{0, 0, 0.15}, {1, 5, 0.45}, {6, 17, 0.12}, {18, 64, 0.16}, {65, 90, 0.12}};
  double p_male = 0.5;
  double p_gp = 0.6;

  void validate() const;
};

/// Month effect on the log-odds scale: amplitude * cos(2 pi (m - peak) / 12).
std::array<double, kMonths> seasonal_cosine(int peak_month, double amplitude = 1.0);
inline std::array<double, kMonths> seasonal_flat() { return {}; }

struct SimScenario {
  std::string name = "custom";
  int n_viruses = 1;
  int n_years = 1;
  int first_year = 2000;
  int samples_per_month = 200;
  std::vector<std::array<double, kMonths>> seasonal_effects;
  /// True between-virus covariance (Lambda inverse).
  DenseMatrix true_cov;
  std::vector<double> s_true;
  double lambda_true = 0.5;
  std::vector<double> alpha_true;
  double rho_true = 0.5;
  /// Standard deviation of the per-virus age, sex and severity log-odds coefficients.
  double coef_sd = 0.1;
  ProximitySpec proximity;
  ObservedMode observed_mode = ObservedMode::product;
  Demographics demographics;
  /// Hold phi at zero so RR = exp(alpha).
  bool zero_field = false;
  ExpectedCountsOptions expected_options;

  void validate() const;
};

/// V = 3, T = 4; winter, summer and flat seasonality; cov(1,2) = -0.5.
SimScenario scenario_three_virus();
/// V = 5, T = 15; cov(1,2) = -0.5, cov(4,5) = 0.5; viruses 4 and 5 peak in autumn.
SimScenario scenario_five_virus();

struct TrueCoefficients {
  double age = 0.0;  // per decade of age
  double sex = 0.0;
  double severity = 0.0;
};

struct SimOutput {
  SimScenario scenario;
  std::uint64_t seed = 0;
  EpisodeTable records;
  std::vector<TrueCoefficients> true_coefficients;
  ExpectedCountsResult expected;
  CountPanel panel;
  Cube<double> true_phi;
  Cube<double> true_rr;
};

/// phi year by year from the MCAR conditional: year one ~ N(0, kron(omega, lambda)^-1),
/// later years centred on s_v phi_{m,t-1,v}.
Cube<double> draw_mcar_field(int years, std::span<const double> s, const DenseMatrix& omega,
                             const DenseMatrix& lambda_precision, Rng& rng);

SimOutput simulate(const SimScenario& scenario, std::uint64_t seed);

}  // namespace vircov
