#pragma once

#include "wcte/dml.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>

namespace wcte {

double normal_cdf(double x);
/// Inverse standard normal CDF.
double normal_quantile(double p);

struct Interval {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// estimate +/- z_{1-alpha/2} se.
Interval wald_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& se, double alpha);

/// tau_l = first tau with sigma_plus > 0 (or the override, moved up to it);
/// tau_u = last tau unless overridden. Returns grid indices [first, last].
std::pair<Index, Index> select_band_range(const Eigen::VectorXd& tau,
                                          const Eigen::VectorXd& sigma_plus,
                                          std::optional<double> tau_l = std::nullopt,
                                          std::optional<double> tau_u = std::nullopt);

struct BandSpec {
  double alpha = 0.05;
  std::optional<double> tau_l;
  std::optional<double> tau_u;
  int paths = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct BandResult {
  double critical = 0.0;
  Index first = 0;
  Index last = 0;
  Eigen::VectorXd lower;  // NaN outside [first, last]
  Eigen::VectorXd upper;
  Interval pointwise;
};

/// Multiplier bootstrap band for one curve. `centered` is n x |tau|.
BandResult multiplier_band(const Eigen::MatrixXd& centered, const Eigen::VectorXd& tau,
                           const Eigen::VectorXd& estimate, const Eigen::VectorXd& sigma_plus,
                           const BandSpec& spec);

BandResult multiplier_band(const EifMatrix& eif, const CurveBlock& block, const BandSpec& spec);

struct CovarianceCheck {
  Eigen::MatrixXd correlation;  // standardized covariance on the band range
  double min_eigenvalue = 0.0;
  bool psd = true;
};

/// Standardized cross-fitted covariance of the centered EIF on [first, last].
CovarianceCheck standardized_covariance(const Eigen::MatrixXd& centered,
                                        const Eigen::VectorXd& sigma_plus, Index first,
                                        Index last);

/// Columns: tau, estimate, ci_lo, ci_hi, band_lo, band_hi.
void write_band_csv(std::ostream& out, const Eigen::VectorXd& tau, const Eigen::VectorXd& estimate,
                    const BandResult& band, const char* label = nullptr);

}  // namespace wcte
