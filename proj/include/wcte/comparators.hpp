#pragma once

#include "wcte/cohort.hpp"
#include "wcte/dml.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/tilting.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace wcte {

enum class ComparatorKind { OR, IpcwPlain, IpcwCompleteCase, DR };

/// Survival (RMST) or cause-j CIF (RMTL) curve estimator. winsorize = 0
/// leaves the IPTW untouched, otherwise it is the cap quantile.
struct ComparatorSpec {
  ComparatorKind kind = ComparatorKind::DR;
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  double winsorize = 0.0;
};

/// "or", "ipcw", "ipcw-cc", "dr", with ".t" for 99% Winsorized IPTW.
ComparatorSpec parse_comparator(std::string_view text, Outcome outcome = Outcome::RMST,
                                int cause = 1);
std::string comparator_name(const ComparatorSpec& spec);

struct ComparatorConfig {
  NuisanceSpecs specs;
  /// Propensity truncation and S/G floor 1/epsilon; epsilon <= 0 disables both.
  double epsilon = 50.0;
  /// Cells of the uniform t-grid on (0, tau_max]; curves live at cell midpoints.
  int grid_points = 100;
  double tau_max = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ComparatorNuisances {
  FoldModels models;
  Eigen::VectorXd pi1;
  Index truncated = 0;
};

/// Full-sample (not cross-fitted) nuisances.
ComparatorNuisances fit_comparator_nuisances(const Cohort& cohort, const ComparatorConfig& config);

/// Per-unit pieces on the t-grid, M x n per arm. Columns of units outside
/// the arm are zero except in the regression block.
struct ComparatorTerms {
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  Eigen::VectorXd t;      // cell midpoints
  Eigen::VectorXd edges;  // cell right ends, the integration horizons
  struct Arm {
    Eigen::MatrixXd regression;  // S or F_j
    Eigen::MatrixXd ipcw;        // I(T > t)/G(t), or I(T <= t, J = j)/G(T-)
    Eigen::MatrixXd ipcw_cc;     // Delta I(T > t)/G(T-); CIF: same as ipcw
    Eigen::MatrixXd augmentation;
  };
  std::array<Arm, 2> arm;
};

ComparatorTerms comparator_terms(const Cohort& cohort, const ComparatorNuisances& nuisances,
                                 Outcome outcome, int cause, const ComparatorConfig& config);

struct ComparatorCurve {
  ComparatorSpec spec;
  Estimand estimand = Estimand::ATE;
  Eigen::VectorXd t;
  std::array<Eigen::VectorXd, 2> raw;        // curve at t
  std::array<Eigen::VectorXd, 2> corrected;  // monotone and clipped
  Eigen::VectorXd tau;                       // integration horizons
  std::array<Eigen::VectorXd, 2> integral_raw;
  std::array<Eigen::VectorXd, 2> integral;   // RMST / RMTL from the corrected curve
  Eigen::VectorXd contrast_raw;
  Eigen::VectorXd contrast;
};

ComparatorCurve comparator_curve(const ComparatorTerms& terms, const Eigen::VectorXd& pi1,
                                 const Eigen::VectorXi& treat, const ComparatorSpec& spec,
                                 Estimand estimand);

ComparatorCurve estimate_curve(const ComparatorSpec& spec, Estimand estimand, const Cohort& cohort,
                               const ComparatorConfig& config);

/// Caps values above the empirical q-quantile (linear interpolation).
Eigen::VectorXd winsorize_weights(const Eigen::VectorXd& weights, double q);

struct BootstrapTarget {
  ComparatorSpec spec;
  Estimand estimand = Estimand::ATE;
};

struct BootstrapResult {
  Eigen::VectorXd tau;
  /// Per target: SE of arm 0, arm 1 and the contrast integrals.
  std::vector<std::array<Eigen::VectorXd, 3>> se;
  int redraws = 0;
};

/// Nonparametric bootstrap; every resample refits the nuisances once and
/// serves all targets.
BootstrapResult bootstrap_se(const std::vector<BootstrapTarget>& targets, const Cohort& cohort,
                             const ComparatorConfig& config, int replicates, std::uint64_t seed);

/// Columns: estimator, tau, arm, estimate_raw, estimate_corrected, se.
void write_comparator_csv(std::ostream& out, const std::vector<ComparatorCurve>& curves,
                          const BootstrapResult* boot = nullptr);

}  // namespace wcte
