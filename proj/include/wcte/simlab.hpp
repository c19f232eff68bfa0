#pragma once

#include "wcte/cohort.hpp"
#include "wcte/comparators.hpp"
#include "wcte/dml.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/tilting.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace wcte {

/// A covariate row, contiguous or not.
using CovariateRow = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

/// rate(x) = scale * exp(intercept + beta'x)
struct LogLinearHazard {
  double scale = 1.0;
  double intercept = 0.0;
  std::array<double, 6> beta{};

  double rate(const CovariateRow& x) const;
};

struct DgpSetting {
  int id = 1;
  /// P(A = 1 | X) = expit(-(c0 + c'X)), intercept first.
  std::array<double, 7> propensity{};
  std::array<std::vector<LogLinearHazard>, 2> causes;  // per arm, index j-1
  std::array<LogLinearHazard, 2> censoring;
  double correlation = 0.5;  // among X1..X3

  int j_star() const { return static_cast<int>(causes[0].size()); }
  double pi1(const CovariateRow& x) const;
};

/// Settings 1-4.
const DgpSetting& dgp_setting(int id);

/// Exploration knobs; the defaults are the literal mechanism.
struct DgpOptions {
  bool reverse_treatment = false;  // A -> 1 - A before outcomes are attached
  double admin_horizon = 0.0;      // > 0 censors everyone still at risk there
};

struct SimulatedData {
  Cohort cohort;
  Eigen::VectorXd pi1;                       // true P(A = 1 | X)
  std::array<Eigen::MatrixXd, 2> cause_rate;  // n x j*, per arm
  std::array<Eigen::VectorXd, 2> censor_rate;
};

SimulatedData generate(int setting, Index n, std::uint64_t seed, const DgpOptions& options = {});

/// Covariate rows drawn as in the DGP.
Eigen::MatrixXd draw_covariates(const DgpSetting& setting, Index n, std::uint64_t seed);

struct DgpSummary {
  double treated = 0.0;
  double censored = 0.0;
  double event_before = 0.0;  // P(observed time <= tau, cause == j)
};

DgpSummary summarize(const Cohort& cohort, double tau = 4.0, int cause = 1);

/// Closed-form conditional RMST and RMTL_j under constant hazards.
double exponential_rmst(double total_rate, double tau);
double exponential_rmtl(double cause_rate, double total_rate, double tau);

struct TruthCurve {
  Estimand estimand = Estimand::ATE;
  Eigen::VectorXd tau;
  std::array<Eigen::VectorXd, 2> arm;
  Eigen::VectorXd contrast;
  std::array<Eigen::VectorXd, 2> arm_se;  // Monte Carlo SE of the truth itself
  Eigen::VectorXd contrast_se;
};

struct TruthSet {
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  Index draws = 0;
  std::vector<TruthCurve> curves;  // one per estimand, in request order
  /// Per tau: covariance of the contrast truths across estimands.
  std::vector<Eigen::MatrixXd> contrast_cov;

  const TruthCurve& at(Estimand e) const;
};

/// Covariate Monte Carlo with N draws and the true h.
TruthSet true_effects(int setting, const std::vector<Estimand>& estimands, Outcome outcome,
                      int cause, const Eigen::VectorXd& tau, Index draws, std::uint64_t seed,
                      int threads = 1, const DgpOptions& options = {});

TruthCurve true_effect(int setting, Estimand estimand, Outcome outcome, int cause,
                       const Eigen::VectorXd& tau, Index draws, std::uint64_t seed, int threads = 1);

/// Cross-fitted logistic propensity and exponential-PH hazards.
NuisanceSpecs oracle_parametric_specs();

/// The setting's own propensity and hazards as fixed learners. Administrative
/// censoring is not represented.
NuisanceSpecs true_nuisance_specs(int setting, const DgpOptions& options = {});

struct StudyConfig {
  int setting = 1;
  Index n = 4000;
  int reps = 300;
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<Estimand> estimands{kAllEstimands.begin(), kAllEstimands.end()};
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  double tau_max = 4.0;
  int tau_points = 40;  // uniform grid on (0, tau_max]
  double alpha = 0.05;

  bool proposed = true;
  int k = 2;
  double epsilon = 50.0;
  NuisanceSpecs specs = oracle_parametric_specs();

  std::vector<ComparatorKind> comparators;
  bool winsorized = false;  // adds the 99% Winsorized IPCW/DR variants
  std::vector<BootstrapTarget> bootstrap;
  int bootstrap_reps = 200;

  bool bands = false;
  int band_paths = 2000;
  std::vector<Estimand> band_estimands{Estimand::ATO};

  Index truth_draws = 2'000'000;
  DgpOptions dgp;
};

struct McRow {
  std::string estimator;
  Estimand estimand = Estimand::ATE;
  double tau = 0.0;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double mc_se = 0.0;
  double mean_se = 0.0;   // NaN when no SE was produced
  double coverage = 0.0;  // NaN when no SE was produced
};

struct BandRow {
  Estimand estimand = Estimand::ATO;
  double coverage = 0.0;
  double mean_critical = 0.0;
  double min_critical = 0.0;
  double tau_l_mean = 0.0;
};

struct McReport {
  int setting = 1;
  int reps = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  DgpSummary dgp;
  std::vector<McRow> rows;
  std::vector<BandRow> bands;

  const McRow* find(const std::string& estimator, Estimand estimand, double tau) const;
};

McReport run_study(const StudyConfig& config);

/// Long format: setting, estimator, estimand, tau, metric, value.
void write_report_csv(std::ostream& out, const McReport& report);
/// Rows at one tau.
void write_report_table(std::ostream& out, const McReport& report, double tau);

}  // namespace wcte
