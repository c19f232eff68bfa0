#pragma once

#include "wcte/cohort.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/tilting.hpp"

#include <Eigen/Dense>

#include <array>
#include <iosfwd>
#include <vector>

namespace wcte {

enum class Outcome { RMST, RMTL };

/// One unit's arm-a nuisance curves on a grid.
struct UnitNuisance {
  Eigen::VectorXd grid;
  Eigen::VectorXd surv;         // S(g)
  Eigen::VectorXd cens;         // G(g)
  Eigen::VectorXd cens_cumhaz;  // Lambda^C(g)
  Eigen::VectorXd cif;          // F_j(g), RMTL only
};

/// Normalized weights of one unit: h / P_{n,k} h and w / P_{n,k} w.
struct UnitWeights {
  double h = 0.0;
  double w = 0.0;
};

/// Untilted regression value (RMST or RMTL_j at tau given X) and the
/// augmentation term inside the braces, for every tau (ascending). S and G are
/// floored at `floor` wherever they divide.
void eif_terms(double time, int cause, Outcome outcome, int j,
               const Eigen::Ref<const Eigen::VectorXd>& grid,
               const Eigen::Ref<const Eigen::VectorXd>& surv,
               const Eigen::Ref<const Eigen::VectorXd>& cens,
               const Eigen::Ref<const Eigen::VectorXd>& cens_cumhaz,
               const Eigen::Ref<const Eigen::VectorXd>& cif, const Eigen::VectorXd& tau,
               double floor, double* regression, double* augmentation);

double eif_rmst(const ObservedUnit& unit, double tau, const UnitNuisance& nu,
                const UnitWeights& weights, double floor);
double eif_rmtl(const ObservedUnit& unit, int cause, double tau, const UnitNuisance& nu,
                const UnitWeights& weights, double floor);

/// Untilted per-unit pieces for one arm, n x |tau|.
struct EifComponents {
  int arm = 0;
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  Eigen::VectorXd tau;
  Eigen::MatrixXd regression;
  Eigen::MatrixXd augmentation;
};

std::array<EifComponents, 2> eif_components(const Cohort& cohort, const FittedNuisances& nuisances,
                                            Outcome outcome, int cause,
                                            const Eigen::VectorXd& tau, int threads = 1);

/// Tilted EIF values, n x |tau|. arm is 0, 1 or -1 (contrast).
struct EifMatrix {
  int arm = 0;
  Eigen::VectorXd tau;
  Eigen::VectorXi fold;
  Eigen::MatrixXd uncentered;
  Eigen::MatrixXd centered;
};

/// phi = h / P_{n,k} h * regression + w / P_{n,k} w * augmentation with
/// fold-local denominators. Centered values are left empty.
EifMatrix tilted_eif(const EifComponents& comp, const Eigen::VectorXd& pi1,
                     const Eigen::VectorXi& treat, const CrossFitPlan& plan, Estimand estimand);

Eigen::VectorXd fold_estimate(const EifMatrix& eif, int fold);
Eigen::VectorXd combine_folds(const std::vector<Eigen::VectorXd>& estimates,
                              const std::vector<Index>& sizes);

/// Least concave majorant / greatest convex minorant through (0, 0), evaluated
/// on tau.
Eigen::VectorXd lcm_project(const Eigen::VectorXd& tau, const Eigen::VectorXd& values);
Eigen::VectorXd gcm_project(const Eigen::VectorXd& tau, const Eigen::VectorXd& values);

Eigen::VectorXd cumulative_max(const Eigen::VectorXd& values);

/// sqrt(P_n centered^2) per column.
Eigen::VectorXd sandwich_sigma(const Eigen::MatrixXd& centered);

struct CurveBlock {
  Eigen::VectorXd raw;
  Eigen::VectorXd corrected;
  Eigen::VectorXd sigma;
  Eigen::VectorXd sigma_plus;
  Eigen::VectorXd se;
};

struct EstimateCurve {
  Eigen::VectorXd tau;
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  Estimand estimand = Estimand::ATE;
  Index n = 0;
  std::array<CurveBlock, 2> arm;
  CurveBlock contrast;
};

struct EstimateResult {
  EstimateCurve curve;
  std::array<EifMatrix, 2> arm;
  EifMatrix contrast;
};

EstimateResult estimate_from_components(const std::array<EifComponents, 2>& comp,
                                        const Eigen::VectorXd& pi1, const Eigen::VectorXi& treat,
                                        const CrossFitPlan& plan, Estimand estimand,
                                        bool shape_correct = true);

struct DmlConfig {
  Estimand estimand = Estimand::ATE;
  Outcome outcome = Outcome::RMST;
  int cause = 1;
  Eigen::VectorXd tau;
  bool shape_correct = true;
  int threads = 1;
};

EstimateResult estimate(const Cohort& cohort, const FittedNuisances& nuisances,
                        const DmlConfig& config);

/// Distinct event times up to tau_max, merged with the extra values.
Eigen::VectorXd default_tau_grid(const Cohort& cohort, double tau_max,
                                 const std::vector<double>& extra = {});

/// Columns: tau, arm, estimate_raw, estimate_corrected, se.
void write_curve_csv(std::ostream& out, const EstimateCurve& curve);

}  // namespace wcte
