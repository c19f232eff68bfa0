#pragma once

#include "wcte/cohort.hpp"
#include "wcte/lifetables.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wcte {

enum class LearnerKind {
  Mean,
  Logistic,
  KaplanMeier,
  ExponentialPH,
  WeibullPH,
  CoxBreslow,
  DiscreteHazardLogistic,
  Fixed
};

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Logistic;
  int bins = 10;  // discrete-hazard-logistic only
  int max_iter = 100;

  /// Accepts "logistic", "mean", "km"/"kaplan-meier", "exponential-ph",
  /// "weibull-ph", "cox"/"cox-breslow", "discrete-hazard-logistic[:bins]",
  /// "fixed".
  static LearnerSpec parse(std::string_view text);
  std::string name() const;
  bool binary_target() const { return kind == LearnerKind::Mean || kind == LearnerKind::Logistic; }
};

/// Comma-separated list of learner names.
std::vector<LearnerSpec> parse_learners(std::string_view text);

enum class HazardTarget { AllCause, Cause, Censoring };

class PropensityModel {
 public:
  virtual ~PropensityModel() = default;
  /// P(A = 1 | X) for each row of x.
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& x) const = 0;
  virtual std::string name() const = 0;
};

class HazardModel {
 public:
  virtual ~HazardModel() = default;
  /// Cumulative hazard, one column per row of x, one row per grid time.
  /// `left` gives the left limit Lambda(t-).
  virtual Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                 bool left = false) const = 0;
  /// Cumulative hazard of row i at its own time times(i).
  virtual Eigen::VectorXd cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                                    bool left = false) const;
  virtual SurvivalTransform transform() const = 0;
  virtual std::string name() const = 0;
  /// Jump times of a step cumulative hazard; empty for continuous models.
  virtual Eigen::VectorXd jumps() const { return {}; }

  Step curve(const Eigen::RowVectorXd& x, const Eigen::VectorXd& grid) const;
};

using PropensityPtr = std::shared_ptr<const PropensityModel>;
using HazardPtr = std::shared_ptr<const HazardModel>;

/// Right-censored training data for one hazard target.
struct SurvivalData {
  Eigen::MatrixXd x;
  Eigen::VectorXd time;
  Eigen::VectorXi event;  // 1 = target event
};

SurvivalData hazard_data(const Cohort& cohort, std::span<const Index> rows, HazardTarget target,
                         int cause = 1);

// ---- logistic regression ----------------------------------------------------

/// Mean log-likelihood for a design that already holds any intercept column.
double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta);
Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& beta);

struct LogisticFit {
  Eigen::VectorXd beta;
  int iterations = 0;
  double loglik = 0.0;
  double gradient_norm = 0.0;
};

/// Damped Newton. Throws on separation or non-convergence.
LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                         int max_iter = 100);

class LogisticModel final : public PropensityModel {
 public:
  LogisticModel(Eigen::VectorXd coef, int iterations) : coef_(std::move(coef)), iterations_(iterations) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  std::string name() const override { return "logistic"; }
  /// Intercept first.
  const Eigen::VectorXd& coefficients() const { return coef_; }
  int iterations() const { return iterations_; }

 private:
  Eigen::VectorXd coef_;
  int iterations_;
};

class ConstantPropensity final : public PropensityModel {
 public:
  explicit ConstantPropensity(double p) : p_(p) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override {
    return Eigen::VectorXd::Constant(x.rows(), p_);
  }
  std::string name() const override { return "mean"; }

 private:
  double p_;
};

class FixedPropensity final : public PropensityModel {
 public:
  using Fn = std::function<double(const Eigen::RowVectorXd&)>;
  explicit FixedPropensity(Fn fn) : fn_(std::move(fn)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  std::string name() const override { return "fixed"; }

 private:
  Fn fn_;
};

PropensityPtr fit_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXi& treat,
                             const LearnerSpec& spec);

// ---- hazard learners --------------------------------------------------------

/// Lambda = 0.
class ZeroHazard final : public HazardModel {
 public:
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::ProductLimit; }
  std::string name() const override { return "zero"; }
};

/// Covariate-free Nelson-Aalen estimate.
class NelsonAalen final : public HazardModel {
 public:
  explicit NelsonAalen(Step cumhaz) : base_(std::move(cumhaz)) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::ProductLimit; }
  std::string name() const override { return "kaplan-meier"; }
  Eigen::VectorXd jumps() const override { return base_.grid; }
  const Step& baseline() const { return base_; }

 private:
  Step base_;
};

/// Lambda(t|x) = Lambda0(t) exp(beta'(x - center)) with a Breslow baseline.
class CoxModel final : public HazardModel {
 public:
  CoxModel(Eigen::VectorXd beta, Eigen::VectorXd center, Step baseline, int iterations)
      : beta_(std::move(beta)), center_(std::move(center)), base_(std::move(baseline)), iterations_(iterations) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  Eigen::VectorXd cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                            bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::ProductLimit; }
  std::string name() const override { return "cox-breslow"; }
  Eigen::VectorXd jumps() const override { return base_.grid; }
  const Eigen::VectorXd& beta() const { return beta_; }
  const Step& baseline() const { return base_; }
  int iterations() const { return iterations_; }

 private:
  Eigen::VectorXd beta_;
  Eigen::VectorXd center_;
  Step base_;
  int iterations_;
};

/// Lambda(t|x) = exp(b0 + beta'x) t^shape; shape = 1 is the exponential model.
class WeibullModel final : public HazardModel {
 public:
  WeibullModel(Eigen::VectorXd coef, double shape, bool exponential)
      : coef_(std::move(coef)), shape_(shape), exponential_(exponential) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  Eigen::VectorXd cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                            bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::Exp; }
  std::string name() const override { return exponential_ ? "exponential-ph" : "weibull-ph"; }
  /// Intercept first.
  const Eigen::VectorXd& coefficients() const { return coef_; }
  double shape() const { return shape_; }
  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const;

 private:
  Eigen::VectorXd coef_;
  double shape_;
  bool exponential_;
};

/// Pooled logistic hazard on quantile time bins; each bin's discrete hazard
/// is spread as a constant rate over the bin.
class DiscreteHazardModel final : public HazardModel {
 public:
  DiscreteHazardModel(Eigen::VectorXd cuts, Eigen::VectorXd coef)
      : cuts_(std::move(cuts)), coef_(std::move(coef)) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::Exp; }
  std::string name() const override { return "discrete-hazard-logistic"; }

 private:
  Eigen::VectorXd cuts_;  // bin edges, cuts_(0) = 0
  Eigen::VectorXd coef_;  // bin intercepts then covariate slopes
};

/// Known rate function: Lambda(t|x) = rate(x) t.
class FixedHazard final : public HazardModel {
 public:
  using Fn = std::function<double(const Eigen::RowVectorXd&)>;
  explicit FixedHazard(Fn rate) : rate_(std::move(rate)) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::Exp; }
  std::string name() const override { return "fixed"; }

 private:
  Fn rate_;
};

/// Mean Cox log partial likelihood (Breslow ties) and its derivatives.
double cox_partial_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& time,
                          const Eigen::VectorXi& event, const Eigen::VectorXd& beta);
Eigen::VectorXd cox_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& time,
                             const Eigen::VectorXi& event, const Eigen::VectorXd& beta);

Step nelson_aalen(const Eigen::VectorXd& time, const Eigen::VectorXi& event);

HazardPtr fit_hazard(const SurvivalData& data, const LearnerSpec& spec);

// ---- stacking ---------------------------------------------------------------

enum class EnsembleLoss { NegLogLik, Brier };

struct StackInfo {
  Eigen::VectorXd weights;
  Eigen::VectorXd learner_loss;  // inner-CV loss of each learner alone
  double ensemble_loss = 0.0;
};

class StackedPropensity final : public PropensityModel {
 public:
  StackedPropensity(std::vector<PropensityPtr> members, Eigen::VectorXd weights)
      : members_(std::move(members)), weights_(std::move(weights)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  std::string name() const override { return "stack"; }

 private:
  std::vector<PropensityPtr> members_;
  Eigen::VectorXd weights_;
};

/// Mixture of member survival curves, Lambda = -log(sum_l w_l S_l).
class StackedHazard final : public HazardModel {
 public:
  StackedHazard(std::vector<HazardPtr> members, Eigen::VectorXd weights)
      : members_(std::move(members)), weights_(std::move(weights)) {}
  Eigen::MatrixXd cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                         bool left) const override;
  Eigen::VectorXd cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                            bool left) const override;
  SurvivalTransform transform() const override { return SurvivalTransform::Exp; }
  std::string name() const override { return "stack"; }

 private:
  std::vector<HazardPtr> members_;
  Eigen::VectorXd weights_;
};

/// Minimizes a convex loss over the probability simplex by projected gradient,
/// starting from the best vertex. `loss` returns the value and fills the
/// gradient.
Eigen::VectorXd simplex_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& loss, Index dim,
    int max_iter = 500);

PropensityPtr stack_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXi& treat,
                               const std::vector<LearnerSpec>& specs, int folds,
                               EnsembleLoss loss, std::uint64_t seed, StackInfo* info = nullptr);

HazardPtr stack_hazard(const SurvivalData& data, const std::vector<LearnerSpec>& specs, int folds,
                       EnsembleLoss loss, std::uint64_t seed, StackInfo* info = nullptr);

// ---- cross-fitting ----------------------------------------------------------

struct CrossFitPlan {
  int k = 2;
  std::uint64_t seed = 0;
  Eigen::VectorXi fold;                    // unit -> fold
  std::vector<std::vector<Index>> members;  // fold -> sorted held-out units

  std::vector<Index> training(int f) const;
};

CrossFitPlan make_plan(const Cohort& cohort, int k, std::uint64_t seed);

/// Learners per nuisance. Lists with more than one entry are stacked. The
/// event list is used for the all-cause hazard (one cause) or for each
/// cause-specific hazard (competing risks).
struct NuisanceSpecs {
  std::vector<LearnerSpec> propensity{LearnerSpec{LearnerKind::Logistic}};
  std::vector<LearnerSpec> event{LearnerSpec{LearnerKind::CoxBreslow}};
  std::vector<LearnerSpec> censoring{LearnerSpec{LearnerKind::CoxBreslow}};
  int inner_folds = 3;
  EnsembleLoss loss = EnsembleLoss::NegLogLik;

  /// Suppliers for `fixed` learners.
  std::function<PropensityPtr()> fixed_propensity;
  std::function<HazardPtr(int arm, HazardTarget target, int cause)> fixed_hazard;
};

struct FoldModels {
  PropensityPtr propensity;
  std::array<HazardPtr, 2> event;                  // all-cause (one cause only)
  std::array<std::vector<HazardPtr>, 2> causes;     // cause-specific, index j-1
  std::array<HazardPtr, 2> censoring;
};

/// Fits every nuisance on the given training rows.
FoldModels fit_models(const Cohort& cohort, std::span<const Index> train,
                      const NuisanceSpecs& specs, std::uint64_t seed);

/// Arm-a nuisance curves for a set of units on a grid; column per unit.
struct ArmCurves {
  Eigen::VectorXd grid;
  Eigen::MatrixXd surv;         // S(g)
  Eigen::MatrixXd cens;         // G(g)
  Eigen::MatrixXd cens_cumhaz;  // Lambda^C(g)
  std::vector<Eigen::MatrixXd> cif;  // F_j(g), index j-1
};

/// Product-limit curves are built on the grid merged with the models' jump
/// times, so their values at the grid points are exact.
ArmCurves evaluate_curves(const Eigen::MatrixXd& x, const FoldModels& models, int arm,
                          const Eigen::VectorXd& grid, int j_star);

/// Sorted distinct jump times of the product-limit models among `models`
/// that fall in (lo, hi].
Eigen::VectorXd product_limit_jumps(const std::vector<HazardPtr>& models, double lo, double hi);

/// Survival curves from cumulative hazards, column per unit. Product-limit
/// increments are clamped to [0, 1].
Eigen::MatrixXd survival_from_cumhaz(const Eigen::MatrixXd& cumhaz, SurvivalTransform mode);

class FittedNuisances {
 public:
  FittedNuisances(CrossFitPlan plan, std::vector<FoldModels> models, Eigen::VectorXd propensity,
                  double epsilon, Index truncated, int j_star)
      : plan_(std::move(plan)), models_(std::move(models)), pi1_(std::move(propensity)),
        epsilon_(epsilon), truncated_(truncated), j_star_(j_star) {}

  const CrossFitPlan& plan() const { return plan_; }
  const FoldModels& models(int fold) const { return models_.at(static_cast<std::size_t>(fold)); }
  /// Truncated cross-fitted P(A = 1 | X_i).
  const Eigen::VectorXd& propensity() const { return pi1_; }
  double epsilon() const { return epsilon_; }
  double floor() const { return 1.0 / epsilon_; }
  Index truncated() const { return truncated_; }
  int j_star() const { return j_star_; }

  /// Distinct observed times of the fold's held-out units up to `horizon`.
  Eigen::VectorXd fold_grid(const Cohort& cohort, int fold, double horizon) const;
  /// Curves for the fold's held-out units (plan order) on its grid.
  ArmCurves curves(const Cohort& cohort, int fold, int arm, double horizon) const;

 private:
  CrossFitPlan plan_;
  std::vector<FoldModels> models_;
  Eigen::VectorXd pi1_;
  double epsilon_;
  Index truncated_;
  int j_star_;
};

FittedNuisances cross_fit(const Cohort& cohort, const CrossFitPlan& plan,
                          const NuisanceSpecs& specs, double epsilon = 50.0, int threads = 1);

/// Truncates to [1/epsilon, 1 - 1/epsilon]; returns the number of values moved.
Index truncate_propensity(Eigen::VectorXd& pi1, double epsilon);

}  // namespace wcte
