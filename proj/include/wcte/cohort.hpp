#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace wcte {

using Eigen::Index;

/// One subject: covariates X, treatment A, observed time min(T, C) and the
/// observed cause (0 = censored, 1..j* = event of that cause).
struct ObservedUnit {
  Eigen::VectorXd covariates;
  int treat = 0;
  double time = 0.0;
  int cause = 0;
};

/// Counting-process increments of one unit at a grid time.
struct CountingView {
  bool at_risk = false;      // R(t) = I(time >= t)
  int event = 0;             // dN(t)
  Eigen::VectorXi by_cause;  // dN_j(t), entry j-1
  int censor = 0;            // dN^C(t)
};

/// Immutable right-censored (optionally competing-risks) sample.
class Cohort {
 public:
  /// Validates and builds the distinct-time grid. `j_star` < 0 infers the
  /// number of causes from the largest observed code.
  Cohort(Eigen::MatrixXd covariates, Eigen::VectorXi treat, Eigen::VectorXd time,
         Eigen::VectorXi cause, int j_star = -1);

  Index n() const { return time_.size(); }
  Index d() const { return covariates_.cols(); }
  int j_star() const { return j_star_; }

  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const Eigen::VectorXi& treat() const { return treat_; }
  const Eigen::VectorXd& time() const { return time_; }
  const Eigen::VectorXi& cause() const { return cause_; }
  /// Sorted distinct observed times.
  const Eigen::VectorXd& grid() const { return grid_; }

  ObservedUnit unit(Index i) const;
  Index arm_size(int arm) const;

  /// Rows in the given order (duplicates allowed, e.g. bootstrap draws).
  /// Keeps j_star of the parent.
  Cohort subset(std::span<const Index> rows) const;

 private:
  Eigen::MatrixXd covariates_;
  Eigen::VectorXi treat_;
  Eigen::VectorXd time_;
  Eigen::VectorXi cause_;
  Eigen::VectorXd grid_;
  int j_star_ = 1;
};

/// Column names for CSV ingestion. Every other column is a covariate.
struct CsvSchema {
  std::string time = "time";
  std::string event = "event";
  std::string treat = "treat";
};

Cohort load_cohort(const std::string& path, const CsvSchema& schema = {});

/// Writes time, event, treat and covariates x1..xd with round-trip precision.
void write_cohort(const std::string& path, const Cohort& cohort);

/// Counting-process view of unit i at grid time t. Throws if t is not a grid
/// point.
CountingView counting_view(const Cohort& cohort, Index i, double t);

/// Sorted distinct values of a vector.
Eigen::VectorXd distinct_sorted(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace wcte
