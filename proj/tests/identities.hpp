#pragma once

// Property checks shared by the unit tests and the acceptance binary. Each
// returns the worst violation found so callers can apply their own tolerance.

#include "support.hpp"
#include "wcte/dml.hpp"
#include "wcte/lifetables.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/tilting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace wcte::test {

inline NuisanceSpecs cox_specs() {
  NuisanceSpecs s;
  s.propensity = {LearnerSpec{LearnerKind::Logistic}};
  s.event = {LearnerSpec{LearnerKind::CoxBreslow}};
  s.censoring = {LearnerSpec{LearnerKind::CoxBreslow}};
  return s;
}

/// max |P_n phi_uncentered - raw| over arms, contrast, estimands and tau.
inline double self_centering_gap(std::uint64_t seed, int causes = 1) {
  const Cohort c = toy_cohort(300, seed, 0.3, causes);
  const auto plan = make_plan(c, 2, seed);
  const auto nu = cross_fit(c, plan, cox_specs());
  DmlConfig cfg;
  cfg.tau = default_tau_grid(c, 3.0);
  double worst = 0.0;
  for (Estimand e : kAllEstimands) {
    for (Outcome o : {Outcome::RMST, Outcome::RMTL}) {
      cfg.estimand = e;
      cfg.outcome = o;
      const auto r = estimate(c, nu, cfg);
      for (int a = 0; a < 2; ++a) {
        const Eigen::VectorXd m = r.arm[a].uncentered.colwise().mean();
        worst = std::max(worst, (m - r.curve.arm[a].raw).cwiseAbs().maxCoeff());
      }
      const Eigen::VectorXd m = r.contrast.uncentered.colwise().mean();
      worst = std::max(worst, (m - r.curve.contrast.raw).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

/// max |RMST + RMTL_1 - tau| of the raw arm curves on uncensored one-cause data.
inline double complementarity_gap(std::uint64_t seed) {
  const Cohort c = toy_cohort(200, seed, 0.0, 1);
  const auto plan = make_plan(c, 2, seed);
  const auto nu = cross_fit(c, plan, cox_specs());
  DmlConfig cfg;
  cfg.tau = default_tau_grid(c, 2.5);
  double worst = 0.0;
  for (Estimand e : kAllEstimands) {
    cfg.estimand = e;
    cfg.outcome = Outcome::RMST;
    const auto s = estimate(c, nu, cfg);
    cfg.outcome = Outcome::RMTL;
    const auto l = estimate(c, nu, cfg);
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXd sum = s.curve.arm[a].raw + l.curve.arm[a].raw;
      worst = std::max(worst, (sum - cfg.tau).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

/// Upper (concave) or lower (convex) hull through (0,0) by checking every
/// chord, evaluated at each tau.
inline Eigen::VectorXd brute_hull(const Eigen::VectorXd& tau, const Eigen::VectorXd& v, bool upper) {
  const Index T = tau.size();
  Eigen::VectorXd x(T + 1), y(T + 1);
  x << 0.0, tau;
  y << 0.0, v;
  Eigen::VectorXd out(T);
  for (Index i = 1; i <= T; ++i) {
    double best = upper ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (Index p = 0; p <= i; ++p) {
      for (Index q = i; q <= T; ++q) {
        const double val = p == q ? y(p) : y(p) + (y(q) - y(p)) * (x(i) - x(p)) / (x(q) - x(p));
        best = upper ? std::max(best, val) : std::min(best, val);
      }
    }
    out(i - 1) = best;
  }
  return out;
}

/// Worst of hull error and idempotence error over random 10-point curves.
inline double hull_gap(int curves, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0), v(-1.0, 2.0);
  double worst = 0.0;
  for (int r = 0; r < curves; ++r) {
    Eigen::VectorXd tau(10), val(10);
    double t = 0.0;
    for (Index k = 0; k < 10; ++k) {
      t += u(rng);
      tau(k) = t;
      val(k) = v(rng) * t;
    }
    const Eigen::VectorXd l = lcm_project(tau, val);
    const Eigen::VectorXd g = gcm_project(tau, val);
    worst = std::max(worst, (l - brute_hull(tau, val, true)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (g - brute_hull(tau, val, false)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (lcm_project(tau, l) - l).cwiseAbs().maxCoeff());
    worst = std::max(worst, (gcm_project(tau, g) - g).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Cumulative max must be nondecreasing, dominate the input and agree with a
/// running max; returns the worst violation.
inline double cummax_gap(int curves, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> v(0.0, 3.0);
  double worst = 0.0;
  for (int r = 0; r < curves; ++r) {
    Eigen::VectorXd x(25);
    for (Index k = 0; k < x.size(); ++k) x(k) = v(rng);
    const Eigen::VectorXd m = cumulative_max(x);
    double run = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < x.size(); ++k) {
      run = std::max(run, x(k));
      worst = std::max(worst, std::abs(m(k) - run));
    }
  }
  return worst;
}

/// Excess of |S_pl - S_exp| over the bound sum (dLambda)^2, plus the error of
/// the product-limit value at a single atom.
inline double product_limit_gap(int curves, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.02);
  double worst = 0.0;
  for (int r = 0; r < curves; ++r) {
    Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(40, 0.1, 4.0), lam(40);
    double acc = 0.0, sq = 0.0;
    for (Index k = 0; k < 40; ++k) {
      const double d = u(rng);
      acc += d;
      sq += d * d;
      lam(k) = acc;
    }
    const Step c(g, lam, 0.0);
    const Step a = cumhaz_to_survival(c, SurvivalTransform::Exp);
    const Step b = cumhaz_to_survival(c, SurvivalTransform::ProductLimit);
    worst = std::max(worst, std::max(0.0, (a.values - b.values).cwiseAbs().maxCoeff() - sq));
  }
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, 1.0), atom = Eigen::VectorXd::Constant(1, 0.25);
  const Step jump(one, atom, 0.0);
  worst = std::max(worst, std::abs(cumhaz_to_survival(jump, SurvivalTransform::ProductLimit)(1.0) - 0.75));
  return worst;
}

/// max |w_ATO(a) - pi(1-a|X)| for units in arm a.
inline double ato_cancellation_gap(int units, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Eigen::VectorXd pi(units);
  Eigen::VectorXi a(units);
  for (int i = 0; i < units; ++i) {
    pi(i) = u(rng);
    a(i) = u(rng) < 0.5 ? 1 : 0;
  }
  double worst = 0.0;
  for (int arm = 0; arm < 2; ++arm) {
    const auto bw = balancing_weights(Estimand::ATO, pi, a, arm);
    for (int i = 0; i < units; ++i) {
      if (a(i) != arm) continue;
      const double other = arm == 1 ? 1.0 - pi(i) : pi(i);
      worst = std::max(worst, std::abs(bw.w(i) - other));
    }
  }
  return worst;
}

/// Fits fold 0's models on two cohorts that differ only in a marker covariate
/// set to the held-out outcomes of fold 0. Those rows are outside the
/// training set, so predictions on any design must agree exactly. The
/// cross-fitted propensities of fold-0 units must also come from these fits.
inline double leakage_gap(std::uint64_t seed) {
  const Cohort base = toy_cohort(240, seed, 0.3, 1);
  const auto plan = make_plan(base, 2, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd xa(base.n(), base.d() + 1);
  xa.leftCols(base.d()) = base.covariates();
  for (Index i = 0; i < base.n(); ++i) xa(i, base.d()) = z(rng);
  Eigen::MatrixXd xb = xa;
  for (Index i : plan.members[0]) xb(i, base.d()) = base.time()(i);
  const Cohort ca(xa, base.treat(), base.time(), base.cause(), 1);
  const Cohort cb(xb, base.treat(), base.time(), base.cause(), 1);
  const auto train = plan.training(0);
  const FoldModels ma = fit_models(ca, train, cox_specs(), 1);
  const FoldModels mb = fit_models(cb, train, cox_specs(), 1);
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(20, 0.1, 3.0);
  double worst = 0.0;
  for (const Eigen::MatrixXd* x : {&xa, &xb}) {
    worst = std::max(worst, (ma.propensity->predict(*x) - mb.propensity->predict(*x)).cwiseAbs().maxCoeff());
    for (int arm = 0; arm < 2; ++arm) {
      const auto ea = ma.event[arm]->cumhaz(*x, grid);
      const auto eb = mb.event[arm]->cumhaz(*x, grid);
      const auto ga = ma.censoring[arm]->cumhaz(*x, grid);
      const auto gb = mb.censoring[arm]->cumhaz(*x, grid);
      worst = std::max({worst, (ea - eb).cwiseAbs().maxCoeff(), (ga - gb).cwiseAbs().maxCoeff()});
    }
  }
  const auto nu = cross_fit(ca, plan, cox_specs(), 1e9);
  const Eigen::VectorXd p = ma.propensity->predict(xa);
  for (Index i : plan.members[0]) worst = std::max(worst, std::abs(nu.propensity()(i) - p(i)));
  return worst;
}

/// Central-difference relative error of an analytic gradient.
template <class F, class G>
double gradient_rel_error(F&& f, G&& grad, const Eigen::VectorXd& at) {
  const Eigen::VectorXd g = grad(at);
  double worst = 0.0;
  for (Index k = 0; k < at.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(at(k)));
    Eigen::VectorXd p = at, m = at;
    p(k) += h;
    m(k) -= h;
    const double fd = (f(p) - f(m)) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - g(k)) / std::max(1.0, std::abs(g(k))));
  }
  return worst;
}

/// Worst gradient error for the logistic and Cox objectives over random data.
inline double gradient_gap(int datasets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> size(15, 60);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int r = 0; r < datasets; ++r) {
    const int n = size(rng);
    const int p = 3;
    Eigen::MatrixXd x(n, p), design(n, p + 1);
    Eigen::VectorXd y(n), time(n), b(p + 1), beta(p);
    Eigen::VectorXi ev(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < p; ++k) x(i, k) = z(rng);
      design(i, 0) = 1.0;
      design.row(i).tail(p) = x.row(i);
      y(i) = u(rng) < 0.5 ? 1.0 : 0.0;
      // rounded times create ties for the Breslow term
      time(i) = std::ceil(10.0 * u(rng)) / 4.0;
      ev(i) = u(rng) < 0.7 ? 1 : 0;
    }
    ev(0) = 1;
    for (Index k = 0; k < b.size(); ++k) b(k) = 0.5 * z(rng);
    for (Index k = 0; k < beta.size(); ++k) beta(k) = 0.5 * z(rng);
    worst = std::max(worst, gradient_rel_error([&](const Eigen::VectorXd& c) { return logistic_loglik(design, y, c); },
                                               [&](const Eigen::VectorXd& c) { return logistic_gradient(design, y, c); },
                                               b));
    worst = std::max(worst, gradient_rel_error([&](const Eigen::VectorXd& c) { return cox_partial_loglik(x, time, ev, c); },
                                               [&](const Eigen::VectorXd& c) { return cox_gradient(x, time, ev, c); },
                                               beta));
  }
  return worst;
}

}  // namespace wcte::test
