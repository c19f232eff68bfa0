#include "identities.hpp"
#include "support.hpp"
#include "wcte/dml.hpp"
#include "wcte/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace wcte;
using doctest::Approx;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

// Exponential event curve on a uniform grid, no censoring.
UnitNuisance uncensored(double rate, double step, int points) {
  UnitNuisance nu;
  nu.grid = Eigen::VectorXd::LinSpaced(points, step, step * points);
  nu.surv = (-rate * nu.grid.array()).exp().matrix();
  nu.cens = Eigen::VectorXd::Ones(points);
  nu.cens_cumhaz = Eigen::VectorXd::Zero(points);
  nu.cif = (1.0 - nu.surv.array()).matrix();
  return nu;
}

double grid_rmst(const UnitNuisance& nu, double tau) {
  return survival_to_rmst(Step(nu.grid, nu.surv, 1.0), tau);
}

}  // namespace

TEST_CASE("hull projections") {
  const Eigen::VectorXd tau = vec({1, 2, 3});
  CHECK((lcm_project(tau, vec({2, 2, 6})) - vec({2, 4, 6})).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::VectorXd concave = vec({1.0, 1.8, 2.4});
  CHECK((lcm_project(tau, concave) - concave).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::VectorXd convex = vec({0.1, 0.4, 0.9});
  CHECK((gcm_project(tau, convex) - convex).cwiseAbs().maxCoeff() < 1e-12);
  // The anchor at the origin lifts a curve that starts too low.
  CHECK(lcm_project(vec({1, 2}), vec({0.1, 2}))(0) == Approx(1.0));
  CHECK(test::hull_gap(1000, 7) < 1e-12);
  CHECK_THROWS_AS(lcm_project(tau, vec({1, 2})), Error);
}

TEST_CASE("shape correction never moves further than the worst violation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int r = 0; r < 200; ++r) {
    Eigen::VectorXd tau = Eigen::VectorXd::LinSpaced(15, 0.2, 3.0);
    Eigen::VectorXd v(15);
    for (Index k = 0; k < 15; ++k) v(k) = 1.0 - std::exp(-tau(k)) + 0.02 * z(rng);
    const Eigen::VectorXd l = lcm_project(tau, v);
    CHECK((l.array() >= v.array() - 1e-12).all());
    // Distance is bounded by the largest gap to the hull, which the hull itself attains.
    CHECK((l - v).cwiseAbs().maxCoeff() <= (test::brute_hull(tau, v, true) - v).cwiseAbs().maxCoeff() + 1e-12);
  }
}

TEST_CASE("cumulative max and sandwich sigma") {
  CHECK((cumulative_max(vec({1, 3, 2, 5})) - vec({1, 3, 3, 5})).cwiseAbs().maxCoeff() == 0.0);
  CHECK(test::cummax_gap(200, 1) == 0.0);
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(10, 2, 0.0);
  CHECK(sandwich_sigma(c).maxCoeff() == 0.0);
  c.col(1).setConstant(0.5);
  CHECK(sandwich_sigma(c)(1) == Approx(0.5));
  CHECK_THROWS_AS(sandwich_sigma(Eigen::MatrixXd(0, 2)), Error);
}

TEST_CASE("fold combination") {
  const auto r = combine_folds({vec({1.0}), vec({2.0})}, {3, 7});
  CHECK(r(0) == Approx(1.7));
  CHECK(combine_folds({vec({4.0, 5.0})}, {9})(1) == 5.0);
  CHECK(combine_folds({vec({1.0}), vec({1.0})}, {5, 8})(0) == Approx(1.0));
  EifMatrix e;
  e.fold = Eigen::VectorXi::Zero(3);
  e.uncentered = Eigen::MatrixXd::Constant(3, 2, 0.7);
  CHECK(fold_estimate(e, 0)(1) == Approx(0.7));
  CHECK_THROWS_AS(fold_estimate(e, 1), Error);
}

TEST_CASE("single-unit influence values") {
  const UnitNuisance nu = uncensored(0.4, 0.01, 400);
  const double tau = 2.5;
  const double rmst = grid_rmst(nu, tau);
  const UnitWeights wt{0.8, 1.3};
  ObservedUnit u;
  u.time = nu.grid(137);
  u.cause = 1;
  CHECK(eif_rmst(u, tau, nu, wt, 0.02) == Approx(0.8 * rmst + 1.3 * (u.time - rmst)).epsilon(1e-12));
  u.time = nu.grid(380);
  CHECK(eif_rmst(u, tau, nu, wt, 0.02) == Approx(0.8 * rmst + 1.3 * (tau - rmst)).epsilon(1e-12));
  const UnitWeights other{0.8, 0.0};
  CHECK(eif_rmst(u, tau, nu, other, 0.02) == Approx(0.8 * rmst).epsilon(1e-12));
  const double rmtl = cif_to_rmtl(Step(nu.grid, nu.cif, 0.0), tau);
  CHECK(eif_rmtl(u, 1, tau, nu, other, 0.02) == Approx(0.8 * rmtl).epsilon(1e-12));
  for (int m : {5, 100, 249, 399}) {
    u.time = nu.grid(m);
    CHECK(eif_rmst(u, tau, nu, wt, 0.02) + eif_rmtl(u, 1, tau, nu, wt, 0.02) == Approx(0.8 * tau).epsilon(1e-12));
  }
  UnitNuisance bad = nu;
  bad.cens.conservativeResize(3);
  CHECK_THROWS_AS(eif_rmst(u, tau, bad, wt, 0.02), Error);
}

TEST_CASE("the influence function is conditionally unbiased under true nuisances") {
  // Exponential event and censoring times at a fixed X; each unit's own time
  // is inserted into the grid so the martingale terms are exact at its jump.
  const double lam = 0.5, mu = 0.3, tau = 2.0, step = 0.01;
  const int points = 200;
  const Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(points, step, step * points);
  std::mt19937_64 rng(21);
  std::exponential_distribution<double> et(lam), ec(mu);
  const int draws = 100000;
  double sum = 0.0, sq = 0.0;
  Eigen::VectorXd tv = Eigen::VectorXd::Constant(1, tau);
  for (int d = 0; d < draws; ++d) {
    const double t = et(rng), c = ec(rng);
    const double obs = std::min(t, c);
    const int cause = t <= c ? 1 : 0;
    const auto at = static_cast<Index>(std::lower_bound(g.data(), g.data() + points, obs) - g.data());
    const bool insert = at < points && g(at) != obs;
    const Index m = points + (insert ? 1 : 0);
    Eigen::VectorXd grid(m);
    if (insert) {
      grid << g.head(at), obs, g.tail(points - at);
    } else {
      grid = g;
    }
    const Eigen::VectorXd s = (-lam * grid.array()).exp().matrix();
    const Eigen::VectorXd lc = mu * grid;
    const Eigen::VectorXd gc = (-lc.array()).exp().matrix();
    double reg = 0.0, aug = 0.0;
    eif_terms(obs, cause, Outcome::RMST, 1, grid, s, gc, lc, s, tv, 1e-6, &reg, &aug);
    const double phi = reg + aug;
    sum += phi;
    sq += phi * phi;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sq / draws - mean * mean) / draws);
  const double truth = (1.0 - std::exp(-lam * tau)) / lam;
  CHECK(std::abs(mean - truth) < 4.0 * se + 0.005);
}

TEST_CASE("estimator identities") {
  CHECK(test::self_centering_gap(4) <= 1e-12);
  CHECK(test::self_centering_gap(5, 2) <= 1e-12);
  CHECK(test::complementarity_gap(6) <= 1e-10);
}

TEST_CASE("curve invariants") {
  const Cohort c = test::toy_cohort(400, 31, 0.3, 2);
  const auto plan = make_plan(c, 2, 1);
  const auto nu = cross_fit(c, plan, test::cox_specs());
  DmlConfig cfg;
  cfg.tau = default_tau_grid(c, 3.0, {3.0});
  CHECK(cfg.tau(cfg.tau.size() - 1) == 3.0);
  for (Outcome o : {Outcome::RMST, Outcome::RMTL}) {
    cfg.outcome = o;
    cfg.estimand = Estimand::ATM;
    const auto r = estimate(c, nu, cfg);
    for (int a = 0; a < 2; ++a) {
      const auto& b = r.curve.arm[a];
      for (Index k = 1; k < cfg.tau.size(); ++k) {
        CHECK(b.sigma_plus(k) >= b.sigma_plus(k - 1));
        CHECK(b.corrected(k) >= b.corrected(k - 1) - 1e-12);
        if (o == Outcome::RMST) {
          CHECK(b.corrected(k) - b.corrected(k - 1) <= cfg.tau(k) - cfg.tau(k - 1) + 1e-9);
        }
      }
      CHECK(b.se(0) == Approx(b.sigma_plus(0) / std::sqrt(400.0)));
      // Centered columns average to raw minus corrected.
      const Eigen::VectorXd m = r.arm[a].centered.colwise().mean();
      CHECK((m - (b.raw - b.corrected)).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK((r.curve.contrast.corrected - (r.curve.arm[1].corrected - r.curve.arm[0].corrected)).cwiseAbs().maxCoeff() < 1e-14);
  }
  cfg.shape_correct = false;
  cfg.outcome = Outcome::RMST;
  const auto raw = estimate(c, nu, cfg);
  CHECK((raw.curve.arm[0].raw - raw.curve.arm[0].corrected).cwiseAbs().maxCoeff() == 0.0);
  std::ostringstream os;
  write_curve_csv(os, raw.curve);
  CHECK(os.str().rfind("tau,arm,estimate_raw,estimate_corrected,se\n", 0) == 0);
}

TEST_CASE("ATE estimate matches a hand-rolled augmented estimator") {
  // Uncensored data with a known propensity and known exponential hazards.
  const Cohort c = test::toy_cohort(50, 77, 0.0, 1);
  auto pi = [](const Eigen::RowVectorXd& x) { return 1.0 / (1.0 + std::exp(-(0.3 * x(0) - 0.2 * x(1)))); };
  auto rate = [](int arm, const Eigen::RowVectorXd& x) { return 0.3 * std::exp(0.4 * x(0) - 0.3 * arm + 0.2 * x(1)); };
  NuisanceSpecs s;
  s.propensity = {LearnerSpec{LearnerKind::Fixed}};
  s.event = {LearnerSpec{LearnerKind::Fixed}};
  s.censoring = {LearnerSpec{LearnerKind::Fixed}};
  s.fixed_propensity = [&] { return std::make_shared<FixedPropensity>(pi); };
  s.fixed_hazard = [&](int arm, HazardTarget target, int) -> HazardPtr {
    if (target == HazardTarget::Censoring) return std::make_shared<ZeroHazard>();
    return std::make_shared<FixedHazard>([&, arm](const Eigen::RowVectorXd& x) { return rate(arm, x); });
  };
  const auto plan = make_plan(c, 2, 9);
  const auto nu = cross_fit(c, plan, s, 1e9);
  DmlConfig cfg;
  cfg.tau = vec({1.0, 2.0});
  const auto r = estimate(c, nu, cfg);

  for (int a = 0; a < 2; ++a) {
    for (Index q = 0; q < 2; ++q) {
      const double tau = cfg.tau(q);
      double total = 0.0;
      for (int f = 0; f < 2; ++f) {
        const auto& rows = plan.members[static_cast<std::size_t>(f)];
        std::vector<double> grid;
        for (Index i : rows) {
          if (c.time()(i) <= 2.0) grid.push_back(c.time()(i));
        }
        std::sort(grid.begin(), grid.end());
        double wsum = 0.0;
        for (Index i : rows) {
          const double p = pi(c.covariates().row(i));
          wsum += c.treat()(i) == a ? 1.0 / (a == 1 ? p : 1.0 - p) : 0.0;
        }
        const double nk = static_cast<double>(rows.size());
        double fold_sum = 0.0;
        for (Index i : rows) {
          const double lam = rate(a, c.covariates().row(i));
          double m = 0.0, left = 0.0, level = 1.0;
          for (double u : grid) {
            if (u > tau) break;
            m += level * (u - left);
            left = u;
            level = std::exp(-lam * u);
          }
          m += level * (tau - left);
          const double p = pi(c.covariates().row(i));
          const double w = c.treat()(i) == a ? 1.0 / (a == 1 ? p : 1.0 - p) : 0.0;
          fold_sum += m + w / (wsum / nk) * (std::min(c.time()(i), tau) - m);
        }
        total += fold_sum / nk * (nk / 50.0);
      }
      CHECK(r.curve.arm[a].raw(q) == Approx(total).epsilon(1e-10));
    }
  }
}

TEST_CASE("tau grid validation") {
  const Cohort c = test::toy_cohort(200, 2);
  const auto nu = cross_fit(c, make_plan(c, 2, 1), test::cox_specs());
  DmlConfig cfg;
  cfg.tau = vec({2.0, 1.0});
  CHECK_THROWS_AS(estimate(c, nu, cfg), Error);
  cfg.tau = vec({1.0});
  cfg.outcome = Outcome::RMTL;
  cfg.cause = 2;
  CHECK_THROWS_AS(estimate(c, nu, cfg), Error);
  CHECK_THROWS_AS(default_tau_grid(c, -1.0), Error);
}
