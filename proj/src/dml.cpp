#include "wcte/dml.hpp"

#include "wcte/error.hpp"
#include "wcte/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("dml", message); }

// Value of a step function (init before the first point) just before u.
double left_value(const Eigen::Ref<const Eigen::VectorXd>& grid,
                  const Eigen::Ref<const Eigen::VectorXd>& values, double init, double u) {
  const auto k = static_cast<Index>(std::lower_bound(grid.data(), grid.data() + grid.size(), u) - grid.data()) - 1;
  return k < 0 ? init : values(k);
}

}  // namespace

void eif_terms(double time, int cause, Outcome outcome, int j,
               const Eigen::Ref<const Eigen::VectorXd>& grid,
               const Eigen::Ref<const Eigen::VectorXd>& surv,
               const Eigen::Ref<const Eigen::VectorXd>& cens,
               const Eigen::Ref<const Eigen::VectorXd>& cens_cumhaz,
               const Eigen::Ref<const Eigen::VectorXd>& cif, const Eigen::VectorXd& tau,
               double floor, double* regression, double* augmentation) {
  const Index M = grid.size();
  const bool rmtl = outcome == Outcome::RMTL;
  // Cumulative sums over grid points u <= time of
  //   c1: u dM/G(u-), c0: dM/(S G(u-)), cr: R(u) dM/(S G(u-)),
  //   cf: F dM/(S G(u-)), cgf: u F dM/(S G(u-))
  // where R is RMST or RMTL at u.
  double c1 = 0, c0 = 0, cr = 0, cf = 0, cgf = 0;
  double integral = 0.0;  // integral of S (or F) up to grid(m)
  double prev_t = 0.0;
  double prev_level = rmtl ? 0.0 : 1.0;
  double prev_cumhaz = 0.0;
  double g_left = 1.0;
  Index m = 0;
  for (Index q = 0; q < tau.size(); ++q) {
    const double t = tau(q);
    if (q > 0 && t < tau(q - 1)) fail("tau grid must be ascending");
    while (m < M && grid(m) <= t) {
      const double u = grid(m);
      integral += prev_level * (u - prev_t);
      const double level = rmtl ? cif(m) : surv(m);
      const double d_lambda = cens_cumhaz(m) - prev_cumhaz;
      if (u <= time) {
        const double dn = (u == time && cause == 0) ? 1.0 : 0.0;
        const double dm = dn - d_lambda;
        const double gl = std::max(g_left, floor);
        const double sg = std::max(surv(m), floor) * gl;
        c1 += u * dm / gl;
        c0 += dm / sg;
        cr += integral * dm / sg;
        if (rmtl) {
          cf += cif(m) * dm / sg;
          cgf += u * cif(m) * dm / sg;
        }
      }
      prev_t = u;
      prev_level = level;
      prev_cumhaz = cens_cumhaz(m);
      g_left = cens(m);
      ++m;
    }
    const double value = integral + prev_level * (t - prev_t);
    regression[q] = value;
    double ipcw;
    if (!rmtl) {
      const bool complete = cause > 0 || time > t;
      const double u = std::min(t, time);
      ipcw = complete ? u / std::max(left_value(grid, cens, 1.0, u), floor) : 0.0;
      augmentation[q] = ipcw - value + c1 + value * c0 - cr;
    } else {
      ipcw = (cause == j && time <= t)
                 ? (t - time) / std::max(left_value(grid, cens, 1.0, time), floor)
                 : 0.0;
      augmentation[q] = ipcw - value - (t * cf - cgf) + value * c0 - cr;
    }
  }
}

namespace {

double unit_eif(const ObservedUnit& unit, Outcome outcome, int j, double tau,
                const UnitNuisance& nu, const UnitWeights& weights, double floor) {
  const Index M = nu.grid.size();
  if (nu.surv.size() != M || nu.cens.size() != M || nu.cens_cumhaz.size() != M) {
    fail("nuisance curves do not match the grid");
  }
  Eigen::VectorXd cif = nu.cif;
  if (outcome == Outcome::RMTL && cif.size() != M) fail("cause-specific incidence missing");
  if (outcome == Outcome::RMST) cif.setZero(M);
  Eigen::VectorXd t(1);
  t(0) = tau;
  double reg = 0.0, aug = 0.0;
  eif_terms(unit.time, unit.cause, outcome, j, nu.grid, nu.surv, nu.cens, nu.cens_cumhaz, cif, t,
            floor, &reg, &aug);
  return weights.h * reg + weights.w * aug;
}

}  // namespace

double eif_rmst(const ObservedUnit& unit, double tau, const UnitNuisance& nu,
                const UnitWeights& weights, double floor) {
  return unit_eif(unit, Outcome::RMST, 1, tau, nu, weights, floor);
}

double eif_rmtl(const ObservedUnit& unit, int cause, double tau, const UnitNuisance& nu,
                const UnitWeights& weights, double floor) {
  return unit_eif(unit, Outcome::RMTL, cause, tau, nu, weights, floor);
}

std::array<EifComponents, 2> eif_components(const Cohort& cohort, const FittedNuisances& nuisances,
                                            Outcome outcome, int cause,
                                            const Eigen::VectorXd& tau, int threads) {
  if (tau.size() == 0) fail("empty tau grid");
  if (!(tau(0) > 0.0)) fail("tau values must be positive");
  for (Index q = 1; q < tau.size(); ++q) {
    if (!(tau(q) > tau(q - 1))) fail("tau grid must be strictly increasing");
  }
  if (outcome == Outcome::RMTL && (cause < 1 || cause > cohort.j_star())) {
    fail("cause " + std::to_string(cause) + " outside 1.." + std::to_string(cohort.j_star()));
  }
  const double horizon = tau(tau.size() - 1);
  const Index n = cohort.n();
  const Index T = tau.size();
  std::array<EifComponents, 2> out;
  for (int arm = 0; arm < 2; ++arm) {
    auto& c = out[static_cast<std::size_t>(arm)];
    c.arm = arm;
    c.outcome = outcome;
    c.cause = cause;
    c.tau = tau;
    c.regression.resize(n, T);
    c.augmentation.resize(n, T);
    for (int f = 0; f < nuisances.plan().k; ++f) {
      const ArmCurves curves = nuisances.curves(cohort, f, arm, horizon);
      const auto& rows = nuisances.plan().members[static_cast<std::size_t>(f)];
      const Eigen::MatrixXd& cif = outcome == Outcome::RMTL
                                       ? curves.cif[static_cast<std::size_t>(cause - 1)]
                                       : curves.surv;  // unused for RMST
      parallel_for(rows.size(), threads, [&](std::size_t r) {
        const auto col = static_cast<Index>(r);
        const Index i = rows[r];
        Eigen::VectorXd reg(T), aug(T);
        eif_terms(cohort.time()(i), cohort.cause()(i), outcome, cause, curves.grid,
                  curves.surv.col(col), curves.cens.col(col), curves.cens_cumhaz.col(col),
                  cif.col(col), tau, nuisances.floor(), reg.data(), aug.data());
        c.regression.row(i) = reg.transpose();
        c.augmentation.row(i) = aug.transpose();
      });
    }
  }
  return out;
}

EifMatrix tilted_eif(const EifComponents& comp, const Eigen::VectorXd& pi1,
                     const Eigen::VectorXi& treat, const CrossFitPlan& plan, Estimand estimand) {
  const Index n = comp.regression.rows();
  if (pi1.size() != n || treat.size() != n || plan.fold.size() != n) fail("length mismatch");
  const BalancingWeights bw = balancing_weights(estimand, pi1, treat, comp.arm);
  Eigen::VectorXd hs(n), ws(n);
  for (int f = 0; f < plan.k; ++f) {
    const auto& rows = plan.members[static_cast<std::size_t>(f)];
    double sh = 0.0, sw = 0.0;
    for (Index i : rows) {
      sh += bw.h(i);
      sw += bw.w(i);
    }
    const double nk = static_cast<double>(rows.size());
    if (!(sh > 0.0)) fail("fold " + std::to_string(f + 1) + ": tilting weights sum to zero");
    if (!(sw > 0.0)) fail("fold " + std::to_string(f + 1) + ": no units in arm " + std::to_string(comp.arm));
    for (Index i : rows) {
      hs(i) = bw.h(i) / (sh / nk);
      ws(i) = bw.w(i) / (sw / nk);
    }
  }
  EifMatrix e;
  e.arm = comp.arm;
  e.tau = comp.tau;
  e.fold = plan.fold;
  e.uncentered = (comp.regression.array().colwise() * hs.array() +
                  comp.augmentation.array().colwise() * ws.array())
                     .matrix();
  return e;
}

Eigen::VectorXd fold_estimate(const EifMatrix& eif, int fold) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(eif.uncentered.cols());
  Index count = 0;
  for (Index i = 0; i < eif.uncentered.rows(); ++i) {
    if (eif.fold(i) == fold) {
      sum += eif.uncentered.row(i).transpose();
      ++count;
    }
  }
  if (count == 0) fail("fold " + std::to_string(fold + 1) + " is empty");
  return sum / static_cast<double>(count);
}

Eigen::VectorXd combine_folds(const std::vector<Eigen::VectorXd>& estimates,
                              const std::vector<Index>& sizes) {
  if (estimates.empty() || estimates.size() != sizes.size()) fail("fold estimates and sizes differ");
  double total = 0.0;
  for (Index s : sizes) total += static_cast<double>(s);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(estimates.front().size());
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    out += (static_cast<double>(sizes[k]) / total) * estimates[k];
  }
  return out;
}

Eigen::VectorXd lcm_project(const Eigen::VectorXd& tau, const Eigen::VectorXd& values) {
  const Index T = tau.size();
  if (values.size() != T) fail("lcm: length mismatch");
  if (!values.allFinite()) fail("lcm: non-finite values");
  // Upper hull of (0,0), (tau_k, values_k) by a monotone chain.
  std::vector<double> hx{0.0}, hy{0.0};
  for (Index k = 0; k < T; ++k) {
    const double x = tau(k), y = values(k);
    while (hx.size() >= 2) {
      const std::size_t s = hx.size();
      const double cross = (hx[s - 1] - hx[s - 2]) * (y - hy[s - 2]) - (hy[s - 1] - hy[s - 2]) * (x - hx[s - 2]);
      if (cross >= 0.0) {
        hx.pop_back();
        hy.pop_back();
      } else {
        break;
      }
    }
    hx.push_back(x);
    hy.push_back(y);
  }
  Eigen::VectorXd out(T);
  std::size_t seg = 0;
  for (Index k = 0; k < T; ++k) {
    const double x = tau(k);
    while (seg + 1 < hx.size() - 1 && hx[seg + 1] < x) ++seg;
    if (x == hx[seg + 1]) {
      out(k) = hy[seg + 1];
    } else {
      const double frac = (x - hx[seg]) / (hx[seg + 1] - hx[seg]);
      out(k) = hy[seg] + frac * (hy[seg + 1] - hy[seg]);
    }
  }
  return out;
}

Eigen::VectorXd gcm_project(const Eigen::VectorXd& tau, const Eigen::VectorXd& values) {
  return -lcm_project(tau, -values);
}

Eigen::VectorXd cumulative_max(const Eigen::VectorXd& values) {
  Eigen::VectorXd out(values.size());
  double best = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < values.size(); ++k) {
    best = std::max(best, values(k));
    out(k) = best;
  }
  return out;
}

Eigen::VectorXd sandwich_sigma(const Eigen::MatrixXd& centered) {
  if (centered.rows() == 0) fail("no units");
  return (centered.array().square().colwise().sum() / static_cast<double>(centered.rows()))
      .sqrt()
      .transpose();
}

namespace {

void fill_errors(CurveBlock& b, const Eigen::MatrixXd& centered, Index n) {
  b.sigma = sandwich_sigma(centered);
  b.sigma_plus = cumulative_max(b.sigma);
  b.se = b.sigma_plus / std::sqrt(static_cast<double>(n));
}

}  // namespace

EstimateResult estimate_from_components(const std::array<EifComponents, 2>& comp,
                                        const Eigen::VectorXd& pi1, const Eigen::VectorXi& treat,
                                        const CrossFitPlan& plan, Estimand estimand,
                                        bool shape_correct) {
  EstimateResult res;
  auto& curve = res.curve;
  curve.tau = comp[0].tau;
  curve.outcome = comp[0].outcome;
  curve.cause = comp[0].cause;
  curve.estimand = estimand;
  curve.n = pi1.size();
  std::vector<Index> sizes;
  for (const auto& m : plan.members) sizes.push_back(static_cast<Index>(m.size()));
  for (int arm = 0; arm < 2; ++arm) {
    auto& e = res.arm[static_cast<std::size_t>(arm)];
    e = tilted_eif(comp[static_cast<std::size_t>(arm)], pi1, treat, plan, estimand);
    std::vector<Eigen::VectorXd> per_fold;
    for (int f = 0; f < plan.k; ++f) per_fold.push_back(fold_estimate(e, f));
    auto& b = curve.arm[static_cast<std::size_t>(arm)];
    b.raw = combine_folds(per_fold, sizes);
    if (!shape_correct) {
      b.corrected = b.raw;
    } else {
      b.corrected = curve.outcome == Outcome::RMST ? lcm_project(curve.tau, b.raw)
                                                   : gcm_project(curve.tau, b.raw);
    }
    e.centered = e.uncentered.rowwise() - b.corrected.transpose();
    fill_errors(b, e.centered, curve.n);
  }
  auto& c = curve.contrast;
  c.raw = curve.arm[1].raw - curve.arm[0].raw;
  c.corrected = curve.arm[1].corrected - curve.arm[0].corrected;
  res.contrast.arm = -1;
  res.contrast.tau = curve.tau;
  res.contrast.fold = plan.fold;
  res.contrast.uncentered = res.arm[1].uncentered - res.arm[0].uncentered;
  res.contrast.centered = res.arm[1].centered - res.arm[0].centered;
  fill_errors(c, res.contrast.centered, curve.n);
  return res;
}

EstimateResult estimate(const Cohort& cohort, const FittedNuisances& nuisances,
                        const DmlConfig& config) {
  const auto comp = eif_components(cohort, nuisances, config.outcome, config.cause, config.tau,
                                   config.threads);
  return estimate_from_components(comp, nuisances.propensity(), cohort.treat(), nuisances.plan(),
                                  config.estimand, config.shape_correct);
}

Eigen::VectorXd default_tau_grid(const Cohort& cohort, double tau_max,
                                 const std::vector<double>& extra) {
  if (!(tau_max > 0.0)) fail("tau_max must be positive");
  std::vector<double> t;
  for (Index i = 0; i < cohort.n(); ++i) {
    if (cohort.cause()(i) > 0 && cohort.time()(i) <= tau_max) t.push_back(cohort.time()(i));
  }
  for (double v : extra) {
    if (!(v > 0.0)) fail("tau values must be positive");
    t.push_back(v);
  }
  t.push_back(tau_max);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Index>(t.size()));
}

void write_curve_csv(std::ostream& out, const EstimateCurve& curve) {
  out << "tau,arm,estimate_raw,estimate_corrected,se\n";
  auto rows = [&](const CurveBlock& b, const char* label) {
    for (Index k = 0; k < curve.tau.size(); ++k) {
      out << curve.tau(k) << ',' << label << ',' << b.raw(k) << ',' << b.corrected(k) << ','
          << b.se(k) << '\n';
    }
  };
  rows(curve.arm[0], "0");
  rows(curve.arm[1], "1");
  rows(curve.contrast, "contrast");
}

}  // namespace wcte
