#include "wcte/error.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/parallel.hpp"
#include "wcte/random.hpp"

#include <algorithm>
#include <numeric>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("nuisance", message); }

std::string arm_label(int arm) { return "arm " + std::to_string(arm); }

}  // namespace

std::vector<Index> CrossFitPlan::training(int f) const {
  std::vector<Index> rows;
  for (Index i = 0; i < fold.size(); ++i) {
    if (fold(i) != f) rows.push_back(i);
  }
  return rows;
}

CrossFitPlan make_plan(const Cohort& cohort, int k, std::uint64_t seed) {
  const Index n = cohort.n();
  if (k < 2 || k > n / 2) fail("K out of range (" + std::to_string(k) + " not in [2, " + std::to_string(n / 2) + "])");
  CrossFitPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = make_engine(seed, "folds");
  std::shuffle(perm.begin(), perm.end(), rng);
  plan.fold.resize(n);
  plan.members.assign(static_cast<std::size_t>(k), {});
  for (std::size_t p = 0; p < perm.size(); ++p) {
    plan.fold(perm[p]) = static_cast<int>(p % static_cast<std::size_t>(k));
  }
  for (Index i = 0; i < n; ++i) plan.members[static_cast<std::size_t>(plan.fold(i))].push_back(i);
  for (int f = 0; f < k; ++f) {
    Index treated = 0, total = 0;
    Eigen::VectorXi events = Eigen::VectorXi::Zero(cohort.j_star());
    for (Index i = 0; i < n; ++i) {
      if (plan.fold(i) == f) continue;
      ++total;
      treated += cohort.treat()(i);
      if (cohort.cause()(i) > 0) ++events(cohort.cause()(i) - 1);
    }
    const std::string tag = "fold " + std::to_string(f + 1) + ": ";
    if (treated == 0 || treated == total) fail(tag + "arm missing in training set");
    for (int j = 0; j < cohort.j_star(); ++j) {
      if (events(j) == 0) fail(tag + "no cause-" + std::to_string(j + 1) + " events in training set");
    }
  }
  return plan;
}

Index truncate_propensity(Eigen::VectorXd& pi1, double epsilon) {
  if (!(epsilon > 2.0)) fail("epsilon must exceed 2");
  const double lo = 1.0 / epsilon;
  const double hi = 1.0 - lo;
  Index moved = 0;
  for (Index i = 0; i < pi1.size(); ++i) {
    if (pi1(i) < lo) {
      pi1(i) = lo;
      ++moved;
    } else if (pi1(i) > hi) {
      pi1(i) = hi;
      ++moved;
    }
  }
  return moved;
}

namespace {

HazardPtr fit_target(const Cohort& cohort, const std::vector<Index>& rows,
                     const std::vector<LearnerSpec>& specs, const NuisanceSpecs& all, int arm,
                     HazardTarget target, int cause, std::uint64_t seed) {
  const std::string what = target == HazardTarget::Censoring ? "censoring hazard"
                           : target == HazardTarget::Cause   ? "cause-" + std::to_string(cause) + " hazard"
                                                             : "event hazard";
  try {
    if (specs.size() == 1 && specs.front().kind == LearnerKind::Fixed) {
      if (!all.fixed_hazard) fail("fixed learner without a supplier");
      return all.fixed_hazard(arm, target, cause);
    }
    const SurvivalData data = hazard_data(cohort, rows, target, cause);
    if (target == HazardTarget::Censoring && data.event.sum() == 0) {
      return std::make_shared<ZeroHazard>();
    }
    return stack_hazard(data, specs, all.inner_folds, all.loss, seed);
  } catch (const Error& e) {
    fail(arm_label(arm) + " " + what + ": " + e.detail());
  }
}

}  // namespace

FoldModels fit_models(const Cohort& cohort, std::span<const Index> train,
                      const NuisanceSpecs& specs, std::uint64_t seed) {
  FoldModels out;
  const std::vector<Index> rows(train.begin(), train.end());
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), cohort.d());
  Eigen::VectorXi a(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(static_cast<Index>(r)) = cohort.covariates().row(rows[r]);
    a(static_cast<Index>(r)) = cohort.treat()(rows[r]);
  }
  try {
    if (specs.propensity.size() == 1 && specs.propensity.front().kind == LearnerKind::Fixed) {
      if (!specs.fixed_propensity) fail("fixed learner without a supplier");
      out.propensity = specs.fixed_propensity();
    } else {
      out.propensity = stack_propensity(x, a, specs.propensity, specs.inner_folds, specs.loss,
                                        substream_seed(seed, "propensity"));
    }
  } catch (const Error& e) {
    fail(std::string("propensity: ") + e.detail());
  }
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<Index> arm_rows;
    for (Index i : rows) {
      if (cohort.treat()(i) == arm) arm_rows.push_back(i);
    }
    if (arm_rows.empty()) fail(arm_label(arm) + " missing in training set");
    if (cohort.j_star() == 1) {
      out.event[static_cast<std::size_t>(arm)] =
          fit_target(cohort, arm_rows, specs.event, specs, arm, HazardTarget::AllCause, 1,
                     substream_seed(seed, "event", static_cast<std::uint64_t>(arm)));
    } else {
      for (int j = 1; j <= cohort.j_star(); ++j) {
        out.causes[static_cast<std::size_t>(arm)].push_back(
            fit_target(cohort, arm_rows, specs.event, specs, arm, HazardTarget::Cause, j,
                       substream_seed(seed, "cause", static_cast<std::uint64_t>(arm * 64 + j))));
      }
    }
    out.censoring[static_cast<std::size_t>(arm)] =
        fit_target(cohort, arm_rows, specs.censoring, specs, arm, HazardTarget::Censoring, 0,
                   substream_seed(seed, "censoring", static_cast<std::uint64_t>(arm)));
  }
  return out;
}

Eigen::MatrixXd survival_from_cumhaz(const Eigen::MatrixXd& cumhaz, SurvivalTransform mode) {
  if (mode == SurvivalTransform::Exp) return (-cumhaz.array()).exp().matrix();
  Eigen::MatrixXd s(cumhaz.rows(), cumhaz.cols());
  for (Index c = 0; c < cumhaz.cols(); ++c) {
    double acc = 1.0;
    double prev = 0.0;
    for (Index m = 0; m < cumhaz.rows(); ++m) {
      const double d = std::clamp(cumhaz(m, c) - prev, 0.0, 1.0);
      prev = cumhaz(m, c);
      acc *= 1.0 - d;
      s(m, c) = acc;
    }
  }
  return s;
}

namespace {

ArmCurves curves_on_grid(const Eigen::MatrixXd& x, const FoldModels& models, int arm,
                          const Eigen::VectorXd& grid, int j_star) {
  const auto a = static_cast<std::size_t>(arm);
  ArmCurves c;
  c.grid = grid;
  if (j_star == 1) {
    const auto& m = models.event[a];
    c.surv = survival_from_cumhaz(m->cumhaz(x, grid), m->transform());
    c.cif.push_back((1.0 - c.surv.array()).matrix());
  } else {
    std::vector<Eigen::MatrixXd> lam;
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(grid.size(), x.rows());
    bool product_limit = true;
    for (const auto& m : models.causes[a]) {
      lam.push_back(m->cumhaz(x, grid));
      total += lam.back();
      product_limit = product_limit && m->transform() == SurvivalTransform::ProductLimit;
    }
    c.surv = survival_from_cumhaz(total, product_limit ? SurvivalTransform::ProductLimit
                                                       : SurvivalTransform::Exp);
    for (const auto& l : lam) {
      Eigen::MatrixXd f(grid.size(), x.rows());
      for (Index u = 0; u < x.rows(); ++u) {
        double acc = 0.0, s_left = 1.0, prev = 0.0;
        for (Index m = 0; m < grid.size(); ++m) {
          acc += s_left * std::max(0.0, l(m, u) - prev);
          prev = l(m, u);
          s_left = c.surv(m, u);
          f(m, u) = acc;
        }
      }
      c.cif.push_back(std::move(f));
    }
  }
  const auto& cm = models.censoring[a];
  c.cens_cumhaz = cm->cumhaz(x, grid);
  c.cens = survival_from_cumhaz(c.cens_cumhaz, cm->transform());
  return c;
}

}  // namespace

Eigen::VectorXd product_limit_jumps(const std::vector<HazardPtr>& models, double lo, double hi) {
  std::vector<double> t;
  for (const auto& m : models) {
    if (m->transform() != SurvivalTransform::ProductLimit) continue;
    const Eigen::VectorXd j = m->jumps();
    for (Index k = 0; k < j.size(); ++k) {
      if (j(k) > lo && j(k) <= hi) t.push_back(j(k));
    }
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Index>(t.size()));
}

ArmCurves evaluate_curves(const Eigen::MatrixXd& x, const FoldModels& models, int arm,
                          const Eigen::VectorXd& grid, int j_star) {
  const auto a = static_cast<std::size_t>(arm);
  if (grid.size() == 0) return curves_on_grid(x, models, arm, grid, j_star);
  std::vector<HazardPtr> all = j_star == 1 ? std::vector<HazardPtr>{models.event[a]} : models.causes[a];
  all.push_back(models.censoring[a]);
  const Eigen::VectorXd extra = product_limit_jumps(all, 0.0, grid(grid.size() - 1));
  std::vector<double> merged(grid.data(), grid.data() + grid.size());
  merged.insert(merged.end(), extra.data(), extra.data() + extra.size());
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  if (static_cast<Index>(merged.size()) == grid.size()) return curves_on_grid(x, models, arm, grid, j_star);

  const Eigen::VectorXd fine = Eigen::Map<Eigen::VectorXd>(merged.data(), static_cast<Index>(merged.size()));
  std::vector<Index> pick(static_cast<std::size_t>(grid.size()));
  for (Index m = 0; m < grid.size(); ++m) {
    pick[static_cast<std::size_t>(m)] =
        static_cast<Index>(std::lower_bound(merged.begin(), merged.end(), grid(m)) - merged.begin());
  }
  auto select = [&](const Eigen::MatrixXd& src, Eigen::MatrixXd& dst, Index col) {
    for (Index m = 0; m < grid.size(); ++m) dst.block(m, col, 1, src.cols()) = src.row(pick[static_cast<std::size_t>(m)]);
  };
  ArmCurves out;
  out.grid = grid;
  const Index n = x.rows();
  out.surv.resize(grid.size(), n);
  out.cens.resize(grid.size(), n);
  out.cens_cumhaz.resize(grid.size(), n);
  out.cif.assign(static_cast<std::size_t>(j_star), Eigen::MatrixXd(grid.size(), n));
  // Units in blocks keep the fine-grid matrices small.
  const Index block = 256;
  for (Index c0 = 0; c0 < n; c0 += block) {
    const Index w = std::min(block, n - c0);
    const ArmCurves part = curves_on_grid(x.middleRows(c0, w), models, arm, fine, j_star);
    select(part.surv, out.surv, c0);
    select(part.cens, out.cens, c0);
    select(part.cens_cumhaz, out.cens_cumhaz, c0);
    for (std::size_t j = 0; j < part.cif.size(); ++j) select(part.cif[j], out.cif[j], c0);
  }
  return out;
}

Eigen::VectorXd FittedNuisances::fold_grid(const Cohort& cohort, int fold, double horizon) const {
  std::vector<double> t;
  for (Index i : plan_.members.at(static_cast<std::size_t>(fold))) {
    if (cohort.time()(i) <= horizon) t.push_back(cohort.time()(i));
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Index>(t.size()));
}

ArmCurves FittedNuisances::curves(const Cohort& cohort, int fold, int arm, double horizon) const {
  const auto& rows = plan_.members.at(static_cast<std::size_t>(fold));
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), cohort.d());
  for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Index>(r)) = cohort.covariates().row(rows[r]);
  return evaluate_curves(x, models(fold), arm, fold_grid(cohort, fold, horizon), j_star_);
}

FittedNuisances cross_fit(const Cohort& cohort, const CrossFitPlan& plan,
                          const NuisanceSpecs& specs, double epsilon, int threads) {
  if (plan.fold.size() != cohort.n()) fail("plan does not match cohort");
  std::vector<FoldModels> models(static_cast<std::size_t>(plan.k));
  parallel_for(static_cast<std::size_t>(plan.k), threads, [&](std::size_t f) {
    const auto train = plan.training(static_cast<int>(f));
    try {
      models[f] = fit_models(cohort, train, specs, substream_seed(plan.seed, "nuisance", f));
    } catch (const Error& e) {
      fail("fold " + std::to_string(f + 1) + ": " + e.detail());
    }
  });
  Eigen::VectorXd pi1(cohort.n());
  for (int f = 0; f < plan.k; ++f) {
    const auto& rows = plan.members[static_cast<std::size_t>(f)];
    Eigen::MatrixXd x(static_cast<Index>(rows.size()), cohort.d());
    for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Index>(r)) = cohort.covariates().row(rows[r]);
    const Eigen::VectorXd p = models[static_cast<std::size_t>(f)].propensity->predict(x);
    for (std::size_t r = 0; r < rows.size(); ++r) pi1(rows[r]) = p(static_cast<Index>(r));
  }
  const Index moved = truncate_propensity(pi1, epsilon);
  return FittedNuisances(plan, std::move(models), std::move(pi1), epsilon, moved, cohort.j_star());
}

}  // namespace wcte
