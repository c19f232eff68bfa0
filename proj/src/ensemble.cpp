#include "wcte/error.hpp"
#include "wcte/nuisance.hpp"
#include "wcte/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("nuisance", message); }

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

std::vector<int> inner_assignment(Index n, int folds, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = make_engine(seed, "stack");
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t p = 0; p < perm.size(); ++p) fold[static_cast<std::size_t>(perm[p])] = static_cast<int>(p % static_cast<std::size_t>(folds));
  return fold;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
  return out;
}

template <typename V>
V take(const V& v, const std::vector<Index>& rows) {
  V out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
  return out;
}

SurvivalData take_data(const SurvivalData& d, const std::vector<Index>& rows) {
  return {take_rows(d.x, rows), take(d.time, rows), take(d.event, rows)};
}

// Member survival matrix (grid x units). Mixtures always use exp(-Lambda) so
// the result does not depend on the evaluation grid.
Eigen::MatrixXd member_survival(const HazardModel& m, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& grid) {
  return (-m.cumhaz(x, grid, false).array()).exp().matrix();
}

StackInfo finish_info(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& loss,
                      Index dim) {
  StackInfo info;
  info.learner_loss.resize(dim);
  Eigen::VectorXd g(dim);
  for (Index l = 0; l < dim; ++l) {
    info.learner_loss(l) = loss(Eigen::VectorXd::Unit(dim, l), g);
  }
  info.weights = simplex_minimize(loss, dim);
  info.ensemble_loss = loss(info.weights, g);
  return info;
}

}  // namespace

Eigen::VectorXd simplex_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& loss, Index dim,
    int max_iter) {
  Eigen::VectorXd grad(dim);
  Index best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (Index l = 0; l < dim; ++l) {
    const double v = loss(Eigen::VectorXd::Unit(dim, l), grad);
    if (v < best_loss) {
      best_loss = v;
      best = l;
    }
  }
  Eigen::VectorXd w = Eigen::VectorXd::Unit(dim, best);
  double current = loss(w, grad);
  double step = 1.0 / std::max(1e-12, grad.cwiseAbs().maxCoeff());
  Eigen::VectorXd trial_grad(dim);
  for (int iter = 0; iter < max_iter && step > 1e-14; ++iter) {
    const Eigen::VectorXd trial = project_simplex(w - step * grad);
    const double v = loss(trial, trial_grad);
    if (std::isfinite(v) && v < current - 1e-15) {
      w = trial;
      current = v;
      grad = trial_grad;
      step *= 1.5;
    } else {
      step *= 0.5;
    }
  }
  Index top = 0;
  if (w.maxCoeff(&top) >= 1.0 - 1e-6) {
    const Eigen::VectorXd vertex = Eigen::VectorXd::Unit(dim, top);
    if (loss(vertex, grad) <= current + 1e-9) w = vertex;
  }
  return w;
}

Eigen::VectorXd StackedPropensity::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t l = 0; l < members_.size(); ++l) {
    if (weights_(static_cast<Index>(l)) > 0) p += weights_(static_cast<Index>(l)) * members_[l]->predict(x);
  }
  return p;
}

Eigen::MatrixXd StackedHazard::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                      bool left) const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(grid.size(), x.rows());
  for (std::size_t l = 0; l < members_.size(); ++l) {
    const double w = weights_(static_cast<Index>(l));
    if (w <= 0) continue;
    s += w * (-members_[l]->cumhaz(x, grid, left).array()).exp().matrix();
  }
  return -(s.array().max(1e-300)).log().matrix();
}

Eigen::VectorXd StackedHazard::cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                                         bool left) const {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t l = 0; l < members_.size(); ++l) {
    const double w = weights_(static_cast<Index>(l));
    if (w > 0) s += w * (-members_[l]->cumhaz_at(x, times, left).array()).exp().matrix();
  }
  return -(s.array().max(1e-300)).log().matrix();
}

PropensityPtr stack_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXi& treat,
                               const std::vector<LearnerSpec>& specs, int folds,
                               EnsembleLoss loss, std::uint64_t seed, StackInfo* info) {
  if (specs.empty()) fail("stack: no learners");
  if (specs.size() == 1) {
    if (info) *info = StackInfo{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 0.0};
    return fit_propensity(x, treat, specs.front());
  }
  const Index n = x.rows();
  if (folds < 2 || folds > n / 2) fail("stack: inner fold count out of range");
  const auto assign = inner_assignment(n, folds, seed);
  const auto L = static_cast<Index>(specs.size());
  Eigen::MatrixXd pred(n, L);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (assign[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    const Eigen::VectorXi tr = take(treat, train);
    if (tr.sum() == 0 || tr.sum() == tr.size()) fail("stack: inner CV infeasible (fold without both arms)");
    const Eigen::MatrixXd xtr = take_rows(x, train);
    const Eigen::MatrixXd xte = take_rows(x, test);
    for (Index l = 0; l < L; ++l) {
      const Eigen::VectorXd p = fit_propensity(xtr, tr, specs[static_cast<std::size_t>(l)])->predict(xte);
      for (std::size_t r = 0; r < test.size(); ++r) pred(test[r], l) = p(static_cast<Index>(r));
    }
  }
  const Eigen::ArrayXd y = treat.cast<double>().array();
  const double nd = static_cast<double>(n);
  auto objective = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
    const Eigen::ArrayXd p = (pred * w).array().max(1e-12).min(1.0 - 1e-12);
    if (loss == EnsembleLoss::Brier) {
      g = pred.transpose() * (-2.0 * (y - p)).matrix() / nd;
      return (y - p).square().sum() / nd;
    }
    g = pred.transpose() * (-(y / p) + (1.0 - y) / (1.0 - p)).matrix() / nd;
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum() / nd;
  };
  const StackInfo result = finish_info(objective, L);
  if (info) *info = result;
  std::vector<PropensityPtr> members;
  Index top = 0;
  if (result.weights.maxCoeff(&top) == 1.0) return fit_propensity(x, treat, specs[static_cast<std::size_t>(top)]);
  for (const auto& s : specs) members.push_back(fit_propensity(x, treat, s));
  return std::make_shared<StackedPropensity>(std::move(members), result.weights);
}

HazardPtr stack_hazard(const SurvivalData& data, const std::vector<LearnerSpec>& specs, int folds,
                       EnsembleLoss loss, std::uint64_t seed, StackInfo* info) {
  if (specs.empty()) fail("stack: no learners");
  if (specs.size() == 1) {
    if (info) *info = StackInfo{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 0.0};
    return fit_hazard(data, specs.front());
  }
  const Index n = data.time.size();
  if (folds < 2 || folds > n / 2) fail("stack: inner fold count out of range");
  const auto assign = inner_assignment(n, folds, seed);
  const auto L = static_cast<Index>(specs.size());
  const Eigen::VectorXd grid = distinct_sorted(data.time);

  // Evaluation points: bin edges (likelihood) or time quantiles (Brier).
  std::vector<double> ev;
  for (Index i = 0; i < n; ++i) {
    if (data.event(i)) ev.push_back(data.time(i));
  }
  if (ev.empty()) fail("no target events");
  std::sort(ev.begin(), ev.end());
  std::vector<double> sorted_t(data.time.data(), data.time.data() + n);
  std::sort(sorted_t.begin(), sorted_t.end());
  std::vector<double> points;
  const int bins = 10;
  if (loss == EnsembleLoss::NegLogLik) {
    for (int b = 1; b < bins; ++b) {
      const double c = ev[std::min(ev.size() - 1, static_cast<std::size_t>(b * ev.size() / bins))];
      if (points.empty() || c > points.back()) points.push_back(c);
    }
  } else {
    for (int b = 1; b <= 9; ++b) {
      const double c = sorted_t[std::min(sorted_t.size() - 1, static_cast<std::size_t>(b * sorted_t.size() / 10))];
      if (points.empty() || c > points.back()) points.push_back(c);
    }
  }
  const auto P = static_cast<Index>(points.size());
  const Eigen::VectorXd pts = Eigen::Map<Eigen::VectorXd>(points.data(), P);

  // surv[l]: units x points survival under learner l fitted without the unit.
  std::vector<Eigen::MatrixXd> surv(static_cast<std::size_t>(L), Eigen::MatrixXd(n, P));
  Eigen::VectorXd at_time(n);  // G(T-) for Brier weights, filled below
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (assign[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    const SurvivalData tr = take_data(data, train);
    if (tr.event.sum() == 0) fail("stack: inner CV infeasible (fold without events)");
    const Eigen::MatrixXd xte = take_rows(data.x, test);
    for (Index l = 0; l < L; ++l) {
      const auto model = fit_hazard(tr, specs[static_cast<std::size_t>(l)]);
      const Eigen::MatrixXd s = member_survival(*model, xte, grid);  // grid x test
      for (Index p = 0; p < P; ++p) {
        const Index k = static_cast<Index>(std::upper_bound(grid.data(), grid.data() + grid.size(), pts(p)) - grid.data()) - 1;
        for (std::size_t r = 0; r < test.size(); ++r) {
          surv[static_cast<std::size_t>(l)](test[r], p) = k < 0 ? 1.0 : s(k, static_cast<Index>(r));
        }
      }
    }
  }

  const double nd = static_cast<double>(n);
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> objective;
  if (loss == EnsembleLoss::NegLogLik) {
    // Grouped-time likelihood on bins (0, c1], (c1, c2], ..., (c_last, inf).
    std::vector<Index> bin(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      bin[static_cast<std::size_t>(i)] = static_cast<Index>(std::lower_bound(points.begin(), points.end(), data.time(i)) - points.begin());
    }
    objective = [&, bin](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
      g.setZero(L);
      double total = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Index b = bin[static_cast<std::size_t>(i)];
        Eigen::VectorXd coef(L);
        for (Index l = 0; l < L; ++l) {
          const auto& s = surv[static_cast<std::size_t>(l)];
          const double start = b == 0 ? 1.0 : s(i, b - 1);
          const double end = b < P ? s(i, b) : 0.0;
          coef(l) = data.event(i) ? start - end : start;
        }
        const double v = std::max(coef.dot(w), 1e-12);
        total -= std::log(v);
        g -= coef / v;
      }
      g /= nd;
      return total / nd;
    };
  } else {
    Eigen::VectorXi cens_event = (1 - data.event.array()).matrix();
    const Step cens = cumhaz_to_survival(nelson_aalen(data.time, cens_event));
    Eigen::MatrixXd weight(n, P), target(n, P);
    for (Index i = 0; i < n; ++i) {
      const double g_left = std::max(cens.left_limit(data.time(i)), 1e-3);
      for (Index p = 0; p < P; ++p) {
        const bool alive = data.time(i) > pts(p);
        target(i, p) = alive ? 1.0 : 0.0;
        weight(i, p) = alive ? 1.0 / std::max(cens(pts(p)), 1e-3) : (data.event(i) ? 1.0 / g_left : 0.0);
      }
    }
    objective = [&, weight, target](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
      Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(n, P);
      for (Index l = 0; l < L; ++l) mix += w(l) * surv[static_cast<std::size_t>(l)];
      const Eigen::ArrayXXd resid = target.array() - mix.array();
      g.resize(L);
      for (Index l = 0; l < L; ++l) {
        g(l) = (-2.0 * weight.array() * resid * surv[static_cast<std::size_t>(l)].array()).sum() / (nd * P);
      }
      return (weight.array() * resid.square()).sum() / (nd * P);
    };
  }
  const StackInfo result = finish_info(objective, L);
  if (info) *info = result;
  Index top = 0;
  if (result.weights.maxCoeff(&top) == 1.0) return fit_hazard(data, specs[static_cast<std::size_t>(top)]);
  std::vector<HazardPtr> members;
  for (const auto& s : specs) members.push_back(fit_hazard(data, s));
  return std::make_shared<StackedHazard>(std::move(members), result.weights);
}

}  // namespace wcte
