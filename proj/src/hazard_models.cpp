#include "wcte/error.hpp"
#include "wcte/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("nuisance", message); }

std::vector<Index> order_by_time(const Eigen::VectorXd& time) {
  std::vector<Index> idx(static_cast<std::size_t>(time.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return time(a) < time(b); });
  return idx;
}

Eigen::MatrixXd eval_step(const Step& f, const Eigen::VectorXd& grid, bool left, Index cols) {
  Eigen::VectorXd v(grid.size());
  for (Index m = 0; m < grid.size(); ++m) v(m) = left ? f.left_limit(grid(m)) : f(grid(m));
  return v.replicate(1, cols);
}

// Damped Newton ascent on a concave-ish objective. `eval` returns the mean
// log-likelihood and fills gradient and Hessian.
template <typename Eval>
Eigen::VectorXd newton_ascent(Eigen::VectorXd beta, Eval&& eval, int max_iter, const char* what,
                              int* iterations) {
  Eigen::VectorXd grad(beta.size());
  Eigen::MatrixXd hess(beta.size(), beta.size());
  double ll = eval(beta, &grad, &hess);
  if (!std::isfinite(ll)) fail(std::string(what) + ": non-finite likelihood at start");
  for (int iter = 0; iter <= max_iter; ++iter) {
    Eigen::MatrixXd neg = -hess;
    double ridge = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd m = neg;
      m.diagonal().array() += ridge;
      llt.compute(m);
      if (llt.info() == Eigen::Success) break;
      ridge = ridge == 0.0 ? 1e-8 * std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff()) : ridge * 10;
    }
    const Eigen::VectorXd step = llt.solve(grad);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-8) {
      // A flat gradient with a large Newton step means the likelihood keeps
      // rising towards infinite coefficients.
      if (step.lpNorm<Eigen::Infinity>() > 1e-3)
        fail(std::string(what) + ": monotone likelihood, coefficients diverge");
      if (iterations) *iterations = iter;
      return beta;
    }
    if (iter == max_iter) break;
    double scale = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 50; ++halving) {
      const Eigen::VectorXd trial = beta + scale * step;
      Eigen::VectorXd g(beta.size());
      Eigen::MatrixXd h(beta.size(), beta.size());
      const double t = eval(trial, &g, &h);
      if (std::isfinite(t) && t >= ll - 1e-14) {
        beta = trial;
        ll = t;
        grad = g;
        hess = h;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) {
      if (grad.lpNorm<Eigen::Infinity>() < 1e-6) {
        if (iterations) *iterations = iter;
        return beta;
      }
      fail(std::string(what) + ": line search failed");
    }
  }
  fail(std::string(what) + ": no convergence after " + std::to_string(max_iter) + " iterations");
}

// Mean Cox log partial likelihood with optional derivatives (Breslow ties).
double cox_eval(const Eigen::MatrixXd& x, const Eigen::VectorXd& time, const Eigen::VectorXi& event,
                const std::vector<Index>& order, const Eigen::VectorXd& beta, Eigen::VectorXd* grad,
                Eigen::MatrixXd* hess) {
  const Index n = x.rows();
  const Index p = x.cols();
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  if (grad) grad->setZero(p);
  if (hess) hess->setZero(p, p);
  Index pos = n - 1;
  while (pos >= 0) {
    const double t = time(order[static_cast<std::size_t>(pos)]);
    Index start = pos;
    while (start >= 0 && time(order[static_cast<std::size_t>(start)]) == t) {
      const Index i = order[static_cast<std::size_t>(start)];
      const double r = std::exp(eta(i));
      s0 += r;
      if (grad) s1 += r * x.row(i).transpose();
      if (hess) s2.noalias() += r * x.row(i).transpose() * x.row(i);
      --start;
    }
    int d = 0;
    for (Index q = start + 1; q <= pos; ++q) {
      const Index i = order[static_cast<std::size_t>(q)];
      if (event(i)) {
        ++d;
        ll += eta(i);
        if (grad) *grad += x.row(i).transpose();
      }
    }
    if (d > 0) {
      ll -= d * std::log(s0);
      if (grad) *grad -= d * s1 / s0;
      if (hess) *hess -= d * (s2 / s0 - (s1 / s0) * (s1 / s0).transpose());
    }
    pos = start;
  }
  const double nd = static_cast<double>(n);
  if (grad) *grad /= nd;
  if (hess) *hess /= nd;
  return ll / nd;
}

}  // namespace

Eigen::VectorXd HazardModel::cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                                       bool left) const {
  Eigen::VectorXd out(x.rows());
  Eigen::VectorXd one(1);
  for (Index i = 0; i < x.rows(); ++i) {
    one(0) = times(i);
    out(i) = cumhaz(x.row(i), one, left)(0, 0);
  }
  return out;
}

Step HazardModel::curve(const Eigen::RowVectorXd& x, const Eigen::VectorXd& grid) const {
  const Eigen::MatrixXd xm = x;
  return Step(grid, cumhaz(xm, grid, false).col(0), 0.0);
}

SurvivalData hazard_data(const Cohort& cohort, std::span<const Index> rows, HazardTarget target,
                         int cause) {
  SurvivalData d;
  const auto m = static_cast<Index>(rows.size());
  d.x.resize(m, cohort.d());
  d.time.resize(m);
  d.event.resize(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    d.x.row(r) = cohort.covariates().row(i);
    d.time(r) = cohort.time()(i);
    const int c = cohort.cause()(i);
    switch (target) {
      case HazardTarget::AllCause: d.event(r) = c > 0; break;
      case HazardTarget::Cause: d.event(r) = c == cause; break;
      case HazardTarget::Censoring: d.event(r) = c == 0; break;
    }
  }
  return d;
}

Step nelson_aalen(const Eigen::VectorXd& time, const Eigen::VectorXi& event) {
  const auto order = order_by_time(time);
  const Index n = time.size();
  std::vector<double> grid, values;
  double acc = 0.0;
  Index pos = 0;
  while (pos < n) {
    const double t = time(order[static_cast<std::size_t>(pos)]);
    const Index at_risk = n - pos;
    int d = 0;
    while (pos < n && time(order[static_cast<std::size_t>(pos)]) == t) {
      d += event(order[static_cast<std::size_t>(pos)]);
      ++pos;
    }
    if (d > 0) {
      acc += static_cast<double>(d) / static_cast<double>(at_risk);
      grid.push_back(t);
      values.push_back(acc);
    }
  }
  const auto k = static_cast<Index>(grid.size());
  return Step(Eigen::Map<Eigen::VectorXd>(grid.data(), k), Eigen::Map<Eigen::VectorXd>(values.data(), k), 0.0);
}

Eigen::MatrixXd ZeroHazard::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                   bool) const {
  return Eigen::MatrixXd::Zero(grid.size(), x.rows());
}

Eigen::MatrixXd NelsonAalen::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                    bool left) const {
  return eval_step(base_, grid, left, x.rows());
}

Eigen::MatrixXd CoxModel::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                 bool left) const {
  const Eigen::RowVectorXd risk =
      ((x.rowwise() - center_.transpose()) * beta_).array().exp().matrix().transpose();
  Eigen::VectorXd base(grid.size());
  for (Index m = 0; m < grid.size(); ++m) base(m) = left ? base_.left_limit(grid(m)) : base_(grid(m));
  return base * risk;
}

Eigen::VectorXd CoxModel::cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                                    bool left) const {
  const Eigen::VectorXd risk = ((x.rowwise() - center_.transpose()) * beta_).array().exp();
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    out(i) = (left ? base_.left_limit(times(i)) : base_(times(i))) * risk(i);
  }
  return out;
}

Eigen::VectorXd WeibullModel::linear_predictor(const Eigen::MatrixXd& x) const {
  return (x * coef_.tail(coef_.size() - 1)).array() + coef_(0);
}

Eigen::MatrixXd WeibullModel::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                     bool) const {
  const Eigen::RowVectorXd scale = linear_predictor(x).array().exp().matrix().transpose();
  const Eigen::VectorXd g = shape_ == 1.0 ? grid : Eigen::VectorXd(grid.array().pow(shape_));
  return g * scale;
}

Eigen::VectorXd WeibullModel::cumhaz_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                                        bool) const {
  const Eigen::ArrayXd scale = linear_predictor(x).array().exp();
  return (scale * times.array().pow(shape_)).matrix();
}

Eigen::MatrixXd DiscreteHazardModel::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                            bool) const {
  const Index bins = cuts_.size() - 1;
  const Eigen::VectorXd slope = coef_.tail(coef_.size() - bins);
  const Eigen::VectorXd lin = x * slope;
  Eigen::MatrixXd out(grid.size(), x.rows());
  Eigen::VectorXd rate(bins), before(bins + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    before(0) = 0.0;
    for (Index b = 0; b < bins; ++b) {
      const double eta = coef_(b) + lin(i);
      // -log(1 - expit(eta)) = log(1 + exp(eta))
      const double h = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
      rate(b) = h / (cuts_(b + 1) - cuts_(b));
      before(b + 1) = before(b) + h;
    }
    for (Index m = 0; m < grid.size(); ++m) {
      const double t = grid(m);
      const Index b = std::min<Index>(
          bins - 1, static_cast<Index>(std::upper_bound(cuts_.data() + 1, cuts_.data() + bins, t) -
                                       (cuts_.data() + 1)));
      out(m, i) = before(b) + rate(b) * std::max(0.0, t - cuts_(b));
    }
  }
  return out;
}

Eigen::MatrixXd FixedHazard::cumhaz(const Eigen::MatrixXd& x, const Eigen::VectorXd& grid,
                                    bool) const {
  Eigen::RowVectorXd rate(x.rows());
  for (Index i = 0; i < x.rows(); ++i) rate(i) = rate_(x.row(i));
  return grid * rate;
}

double cox_partial_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& time,
                          const Eigen::VectorXi& event, const Eigen::VectorXd& beta) {
  return cox_eval(x, time, event, order_by_time(time), beta, nullptr, nullptr);
}

Eigen::VectorXd cox_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& time,
                             const Eigen::VectorXi& event, const Eigen::VectorXd& beta) {
  Eigen::VectorXd g(x.cols());
  cox_eval(x, time, event, order_by_time(time), beta, &g, nullptr);
  return g;
}

namespace {

HazardPtr fit_cox(const SurvivalData& d, int max_iter) {
  const Eigen::VectorXd center = d.x.colwise().mean();
  const Eigen::MatrixXd xc = d.x.rowwise() - center.transpose();
  const auto order = order_by_time(d.time);
  int iters = 0;
  const Eigen::VectorXd beta = newton_ascent(
      Eigen::VectorXd::Zero(d.x.cols()),
      [&](const Eigen::VectorXd& b, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
        return cox_eval(xc, d.time, d.event, order, b, g, h);
      },
      max_iter, "cox", &iters);
  // Breslow baseline on the centered scale.
  const Eigen::VectorXd risk = (xc * beta).array().exp();
  const Index n = d.time.size();
  std::vector<double> grid, values;
  Eigen::VectorXd tail(n + 1);
  tail(n) = 0.0;
  for (Index p = n - 1; p >= 0; --p) tail(p) = tail(p + 1) + risk(order[static_cast<std::size_t>(p)]);
  double acc = 0.0;
  Index pos = 0;
  while (pos < n) {
    const double t = d.time(order[static_cast<std::size_t>(pos)]);
    const double s0 = tail(pos);
    int events = 0;
    while (pos < n && d.time(order[static_cast<std::size_t>(pos)]) == t) {
      events += d.event(order[static_cast<std::size_t>(pos)]);
      ++pos;
    }
    if (events > 0) {
      acc += events / s0;
      grid.push_back(t);
      values.push_back(acc);
    }
  }
  const auto k = static_cast<Index>(grid.size());
  Step base(Eigen::Map<Eigen::VectorXd>(grid.data(), k), Eigen::Map<Eigen::VectorXd>(values.data(), k), 0.0);
  return std::make_shared<CoxModel>(beta, center, std::move(base), iters);
}

HazardPtr fit_weibull(const SurvivalData& d, bool exponential, int max_iter) {
  const Index n = d.x.rows();
  const Index p = d.x.cols() + 1;
  Eigen::MatrixXd z(n, p);
  z.col(0).setOnes();
  z.rightCols(p - 1) = d.x;
  const Eigen::ArrayXd delta = d.event.cast<double>().array();
  const Eigen::ArrayXd logt = d.time.array().log();
  const double nd = static_cast<double>(n);
  const double start = std::log(delta.sum() / d.time.sum());
  int iters = 0;
  if (exponential) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    beta(0) = start;
    beta = newton_ascent(
        beta,
        [&](const Eigen::VectorXd& b, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
          const Eigen::ArrayXd eta = (z * b).array();
          const Eigen::ArrayXd u = d.time.array() * eta.exp();
          *g = z.transpose() * (delta - u).matrix() / nd;
          *h = -(z.transpose() * (z.array().colwise() * u).matrix()) / nd;
          return (delta * eta - u).sum() / nd;
        },
        max_iter, "exponential-ph", &iters);
    return std::make_shared<WeibullModel>(beta, 1.0, true);
  }
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 1);  // beta then log shape
  theta(0) = start;
  theta = newton_ascent(
      theta,
      [&](const Eigen::VectorXd& th, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
        const Eigen::VectorXd b = th.head(p);
        const double s = th(p);
        const double k = std::exp(s);
        const Eigen::ArrayXd eta = (z * b).array();
        const Eigen::ArrayXd kl = k * logt;
        const Eigen::ArrayXd u = (eta + kl).exp();
        g->resize(p + 1);
        g->head(p) = z.transpose() * (delta - u).matrix() / nd;
        (*g)(p) = (delta * (1.0 + kl) - u * kl).sum() / nd;
        h->resize(p + 1, p + 1);
        h->topLeftCorner(p, p) = -(z.transpose() * (z.array().colwise() * u).matrix()) / nd;
        const Eigen::VectorXd cross = -(z.transpose() * (u * kl).matrix()) / nd;
        h->topRightCorner(p, 1) = cross;
        h->bottomLeftCorner(1, p) = cross.transpose();
        (*h)(p, p) = (delta * kl - u * kl * (1.0 + kl)).sum() / nd;
        return (delta * (eta + s + kl - logt) - u).sum() / nd;
      },
      max_iter, "weibull-ph", &iters);
  return std::make_shared<WeibullModel>(theta.head(p), std::exp(theta(p)), false);
}

HazardPtr fit_discrete(const SurvivalData& d, int bins, int max_iter) {
  std::vector<double> event_times;
  for (Index i = 0; i < d.time.size(); ++i) {
    if (d.event(i)) event_times.push_back(d.time(i));
  }
  std::sort(event_times.begin(), event_times.end());
  std::vector<double> cuts{0.0};
  const auto ne = event_times.size();
  for (int b = 1; b < bins; ++b) {
    const auto pos = static_cast<std::size_t>(std::ceil(static_cast<double>(b) * static_cast<double>(ne) / bins)) - 1;
    const double c = event_times[std::min(pos, ne - 1)];
    if (c > cuts.back()) cuts.push_back(c);
  }
  const double tmax = d.time.maxCoeff();
  if (tmax > cuts.back()) {
    cuts.push_back(tmax);
  } else {
    cuts.back() = tmax;
    if (cuts.size() < 2) cuts.push_back(tmax);
  }
  const auto nb = static_cast<Index>(cuts.size()) - 1;
  // Drop a trailing bin without events: it would separate.
  auto events_in = [&](Index b) {
    Index c = 0;
    for (double t : event_times) c += (t > cuts[static_cast<std::size_t>(b)] && t <= cuts[static_cast<std::size_t>(b + 1)]);
    return c;
  };
  Index used = nb;
  while (used > 1 && events_in(used - 1) == 0) {
    cuts.erase(cuts.end() - 2);
    --used;
  }
  std::vector<Index> unit;
  std::vector<Index> bin;
  std::vector<double> y;
  for (Index i = 0; i < d.time.size(); ++i) {
    for (Index b = 0; b < used; ++b) {
      if (!(d.time(i) > cuts[static_cast<std::size_t>(b)])) break;
      unit.push_back(i);
      bin.push_back(b);
      const bool in_bin = d.time(i) <= cuts[static_cast<std::size_t>(b + 1)] || b == used - 1;
      y.push_back(d.event(i) && in_bin ? 1.0 : 0.0);
    }
  }
  const auto rows = static_cast<Index>(y.size());
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(rows, used + d.x.cols());
  for (Index r = 0; r < rows; ++r) {
    design(r, bin[static_cast<std::size_t>(r)]) = 1.0;
    design.row(r).tail(d.x.cols()) = d.x.row(unit[static_cast<std::size_t>(r)]);
  }
  const auto fit = fit_logistic(design, Eigen::Map<Eigen::VectorXd>(y.data(), rows), max_iter);
  return std::make_shared<DiscreteHazardModel>(
      Eigen::Map<Eigen::VectorXd>(cuts.data(), static_cast<Index>(cuts.size())), fit.beta);
}

}  // namespace

HazardPtr fit_hazard(const SurvivalData& data, const LearnerSpec& spec) {
  if (data.event.sum() == 0) fail("no target events");
  switch (spec.kind) {
    case LearnerKind::KaplanMeier:
      return std::make_shared<NelsonAalen>(nelson_aalen(data.time, data.event));
    case LearnerKind::CoxBreslow:
      return fit_cox(data, spec.max_iter);
    case LearnerKind::ExponentialPH:
      return fit_weibull(data, true, spec.max_iter);
    case LearnerKind::WeibullPH:
      return fit_weibull(data, false, spec.max_iter);
    case LearnerKind::DiscreteHazardLogistic:
      return fit_discrete(data, spec.bins, spec.max_iter);
    default:
      fail("'" + spec.name() + "' is not a hazard learner");
  }
}

}  // namespace wcte
