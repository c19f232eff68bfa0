#include "wcte/error.hpp"
#include "wcte/nuisance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("nuisance", message); }

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

}  // namespace

LearnerSpec LearnerSpec::parse(std::string_view text) {
  std::string s(text);
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }),
          s.end());
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  LearnerSpec spec;
  std::string arg;
  if (const auto colon = s.find(':'); colon != std::string::npos) {
    arg = s.substr(colon + 1);
    s = s.substr(0, colon);
  }
  if (s == "logistic") {
    spec.kind = LearnerKind::Logistic;
  } else if (s == "mean") {
    spec.kind = LearnerKind::Mean;
  } else if (s == "km" || s == "kaplan-meier" || s == "nelson-aalen") {
    spec.kind = LearnerKind::KaplanMeier;
  } else if (s == "exponential-ph" || s == "exponential") {
    spec.kind = LearnerKind::ExponentialPH;
  } else if (s == "weibull-ph" || s == "weibull") {
    spec.kind = LearnerKind::WeibullPH;
  } else if (s == "cox" || s == "cox-breslow") {
    spec.kind = LearnerKind::CoxBreslow;
  } else if (s == "discrete-hazard-logistic" || s == "discrete") {
    spec.kind = LearnerKind::DiscreteHazardLogistic;
    if (!arg.empty()) {
      try {
        spec.bins = std::stoi(arg);
      } catch (const std::exception&) {
        fail("bad bin count '" + arg + "'");
      }
      if (spec.bins < 1) fail("bin count must be positive");
    }
  } else if (s == "fixed") {
    spec.kind = LearnerKind::Fixed;
  } else {
    fail("unknown learner '" + std::string(text) + "'");
  }
  return spec;
}

std::string LearnerSpec::name() const {
  switch (kind) {
    case LearnerKind::Mean: return "mean";
    case LearnerKind::Logistic: return "logistic";
    case LearnerKind::KaplanMeier: return "kaplan-meier";
    case LearnerKind::ExponentialPH: return "exponential-ph";
    case LearnerKind::WeibullPH: return "weibull-ph";
    case LearnerKind::CoxBreslow: return "cox-breslow";
    case LearnerKind::DiscreteHazardLogistic:
      return "discrete-hazard-logistic:" + std::to_string(bins);
    case LearnerKind::Fixed: return "fixed";
  }
  return "?";
}

std::vector<LearnerSpec> parse_learners(std::string_view text) {
  std::vector<LearnerSpec> out;
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(LearnerSpec::parse(item));
  }
  if (out.empty()) fail("empty learner list");
  return out;
}

double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = design * beta;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) total += y(i) * eta(i) - softplus(eta(i));
  return total / static_cast<double>(eta.size());
}

Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& beta) {
  const Eigen::ArrayXd p = 1.0 / (1.0 + (-(design * beta).array()).exp());
  return design.transpose() * (y.array() - p).matrix() / static_cast<double>(y.size());
}

LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, int max_iter) {
  const Index p = design.cols();
  const double n = static_cast<double>(design.rows());
  LogisticFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  double ll = logistic_loglik(design, y, fit.beta);
  for (int iter = 1; iter <= max_iter; ++iter) {
    const Eigen::ArrayXd prob = 1.0 / (1.0 + (-(design * fit.beta).array()).exp());
    const Eigen::VectorXd grad = design.transpose() * (y.array() - prob).matrix() / n;
    fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
    fit.iterations = iter - 1;
    if (fit.gradient_norm < 1e-8) break;
    const Eigen::ArrayXd wt = prob * (1.0 - prob);
    Eigen::MatrixXd info = design.transpose() * (design.array().colwise() * wt).matrix() / n;
    info.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    double scale = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const Eigen::VectorXd trial = fit.beta + scale * step;
      const double trial_ll = logistic_loglik(design, y, trial);
      if (std::isfinite(trial_ll) && trial_ll >= ll - 1e-15) {
        fit.beta = trial;
        ll = trial_ll;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) fail("logistic: step-halving floor reached (separation?)");
    if ((design * fit.beta).cwiseAbs().maxCoeff() > 30.0) {
      fail("logistic: perfect separation detected");
    }
    if (iter == max_iter) {
      const Eigen::ArrayXd pr = 1.0 / (1.0 + (-(design * fit.beta).array()).exp());
      fit.gradient_norm =
          (design.transpose() * (y.array() - pr).matrix() / n).lpNorm<Eigen::Infinity>();
      fit.iterations = iter;
      if (fit.gradient_norm >= 1e-8) fail("logistic: no convergence after " + std::to_string(max_iter) + " iterations");
    }
  }
  // Complete separation can converge numerically with every probability at 0/1.
  if (ll > -1e-6) fail("logistic: perfect separation detected");
  fit.loglik = ll;
  return fit;
}

Eigen::VectorXd LogisticModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::ArrayXd eta = ((x * coef_.tail(coef_.size() - 1)).array() + coef_(0));
  return (1.0 / (1.0 + (-eta).exp())).matrix();
}

Eigen::VectorXd FixedPropensity::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = fn_(x.row(i));
  return out;
}

PropensityPtr fit_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXi& treat,
                             const LearnerSpec& spec) {
  const Index treated = treat.sum();
  if (treated == 0 || treated == treat.size()) fail("propensity: both arms must be present");
  const Eigen::VectorXd y = treat.cast<double>();
  switch (spec.kind) {
    case LearnerKind::Mean:
      return std::make_shared<ConstantPropensity>(y.mean());
    case LearnerKind::Logistic: {
      const auto fit = fit_logistic(with_intercept(x), y, spec.max_iter);
      return std::make_shared<LogisticModel>(fit.beta, fit.iterations);
    }
    default:
      fail("'" + spec.name() + "' is not a propensity learner");
  }
}

}  // namespace wcte
