#include "wcte/simlab.hpp"

#include "wcte/error.hpp"
#include "wcte/inference.hpp"
#include "wcte/parallel.hpp"
#include "wcte/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <ostream>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("simlab", message); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

DgpSetting make_setting(int id) {
  DgpSetting s;
  s.id = id;
  const bool poor = id == 2 || id == 4;
  s.propensity = poor ? std::array<double, 7>{-1.0, 1.0, 1.5, 1.5, -1.0, -1.5, -1.0}
                      : std::array<double, 7>{0.3, 0.2, 0.3, 0.3, -0.2, -0.3, -0.2};
  s.causes[0].push_back({0.12, 0.1, {0.1, -0.2, 0.2, 0.1, 0.8, -0.2}});
  s.causes[1].push_back({0.15, 0.17, {0.2, -0.1, 0.4, 0.2, 0.3, 0.4}});
  const bool competing = id >= 3;
  if (competing) {
    s.causes[0].push_back({0.1, 0.12, {-0.1, 0.3, 0.1, 0.2, -0.4, 0.5}});
    s.causes[1].push_back({0.08, 0.1, {-0.2, -0.1, 0.2, 0.3, 0.3, -0.3}});
  }
  s.censoring[0] = {competing ? 0.12 : 0.06, 0.1, {0.4, -0.7, -0.4, -0.5, 0.8, -0.6}};
  s.censoring[1] = {competing ? 0.14 : 0.08, 0.0, {0.5, -0.6, 0.2, 0.6, 0.9, -0.5}};
  return s;
}

const std::array<DgpSetting, 4>& registry() {
  static const std::array<DgpSetting, 4> r{make_setting(1), make_setting(2), make_setting(3),
                                           make_setting(4)};
  return r;
}

struct CovariateSampler {
  Eigen::Matrix3d chol;

  explicit CovariateSampler(double rho) {
    Eigen::Matrix3d c = Eigen::Matrix3d::Constant(rho);
    c.diagonal().setOnes();
    chol = c.llt().matrixL();
  }

  template <class Rng, class Row>
  void draw(Rng& rng, Row&& row) const {
    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.5);
    Eigen::Vector3d z;
    for (int k = 0; k < 3; ++k) z(k) = normal(rng);
    const Eigen::Vector3d v = chol * z;
    for (int k = 0; k < 3; ++k) row(k) = v(k);
    for (int k = 3; k < 6; ++k) row(k) = coin(rng) ? 1.0 : 0.0;
  }
};

double total_rate(const DgpSetting& s, int arm, const CovariateRow& x) {
  double r = 0.0;
  for (const auto& h : s.causes[static_cast<std::size_t>(arm)]) r += h.rate(x);
  return r;
}

}  // namespace

double LogLinearHazard::rate(const CovariateRow& x) const {
  double lp = intercept;
  for (int k = 0; k < 6; ++k) lp += beta[static_cast<std::size_t>(k)] * x(k);
  return scale * std::exp(lp);
}

double DgpSetting::pi1(const CovariateRow& x) const {
  double lp = propensity[0];
  for (int k = 0; k < 6; ++k) lp += propensity[static_cast<std::size_t>(k + 1)] * x(k);
  return 1.0 / (1.0 + std::exp(lp));
}

const DgpSetting& dgp_setting(int id) {
  if (id < 1 || id > 4) fail("setting must be 1..4, got " + std::to_string(id));
  return registry()[static_cast<std::size_t>(id - 1)];
}

Eigen::MatrixXd draw_covariates(const DgpSetting& setting, Index n, std::uint64_t seed) {
  auto rng = make_engine(seed, "covariates");
  const CovariateSampler sampler(setting.correlation);
  Eigen::MatrixXd x(n, 6);
  for (Index i = 0; i < n; ++i) sampler.draw(rng, x.row(i));
  return x;
}

SimulatedData generate(int setting, Index n, std::uint64_t seed, const DgpOptions& options) {
  const DgpSetting& s = dgp_setting(setting);
  if (n < 2) fail("n must be at least 2");
  auto rng = make_engine(seed, "dgp");
  const CovariateSampler sampler(s.correlation);
  const int J = s.j_star();
  Eigen::MatrixXd x(n, 6);
  Eigen::VectorXi a(n), cause(n);
  Eigen::VectorXd time(n), pi1(n);
  SimulatedData out{Cohort(Eigen::MatrixXd::Zero(2, 1), Eigen::Vector2i(0, 1), Eigen::Vector2d(1, 1),
                           Eigen::Vector2i(0, 0)),
                    {}, {}, {}};
  for (int arm = 0; arm < 2; ++arm) {
    out.cause_rate[static_cast<std::size_t>(arm)].resize(n, J);
    out.censor_rate[static_cast<std::size_t>(arm)].resize(n);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    sampler.draw(rng, x.row(i));
    const double p = s.pi1(x.row(i));
    int ai = unif(rng) < p ? 1 : 0;
    pi1(i) = p;
    if (options.reverse_treatment) {
      ai = 1 - ai;
      pi1(i) = 1.0 - p;
    }
    a(i) = ai;
    std::array<double, 2> t_arm{}, c_arm{};
    std::array<int, 2> j_arm{};
    for (int arm = 0; arm < 2; ++arm) {
      const auto sa = static_cast<std::size_t>(arm);
      double best = std::numeric_limits<double>::infinity();
      int jb = 0;
      for (int j = 0; j < J; ++j) {
        const double r = s.causes[sa][static_cast<std::size_t>(j)].rate(x.row(i));
        out.cause_rate[sa](i, j) = r;
        const double t = std::exponential_distribution<double>(r)(rng);
        if (t < best) {
          best = t;
          jb = j + 1;
        }
      }
      const double cr = s.censoring[sa].rate(x.row(i));
      out.censor_rate[sa](i) = cr;
      t_arm[sa] = best;
      j_arm[sa] = jb;
      c_arm[sa] = std::exponential_distribution<double>(cr)(rng);
    }
    const auto sa = static_cast<std::size_t>(ai);
    double c = c_arm[sa];
    if (options.admin_horizon > 0.0) c = std::min(c, options.admin_horizon);
    if (t_arm[sa] <= c) {
      time(i) = t_arm[sa];
      cause(i) = j_arm[sa];
    } else {
      time(i) = c;
      cause(i) = 0;
    }
  }
  out.cohort = Cohort(std::move(x), std::move(a), std::move(time), std::move(cause), J);
  out.pi1 = std::move(pi1);
  return out;
}

DgpSummary summarize(const Cohort& cohort, double tau, int cause) {
  DgpSummary s;
  const double n = static_cast<double>(cohort.n());
  s.treated = cohort.treat().cast<double>().sum() / n;
  Index cens = 0, ev = 0;
  for (Index i = 0; i < cohort.n(); ++i) {
    if (cohort.cause()(i) == 0) ++cens;
    if (cohort.cause()(i) == cause && cohort.time()(i) <= tau) ++ev;
  }
  s.censored = static_cast<double>(cens) / n;
  s.event_before = static_cast<double>(ev) / n;
  return s;
}

double exponential_rmst(double total_rate, double tau) {
  if (total_rate <= 0.0) return tau;
  return -std::expm1(-total_rate * tau) / total_rate;
}

double exponential_rmtl(double cause_rate, double total_rate, double tau) {
  if (total_rate <= 0.0) return 0.0;
  return cause_rate / total_rate * (tau - exponential_rmst(total_rate, tau));
}

const TruthCurve& TruthSet::at(Estimand e) const {
  for (const auto& c : curves) {
    if (c.estimand == e) return c;
  }
  fail("estimand " + estimand_name(e) + " not in truth set");
}

TruthSet true_effects(int setting, const std::vector<Estimand>& estimands, Outcome outcome,
                      int cause, const Eigen::VectorXd& tau, Index draws, std::uint64_t seed,
                      int threads, const DgpOptions& options) {
  const DgpSetting& s = dgp_setting(setting);
  if (draws < 2) fail("need at least 2 oracle draws");
  if (estimands.empty()) fail("no estimands");
  if (outcome == Outcome::RMTL && (cause < 1 || cause > s.j_star())) fail("cause out of range");
  const Index T = tau.size();
  const Index E = static_cast<Index>(estimands.size());
  const Index chunk = 50'000;
  const auto chunks = static_cast<std::size_t>((draws + chunk - 1) / chunk);

  // Regression values and tilts for one chunk.
  auto evaluate = [&](std::size_t c, Eigen::MatrixXd& h, std::array<Eigen::MatrixXd, 2>& m) {
    const Index rows = std::min(chunk, draws - static_cast<Index>(c) * chunk);
    const Eigen::MatrixXd x = draw_covariates(s, rows, substream_seed(seed, "truth", c));
    h.resize(rows, E);
    m[0].resize(rows, T);
    m[1].resize(rows, T);
    for (Index i = 0; i < rows; ++i) {
      double p = s.pi1(x.row(i));
      if (options.reverse_treatment) p = 1.0 - p;
      for (Index e = 0; e < E; ++e) h(i, e) = tilt_value(estimands[static_cast<std::size_t>(e)], p);
      for (int arm = 0; arm < 2; ++arm) {
        const double lam = total_rate(s, arm, x.row(i));
        const double lj = outcome == Outcome::RMTL
                              ? s.causes[static_cast<std::size_t>(arm)][static_cast<std::size_t>(cause - 1)].rate(x.row(i))
                              : 0.0;
        for (Index k = 0; k < T; ++k) {
          m[static_cast<std::size_t>(arm)](i, k) = outcome == Outcome::RMST
                                                       ? exponential_rmst(lam, tau(k))
                                                       : exponential_rmtl(lj, lam, tau(k));
        }
      }
    }
  };

  struct First {
    Eigen::VectorXd hsum;
    std::array<Eigen::MatrixXd, 2> hm;  // E x T
  };
  std::vector<First> first(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Eigen::MatrixXd h;
    std::array<Eigen::MatrixXd, 2> m;
    evaluate(c, h, m);
    first[c].hsum = h.colwise().sum().transpose();
    for (std::size_t a = 0; a < 2; ++a) first[c].hm[a] = h.transpose() * m[a];
  });
  Eigen::VectorXd hsum = Eigen::VectorXd::Zero(E);
  std::array<Eigen::MatrixXd, 2> hm{Eigen::MatrixXd::Zero(E, T), Eigen::MatrixXd::Zero(E, T)};
  for (const auto& f : first) {
    hsum += f.hsum;
    for (std::size_t a = 0; a < 2; ++a) hm[a] += f.hm[a];
  }
  std::array<Eigen::MatrixXd, 2> psi;
  for (std::size_t a = 0; a < 2; ++a) psi[a] = hm[a].array().colwise() / hsum.array();
  const Eigen::MatrixXd psi_c = psi[1] - psi[0];
  const double N = static_cast<double>(draws);
  const Eigen::VectorXd hbar = hsum / N;

  struct Second {
    std::array<Eigen::MatrixXd, 2> sq;  // E x T
    std::vector<Eigen::MatrixXd> cov;   // per tau, E x E
  };
  std::vector<Second> second(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Eigen::MatrixXd h;
    std::array<Eigen::MatrixXd, 2> m;
    evaluate(c, h, m);
    const Index rows = h.rows();
    auto& out = second[c];
    for (std::size_t a = 0; a < 2; ++a) out.sq[a] = Eigen::MatrixXd::Zero(E, T);
    out.cov.assign(static_cast<std::size_t>(T), Eigen::MatrixXd::Zero(E, E));
    Eigen::MatrixXd inf(rows, E);
    for (Index k = 0; k < T; ++k) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (Index e = 0; e < E; ++e) {
          const Eigen::ArrayXd f = h.col(e).array() * (m[a].col(k).array() - psi[a](e, k)) / hbar(e);
          out.sq[a](e, k) = f.square().sum();
        }
      }
      for (Index e = 0; e < E; ++e) {
        inf.col(e) = (h.col(e).array() * (m[1].col(k).array() - m[0].col(k).array() - psi_c(e, k)) /
                      hbar(e)).matrix();
      }
      out.cov[static_cast<std::size_t>(k)] = inf.transpose() * inf;
    }
  });
  std::array<Eigen::MatrixXd, 2> sq{Eigen::MatrixXd::Zero(E, T), Eigen::MatrixXd::Zero(E, T)};
  std::vector<Eigen::MatrixXd> cov(static_cast<std::size_t>(T), Eigen::MatrixXd::Zero(E, E));
  for (const auto& s2 : second) {
    for (std::size_t a = 0; a < 2; ++a) sq[a] += s2.sq[a];
    for (std::size_t k = 0; k < cov.size(); ++k) cov[k] += s2.cov[k];
  }

  TruthSet ts;
  ts.outcome = outcome;
  ts.cause = cause;
  ts.draws = draws;
  for (auto& c : cov) c /= N * N;
  ts.contrast_cov = std::move(cov);
  for (Index e = 0; e < E; ++e) {
    TruthCurve tc;
    tc.estimand = estimands[static_cast<std::size_t>(e)];
    tc.tau = tau;
    for (std::size_t a = 0; a < 2; ++a) {
      tc.arm[a] = psi[a].row(e).transpose();
      tc.arm_se[a] = sq[a].row(e).transpose().cwiseSqrt() / N;
    }
    tc.contrast = psi_c.row(e).transpose();
    tc.contrast_se.resize(T);
    for (Index k = 0; k < T; ++k) tc.contrast_se(k) = std::sqrt(ts.contrast_cov[static_cast<std::size_t>(k)](e, e));
    ts.curves.push_back(std::move(tc));
  }
  return ts;
}

TruthCurve true_effect(int setting, Estimand estimand, Outcome outcome, int cause,
                       const Eigen::VectorXd& tau, Index draws, std::uint64_t seed, int threads) {
  return true_effects(setting, {estimand}, outcome, cause, tau, draws, seed, threads).curves.front();
}

NuisanceSpecs oracle_parametric_specs() {
  NuisanceSpecs s;
  s.propensity = {LearnerSpec{LearnerKind::Logistic}};
  s.event = {LearnerSpec{LearnerKind::ExponentialPH}};
  s.censoring = {LearnerSpec{LearnerKind::ExponentialPH}};
  return s;
}

NuisanceSpecs true_nuisance_specs(int setting, const DgpOptions& options) {
  const DgpSetting& s = dgp_setting(setting);
  NuisanceSpecs specs;
  specs.propensity = {LearnerSpec{LearnerKind::Fixed}};
  specs.event = {LearnerSpec{LearnerKind::Fixed}};
  specs.censoring = {LearnerSpec{LearnerKind::Fixed}};
  const bool reverse = options.reverse_treatment;
  specs.fixed_propensity = [&s, reverse] {
    return std::make_shared<FixedPropensity>([&s, reverse](const Eigen::RowVectorXd& x) {
      const double p = s.pi1(x);
      return reverse ? 1.0 - p : p;
    });
  };
  specs.fixed_hazard = [&s](int arm, HazardTarget target, int cause) -> HazardPtr {
    const auto a = static_cast<std::size_t>(arm);
    switch (target) {
      case HazardTarget::AllCause:
        return std::make_shared<FixedHazard>([&s, arm](const Eigen::RowVectorXd& x) { return total_rate(s, arm, x); });
      case HazardTarget::Cause:
        return std::make_shared<FixedHazard>([&s, a, cause](const Eigen::RowVectorXd& x) {
          return s.causes[a][static_cast<std::size_t>(cause - 1)].rate(x);
        });
      case HazardTarget::Censoring:
        break;
    }
    return std::make_shared<FixedHazard>([&s, a](const Eigen::RowVectorXd& x) { return s.censoring[a].rate(x); });
  };
  return specs;
}

const McRow* McReport::find(const std::string& estimator, Estimand estimand, double tau) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.estimand == estimand && std::abs(r.tau - tau) < 1e-9) return &r;
  }
  return nullptr;
}

namespace {

struct Record {
  Eigen::VectorXd estimate;
  Eigen::VectorXd se;  // empty when none
};

struct RepResult {
  bool ok = false;
  std::string error;
  DgpSummary summary;
  std::map<std::pair<std::string, int>, Record> records;
  std::vector<int> band_covered;
  std::vector<double> band_critical;
  std::vector<double> band_tau_l;
};

std::vector<ComparatorSpec> comparator_list(const StudyConfig& c) {
  std::vector<ComparatorSpec> out;
  for (ComparatorKind k : c.comparators) {
    out.push_back({k, c.outcome, c.cause, 0.0});
  }
  if (c.winsorized) {
    for (ComparatorKind k : c.comparators) {
      if (k != ComparatorKind::OR) out.push_back({k, c.outcome, c.cause, 0.99});
    }
  }
  return out;
}

RepResult run_replication(const StudyConfig& cfg, int r, const Eigen::VectorXd& tau,
                          const TruthSet& truth) {
  RepResult res;
  const std::uint64_t rs = substream_seed(cfg.seed, "replication", static_cast<std::uint64_t>(r));
  const SimulatedData data = generate(cfg.setting, cfg.n, rs, cfg.dgp);
  const Cohort& cohort = data.cohort;
  res.summary = summarize(cohort, cfg.tau_max, cfg.cause);

  if (cfg.proposed) {
    const CrossFitPlan plan = make_plan(cohort, cfg.k, substream_seed(rs, "folds"));
    const FittedNuisances nu = cross_fit(cohort, plan, cfg.specs, cfg.epsilon, 1);
    const auto comp = eif_components(cohort, nu, cfg.outcome, cfg.cause, tau, 1);
    for (Estimand e : cfg.estimands) {
      const EstimateResult est =
          estimate_from_components(comp, nu.propensity(), cohort.treat(), plan, e, true);
      res.records[{"dml", static_cast<int>(e)}] = {est.curve.contrast.corrected, est.curve.contrast.se};
      if (cfg.bands &&
          std::find(cfg.band_estimands.begin(), cfg.band_estimands.end(), e) != cfg.band_estimands.end()) {
        BandSpec bs;
        bs.alpha = cfg.alpha;
        bs.paths = cfg.band_paths;
        bs.seed = substream_seed(rs, "multiplier");
        const BandResult band = multiplier_band(est.contrast, est.curve.contrast, bs);
        const Eigen::VectorXd& t = truth.at(e).contrast;
        int covered = 1;
        for (Index k = band.first; k <= band.last; ++k) {
          if (t(k) < band.lower(k) || t(k) > band.upper(k)) covered = 0;
        }
        res.band_covered.push_back(covered);
        res.band_critical.push_back(band.critical);
        res.band_tau_l.push_back(tau(band.first));
      }
    }
  }

  const auto comps = comparator_list(cfg);
  if (!comps.empty()) {
    ComparatorConfig cc;
    cc.specs = cfg.specs;
    cc.epsilon = cfg.epsilon;
    cc.grid_points = cfg.tau_points;
    cc.tau_max = cfg.tau_max;
    cc.seed = substream_seed(rs, "comparator");
    const ComparatorNuisances nu = fit_comparator_nuisances(cohort, cc);
    const ComparatorTerms terms = comparator_terms(cohort, nu, cfg.outcome, cfg.cause, cc);
    for (const auto& spec : comps) {
      for (Estimand e : cfg.estimands) {
        const ComparatorCurve curve = comparator_curve(terms, nu.pi1, cohort.treat(), spec, e);
        res.records[{comparator_name(spec), static_cast<int>(e)}] = {curve.contrast, {}};
      }
    }
    if (!cfg.bootstrap.empty()) {
      const BootstrapResult boot =
          bootstrap_se(cfg.bootstrap, cohort, cc, cfg.bootstrap_reps, substream_seed(rs, "bootstrap"));
      for (std::size_t k = 0; k < cfg.bootstrap.size(); ++k) {
        const auto key = std::make_pair(comparator_name(cfg.bootstrap[k].spec),
                                        static_cast<int>(cfg.bootstrap[k].estimand));
        auto it = res.records.find(key);
        if (it == res.records.end()) {
          const ComparatorCurve curve = comparator_curve(terms, nu.pi1, cohort.treat(),
                                                         cfg.bootstrap[k].spec, cfg.bootstrap[k].estimand);
          it = res.records.emplace(key, Record{curve.contrast, {}}).first;
        }
        it->second.se = boot.se[k][2];
      }
    }
  }
  res.ok = true;
  return res;
}

}  // namespace

McReport run_study(const StudyConfig& cfg) {
  if (cfg.reps < 2) fail("need at least 2 replications");
  if (cfg.tau_points < 1 || !(cfg.tau_max > 0.0)) fail("bad tau grid");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) fail("alpha outside (0,1)");
  dgp_setting(cfg.setting);
  const Eigen::VectorXd tau =
      Eigen::VectorXd::LinSpaced(cfg.tau_points, cfg.tau_max / cfg.tau_points, cfg.tau_max);
  std::vector<Estimand> truth_estimands = cfg.estimands;
  for (const auto& b : cfg.bootstrap) {
    if (std::find(truth_estimands.begin(), truth_estimands.end(), b.estimand) == truth_estimands.end()) {
      truth_estimands.push_back(b.estimand);
    }
  }
  const TruthSet truth = true_effects(cfg.setting, truth_estimands, cfg.outcome, cfg.cause, tau,
                                      cfg.truth_draws, substream_seed(cfg.seed, "truth"), cfg.threads,
                                      cfg.dgp);

  std::vector<RepResult> reps(static_cast<std::size_t>(cfg.reps));
  parallel_for(reps.size(), cfg.threads, [&](std::size_t r) {
    try {
      reps[r] = run_replication(cfg, static_cast<int>(r), tau, truth);
    } catch (const Error& e) {
      reps[r].ok = false;
      reps[r].error = "replication " + std::to_string(r + 1) + ": " + e.what();
    }
  });

  McReport rep;
  rep.setting = cfg.setting;
  rep.reps = cfg.reps;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++rep.failures;
      rep.failure_messages.push_back(r.error);
    }
  }
  if (rep.failures > 0.02 * cfg.reps) {
    fail(std::to_string(rep.failures) + " of " + std::to_string(cfg.reps) +
         " replications failed; first: " + rep.failure_messages.front());
  }
  const double ok = static_cast<double>(cfg.reps - rep.failures);
  for (const auto& r : reps) {
    if (!r.ok) continue;
    rep.dgp.treated += r.summary.treated / ok;
    rep.dgp.censored += r.summary.censored / ok;
    rep.dgp.event_before += r.summary.event_before / ok;
  }

  std::vector<std::pair<std::string, int>> keys;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    for (const auto& kv : r.records) {
      if (std::find(keys.begin(), keys.end(), kv.first) == keys.end()) keys.push_back(kv.first);
    }
    break;
  }
  const double z = normal_quantile(1.0 - cfg.alpha / 2.0);
  for (const auto& key : keys) {
    const auto e = static_cast<Estimand>(key.second);
    const Eigen::VectorXd& t = truth.at(e).contrast;
    for (Index k = 0; k < tau.size(); ++k) {
      double sum = 0.0, sum2 = 0.0, se_sum = 0.0;
      int se_count = 0, cover = 0, count = 0;
      for (const auto& r : reps) {
        if (!r.ok) continue;
        const Record& rec = r.records.at(key);
        const double v = rec.estimate(k);
        sum += v;
        sum2 += v * v;
        ++count;
        if (rec.se.size() > 0) {
          se_sum += rec.se(k);
          ++se_count;
          if (std::abs(v - t(k)) <= z * rec.se(k)) ++cover;
        }
      }
      McRow row;
      row.estimator = key.first;
      row.estimand = e;
      row.tau = tau(k);
      row.truth = t(k);
      row.mean = sum / count;
      row.bias = row.mean - row.truth;
      row.mc_se = std::sqrt(std::max(0.0, (sum2 - count * row.mean * row.mean) / (count - 1)));
      row.mean_se = se_count ? se_sum / se_count : kNaN;
      row.coverage = se_count ? static_cast<double>(cover) / se_count : kNaN;
      rep.rows.push_back(row);
    }
  }
  if (cfg.bands && cfg.proposed) {
    for (std::size_t b = 0; b < cfg.band_estimands.size(); ++b) {
      BandRow br;
      br.estimand = cfg.band_estimands[b];
      int cnt = 0;
      for (const auto& r : reps) {
        if (!r.ok || b >= r.band_covered.size()) continue;
        br.coverage += r.band_covered[b];
        br.mean_critical += r.band_critical[b];
        br.min_critical = cnt ? std::min(br.min_critical, r.band_critical[b]) : r.band_critical[b];
        br.tau_l_mean += r.band_tau_l[b];
        ++cnt;
      }
      if (cnt) {
        br.coverage /= cnt;
        br.mean_critical /= cnt;
        br.tau_l_mean /= cnt;
      }
      rep.bands.push_back(br);
    }
  }
  return rep;
}

void write_report_csv(std::ostream& out, const McReport& report) {
  const auto old = out.precision(10);
  out << "setting,estimator,estimand,tau,metric,value\n";
  const int s = report.setting;
  out << s << ",dgp,,,treated," << report.dgp.treated << '\n';
  out << s << ",dgp,,,censored," << report.dgp.censored << '\n';
  out << s << ",dgp,,,event_before," << report.dgp.event_before << '\n';
  out << s << ",study,,,replications," << report.reps << '\n';
  out << s << ",study,,,failures," << report.failures << '\n';
  for (const auto& r : report.rows) {
    const std::string head = std::to_string(s) + "," + r.estimator + "," + estimand_name(r.estimand) + ",";
    auto emit = [&](const char* metric, double v) {
      out << head << r.tau << ',' << metric << ',';
      if (!std::isnan(v)) out << v;
      out << '\n';
    };
    emit("truth", r.truth);
    emit("mean", r.mean);
    emit("bias", r.bias);
    emit("mc_se", r.mc_se);
    emit("mean_se", r.mean_se);
    emit("coverage", r.coverage);
  }
  for (const auto& b : report.bands) {
    out << s << ",dml," << estimand_name(b.estimand) << ",,band_coverage," << b.coverage << '\n';
    out << s << ",dml," << estimand_name(b.estimand) << ",,band_critical," << b.mean_critical << '\n';
    out << s << ",dml," << estimand_name(b.estimand) << ",,band_critical_min," << b.min_critical << '\n';
    out << s << ",dml," << estimand_name(b.estimand) << ",,band_tau_l," << b.tau_l_mean << '\n';
  }
  out.precision(old);
}

void write_report_table(std::ostream& out, const McReport& report, double tau) {
  out << "setting " << report.setting << ": " << report.reps << " replications, " << report.failures
      << " failed\n";
  out << std::fixed << std::setprecision(3) << "treated " << report.dgp.treated << "  censored "
      << report.dgp.censored << "  event before tau " << report.dgp.event_before << "\n\n";
  out << std::left << std::setw(12) << "estimator" << std::setw(7) << "target" << std::right
      << std::setw(10) << "truth" << std::setw(10) << "mean" << std::setw(10) << "bias"
      << std::setw(10) << "mc_se" << std::setw(10) << "mean_se" << std::setw(10) << "coverage" << '\n';
  out << std::setprecision(4);
  for (const auto& r : report.rows) {
    if (std::abs(r.tau - tau) > 1e-9) continue;
    out << std::left << std::setw(12) << r.estimator << std::setw(7) << estimand_name(r.estimand)
        << std::right << std::setw(10) << r.truth << std::setw(10) << r.mean << std::setw(10)
        << r.bias << std::setw(10) << r.mc_se;
    if (std::isnan(r.mean_se)) {
      out << std::setw(10) << "-" << std::setw(10) << "-";
    } else {
      out << std::setw(10) << r.mean_se << std::setw(10) << r.coverage;
    }
    out << '\n';
  }
  for (const auto& b : report.bands) {
    out << "band " << estimand_name(b.estimand) << ": coverage " << b.coverage << ", mean critical "
        << b.mean_critical << ", mean tau_l " << b.tau_l_mean << '\n';
  }
  out.unsetf(std::ios::fixed);
  out << std::setprecision(6);
}

}  // namespace wcte
