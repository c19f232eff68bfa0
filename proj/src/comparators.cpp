#include "wcte/comparators.hpp"

#include "wcte/error.hpp"
#include "wcte/parallel.hpp"
#include "wcte/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("comparators", message); }

bool truncating(const ComparatorConfig& c) { return c.epsilon > 0.0; }

// 1/v with v floored, or an error when flooring is disabled and v hits zero.
struct Inverter {
  double floor;
  double operator()(double v, const char* what) const {
    if (floor > 0.0) return 1.0 / std::max(v, floor);
    if (!(v > 0.0)) fail(std::string(what) + " reached zero without truncation");
    return 1.0 / v;
  }
};

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Index>& rows) {
  Eigen::VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

// Index of the last grid point <= t (strict: < t), or -1.
Index last_before(const Eigen::VectorXd& grid, double t, bool strict) {
  const double* b = grid.data();
  const double* e = b + grid.size();
  const double* p = strict ? std::lower_bound(b, e, t) : std::upper_bound(b, e, t);
  return static_cast<Index>(p - b) - 1;
}

// Curves continued from the grid to each unit's own time.
struct OwnTime {
  Eigen::VectorXd surv;       // S(T)
  Eigen::VectorXd cens_left;  // G(T-)
  Eigen::VectorXd cens_cumhaz;
  Eigen::VectorXd cif;        // F_j(T)
};

// Carries survival s and cause incidence f of one unit from `from` to `to`
// through every jump of the product-limit parts in between. The jump at `to`
// counts only when `include_to` is set.
void carry(const std::vector<HazardPtr>& parts, int cause_index, const Eigen::RowVectorXd& x,
           double from, double to, bool include_to, double& s, double& f) {
  Eigen::VectorXd jumps = product_limit_jumps(parts, from, to);
  if (!include_to && jumps.size() > 0 && jumps(jumps.size() - 1) == to) {
    jumps.conservativeResize(jumps.size() - 1);
  }
  if (jumps.size() == 0) return;
  Eigen::VectorXd pts(jumps.size() + 1);
  pts << from, jumps;
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(pts.size(), 1);
  Eigen::VectorXd lam_j = Eigen::VectorXd::Zero(pts.size());
  const Eigen::MatrixXd xm = x;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Eigen::MatrixXd l = parts[k]->cumhaz(xm, pts, false);
    lam += l;
    if (static_cast<int>(k) == cause_index) lam_j = l.col(0);
  }
  for (Index q = 1; q < pts.size(); ++q) {
    if (cause_index >= 0) f += s * std::max(0.0, lam_j(q) - lam_j(q - 1));
    s *= std::clamp(1.0 - (lam(q, 0) - lam(q - 1, 0)), 0.0, 1.0);
  }
}

OwnTime own_time(const Eigen::MatrixXd& x, const Eigen::VectorXd& times,
                 const std::vector<Index>& cols, const FoldModels& models, int arm, int j_star,
                 int cause, const ArmCurves& curves) {
  const auto a = static_cast<std::size_t>(arm);
  const Eigen::VectorXd& grid = curves.grid;
  const Index m = x.rows();
  OwnTime o;
  const auto& cm = models.censoring[a];
  o.cens_cumhaz = cm->cumhaz_at(x, times, false);
  const Eigen::VectorXd cl = cm->cumhaz_at(x, times, true);
  o.cens_left.resize(m);
  const std::vector<HazardPtr> cens_parts{cm};
  for (Index r = 0; r < m; ++r) {
    if (cm->transform() == SurvivalTransform::Exp) {
      o.cens_left(r) = std::exp(-cl(r));
    } else {
      const Index p = last_before(grid, times(r), true);
      const Index c = cols[static_cast<std::size_t>(r)];
      double g = p < 0 ? 1.0 : curves.cens(p, c);
      double unused = 0.0;
      carry(cens_parts, -1, x.row(r), p < 0 ? 0.0 : grid(p), times(r), false, g, unused);
      o.cens_left(r) = g;
    }
  }

  const std::vector<HazardPtr> parts = j_star == 1 ? std::vector<HazardPtr>{models.event[a]} : models.causes[a];
  bool product_limit = true;
  Eigen::VectorXd total_at = Eigen::VectorXd::Zero(m);
  for (const auto& part : parts) {
    total_at += part->cumhaz_at(x, times, false);
    product_limit = product_limit && part->transform() == SurvivalTransform::ProductLimit;
  }
  const int cause_index = j_star == 1 ? -1 : cause - 1;
  o.surv.resize(m);
  o.cif.resize(m);
  const auto& fj = curves.cif.at(static_cast<std::size_t>(j_star == 1 ? 0 : cause - 1));
  for (Index r = 0; r < m; ++r) {
    const Index p = last_before(grid, times(r), false);
    const Index c = cols[static_cast<std::size_t>(r)];
    double s = p < 0 ? 1.0 : curves.surv(p, c);
    double f = p < 0 ? 0.0 : fj(p, c);
    if (product_limit) {
      carry(parts, cause_index, x.row(r), p < 0 ? 0.0 : grid(p), times(r), true, s, f);
    } else {
      // Exp-transform survival is exact; the incidence integral is continued
      // with the left survival value over the last stretch.
      const double s_prev = s;
      s = std::exp(-total_at(r));
      if (cause_index >= 0) {
        const Eigen::VectorXd t1 = Eigen::VectorXd::Constant(1, times(r));
        const Eigen::VectorXd t0 = Eigen::VectorXd::Constant(1, p < 0 ? 0.0 : grid(p));
        const Eigen::MatrixXd xr = x.row(r);
        const double l1 = parts[static_cast<std::size_t>(cause_index)]->cumhaz_at(xr, t1, false)(0);
        const double l0 = parts[static_cast<std::size_t>(cause_index)]->cumhaz_at(xr, t0, false)(0);
        f += s_prev * std::max(0.0, l1 - l0);
      }
    }
    o.surv(r) = s;
    o.cif(r) = j_star == 1 ? 1.0 - s : f;
  }
  return o;
}

double quantile_linear(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ComparatorSpec parse_comparator(std::string_view text, Outcome outcome, int cause) {
  ComparatorSpec s;
  s.outcome = outcome;
  s.cause = cause;
  std::string name(text);
  if (name.size() > 2 && name.substr(name.size() - 2) == ".t") {
    s.winsorize = 0.99;
    name.resize(name.size() - 2);
  }
  if (name == "or") {
    s.kind = ComparatorKind::OR;
  } else if (name == "ipcw") {
    s.kind = ComparatorKind::IpcwPlain;
  } else if (name == "ipcw-cc") {
    s.kind = ComparatorKind::IpcwCompleteCase;
  } else if (name == "dr") {
    s.kind = ComparatorKind::DR;
  } else {
    fail("unknown comparator '" + std::string(text) + "'");
  }
  return s;
}

std::string comparator_name(const ComparatorSpec& spec) {
  std::string out;
  switch (spec.kind) {
    case ComparatorKind::OR: out = "or"; break;
    case ComparatorKind::IpcwPlain: out = "ipcw"; break;
    case ComparatorKind::IpcwCompleteCase: out = "ipcw-cc"; break;
    case ComparatorKind::DR: out = "dr"; break;
  }
  if (spec.winsorize > 0.0) out += ".t";
  return out;
}

ComparatorNuisances fit_comparator_nuisances(const Cohort& cohort, const ComparatorConfig& config) {
  std::vector<Index> all(static_cast<std::size_t>(cohort.n()));
  std::iota(all.begin(), all.end(), Index{0});
  ComparatorNuisances out;
  try {
    out.models = fit_models(cohort, all, config.specs, substream_seed(config.seed, "comparator"));
  } catch (const Error& e) {
    fail(e.detail());
  }
  out.pi1 = out.models.propensity->predict(cohort.covariates());
  if (truncating(config)) {
    out.truncated = truncate_propensity(out.pi1, config.epsilon);
  } else if ((out.pi1.array() <= 0.0).any() || (out.pi1.array() >= 1.0).any()) {
    fail("propensity reached 0 or 1 without truncation");
  }
  return out;
}

ComparatorTerms comparator_terms(const Cohort& cohort, const ComparatorNuisances& nuisances,
                                 Outcome outcome, int cause, const ComparatorConfig& config) {
  if (config.grid_points < 1) fail("grid needs at least one cell");
  if (!(config.tau_max > 0.0)) fail("tau_max must be positive");
  if (outcome == Outcome::RMTL && (cause < 1 || cause > cohort.j_star())) {
    fail("cause " + std::to_string(cause) + " out of range");
  }
  const Index M = config.grid_points;
  const double width = config.tau_max / static_cast<double>(M);
  ComparatorTerms out;
  out.outcome = outcome;
  out.cause = cause;
  out.edges = Eigen::VectorXd::LinSpaced(M, width, config.tau_max);
  out.t = out.edges.array() - width / 2.0;
  const Inverter inv{truncating(config) ? 1.0 / config.epsilon : 0.0};
  const Index n = cohort.n();
  const int j_star = cohort.j_star();
  const std::size_t fj = static_cast<std::size_t>(j_star == 1 ? 0 : cause - 1);

  for (int arm = 0; arm < 2; ++arm) {
    const ArmCurves curves = evaluate_curves(cohort.covariates(), nuisances.models, arm, out.t, j_star);
    auto& blk = out.arm[static_cast<std::size_t>(arm)];
    const Eigen::MatrixXd& value = outcome == Outcome::RMST ? curves.surv : curves.cif[fj];
    blk.regression = value;
    blk.ipcw = Eigen::MatrixXd::Zero(M, n);
    blk.ipcw_cc = Eigen::MatrixXd::Zero(M, n);
    blk.augmentation = Eigen::MatrixXd::Zero(M, n);

    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i) {
      if (cohort.treat()(i) == arm) rows.push_back(i);
    }
    const Eigen::VectorXd times = take(cohort.time(), rows);
    const OwnTime own = own_time(take_rows(cohort.covariates(), rows), times, rows,
                                 nuisances.models, arm, j_star, cause, curves);

    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Index i = rows[r];
      const auto ri = static_cast<Index>(r);
      const double T = times(ri);
      const int c = cohort.cause()(i);
      const double s_own = own.surv(ri);
      const double g_own = own.cens_left(ri);
      const double f_own = own.cif(ri);
      double k0 = 0.0, kf = 0.0;
      double prev_s = 1.0, prev_g = 1.0, prev_l = 0.0, prev_f = 0.0;
      bool done = false;
      for (Index m = 0; m < M; ++m) {
        const double u = out.t(m);
        const double s = curves.surv(m, i);
        const double g = curves.cens(m, i);
        const double f = curves.cif[fj](m, i);
        if (!done) {
          const double a0 = inv(prev_s, "survival") * inv(prev_g, "censoring survival");
          if (T > u) {
            const double a1 = inv(s, "survival") * inv(g, "censoring survival");
            const double dl = curves.cens_cumhaz(m, i) - prev_l;
            k0 -= dl * 0.5 * (a0 + a1);
            kf -= dl * 0.5 * (prev_f * a0 + f * a1);
          } else {
            const double a1 = inv(s_own, "survival") * inv(g_own, "censoring survival");
            const double dl = std::max(0.0, own.cens_cumhaz(ri) - prev_l);
            k0 -= dl * 0.5 * (a0 + a1);
            kf -= dl * 0.5 * (prev_f * a0 + f_own * a1);
            if (c == 0) {
              k0 += a1;
              kf += f_own * a1;
            }
            done = true;
          }
          prev_s = s;
          prev_g = g;
          prev_l = curves.cens_cumhaz(m, i);
          prev_f = f;
        }
        if (outcome == Outcome::RMST) {
          const double plain = T > u ? inv(g, "censoring survival") : 0.0;
          blk.ipcw(m, i) = plain;
          blk.ipcw_cc(m, i) = (c > 0 && T > u) ? inv(g_own, "censoring survival") : 0.0;
          blk.augmentation(m, i) = plain - s + s * k0;
        } else {
          const double ip = (T <= u && c == cause) ? inv(g_own, "censoring survival") : 0.0;
          blk.ipcw(m, i) = ip;
          blk.ipcw_cc(m, i) = ip;
          blk.augmentation(m, i) = ip - f + f * k0 - kf;
        }
      }
    }
  }
  return out;
}

Eigen::VectorXd winsorize_weights(const Eigen::VectorXd& weights, double q) {
  if (!(q > 0.5 && q < 1.0)) fail("winsorize quantile must lie in (0.5, 1)");
  if (weights.size() == 0) return weights;
  const double cap = quantile_linear(std::vector<double>(weights.data(), weights.data() + weights.size()), q);
  return weights.cwiseMin(cap);
}

ComparatorCurve comparator_curve(const ComparatorTerms& terms, const Eigen::VectorXd& pi1,
                                 const Eigen::VectorXi& treat, const ComparatorSpec& spec,
                                 Estimand estimand) {
  if (spec.outcome != terms.outcome || (spec.outcome == Outcome::RMTL && spec.cause != terms.cause)) {
    fail("terms do not match the comparator");
  }
  ComparatorCurve cc;
  cc.spec = spec;
  cc.estimand = estimand;
  cc.t = terms.t;
  cc.tau = terms.edges;
  const Index M = terms.t.size();
  const double width = M > 0 ? terms.edges(0) : 0.0;
  for (int arm = 0; arm < 2; ++arm) {
    const auto a = static_cast<std::size_t>(arm);
    const auto& blk = terms.arm[a];
    BalancingWeights bw = balancing_weights(estimand, pi1, treat, arm);
    if (spec.winsorize > 0.0) {
      std::vector<Index> rows;
      for (Index i = 0; i < treat.size(); ++i) {
        if (treat(i) == arm) rows.push_back(i);
      }
      const Eigen::VectorXd capped = winsorize_weights(take(bw.w, rows), spec.winsorize);
      for (std::size_t r = 0; r < rows.size(); ++r) bw.w(rows[r]) = capped(static_cast<Index>(r));
    }
    const double sh = bw.h.sum();
    const double sw = bw.w.sum();
    if (!(sh > 0.0) || !(sw > 0.0)) fail("balancing weights sum to zero");
    Eigen::VectorXd curve;
    switch (spec.kind) {
      case ComparatorKind::OR: curve = blk.regression * bw.h / sh; break;
      case ComparatorKind::IpcwPlain: curve = blk.ipcw * bw.w / sw; break;
      case ComparatorKind::IpcwCompleteCase: curve = blk.ipcw_cc * bw.w / sw; break;
      case ComparatorKind::DR:
        curve = blk.regression * bw.h / sh + blk.augmentation * bw.w / sw;
        break;
    }
    Eigen::VectorXd fixed = curve;
    for (Index m = 1; m < M; ++m) {
      fixed(m) = spec.outcome == Outcome::RMST ? std::min(fixed(m), fixed(m - 1))
                                               : std::max(fixed(m), fixed(m - 1));
    }
    fixed = fixed.cwiseMax(0.0).cwiseMin(1.0);
    Eigen::VectorXd ir(M), ic(M);
    double acc_r = 0.0, acc_c = 0.0;
    for (Index m = 0; m < M; ++m) {
      acc_r += curve(m) * width;
      acc_c += fixed(m) * width;
      ir(m) = acc_r;
      ic(m) = acc_c;
    }
    cc.raw[a] = std::move(curve);
    cc.corrected[a] = std::move(fixed);
    cc.integral_raw[a] = std::move(ir);
    cc.integral[a] = std::move(ic);
  }
  cc.contrast_raw = cc.integral_raw[1] - cc.integral_raw[0];
  cc.contrast = cc.integral[1] - cc.integral[0];
  return cc;
}

ComparatorCurve estimate_curve(const ComparatorSpec& spec, Estimand estimand, const Cohort& cohort,
                               const ComparatorConfig& config) {
  const ComparatorNuisances nu = fit_comparator_nuisances(cohort, config);
  const ComparatorTerms terms = comparator_terms(cohort, nu, spec.outcome, spec.cause, config);
  return comparator_curve(terms, nu.pi1, cohort.treat(), spec, estimand);
}

BootstrapResult bootstrap_se(const std::vector<BootstrapTarget>& targets, const Cohort& cohort,
                             const ComparatorConfig& config, int replicates, std::uint64_t seed) {
  if (replicates < 200) fail("bootstrap needs at least 200 replicates");
  if (targets.empty()) fail("no bootstrap targets");
  const std::size_t B = static_cast<std::size_t>(replicates);
  const std::size_t nt = targets.size();
  const Index n = cohort.n();
  // draws[b][target][0..2] = arm 0, arm 1, contrast integrals
  std::vector<std::vector<std::array<Eigen::VectorXd, 3>>> draws(B);
  std::vector<int> redraws(B, 0);
  ComparatorConfig inner = config;
  inner.threads = 1;
  parallel_for(B, config.threads, [&](std::size_t b) {
    auto rng = make_engine(seed, "bootstrap", b);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10) fail("bootstrap resample kept missing an arm");
      int treated = 0;
      for (auto& r : rows) {
        r = pick(rng);
        treated += cohort.treat()(r);
      }
      if (treated > 0 && treated < n) break;
      ++redraws[b];
    }
    const Cohort boot = cohort.subset(rows);
    ComparatorConfig local = inner;
    local.seed = substream_seed(seed, "bootstrap-fit", b);
    const ComparatorNuisances nu = fit_comparator_nuisances(boot, local);
    std::vector<std::pair<std::pair<Outcome, int>, ComparatorTerms>> cache;
    draws[b].resize(nt);
    for (std::size_t k = 0; k < nt; ++k) {
      const auto& spec = targets[k].spec;
      const auto key = std::make_pair(spec.outcome, spec.outcome == Outcome::RMST ? 0 : spec.cause);
      auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& e) { return e.first == key; });
      if (it == cache.end()) {
        cache.emplace_back(key, comparator_terms(boot, nu, spec.outcome, spec.cause, local));
        it = cache.end() - 1;
      }
      const ComparatorCurve cc = comparator_curve(it->second, nu.pi1, boot.treat(), spec, targets[k].estimand);
      draws[b][k] = {cc.integral[0], cc.integral[1], cc.contrast};
    }
  });
  BootstrapResult res;
  res.tau = Eigen::VectorXd::LinSpaced(config.grid_points, config.tau_max / config.grid_points,
                                       config.tau_max);
  res.redraws = std::accumulate(redraws.begin(), redraws.end(), 0);
  res.se.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    for (std::size_t c = 0; c < 3; ++c) {
      const Index M = draws[0][k][c].size();
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(M);
      for (std::size_t b = 0; b < B; ++b) mean += draws[b][k][c];
      mean /= static_cast<double>(B);
      Eigen::VectorXd ss = Eigen::VectorXd::Zero(M);
      for (std::size_t b = 0; b < B; ++b) ss += (draws[b][k][c] - mean).array().square().matrix();
      res.se[k][c] = (ss / static_cast<double>(B - 1)).cwiseSqrt();
    }
  }
  return res;
}

void write_comparator_csv(std::ostream& out, const std::vector<ComparatorCurve>& curves,
                          const BootstrapResult* boot) {
  out << "estimator,tau,arm,estimate_raw,estimate_corrected,se\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& cc = curves[k];
    const std::string name = comparator_name(cc.spec) + "-" + estimand_name(cc.estimand);
    const bool have_se = boot && k < boot->se.size();
    for (int part = 0; part < 3; ++part) {
      const char* label = part == 0 ? "0" : part == 1 ? "1" : "contrast";
      const Eigen::VectorXd& raw = part < 2 ? cc.integral_raw[static_cast<std::size_t>(part)] : cc.contrast_raw;
      const Eigen::VectorXd& cor = part < 2 ? cc.integral[static_cast<std::size_t>(part)] : cc.contrast;
      for (Index m = 0; m < cc.tau.size(); ++m) {
        out << name << ',' << cc.tau(m) << ',' << label << ',' << raw(m) << ',' << cor(m) << ',';
        if (have_se) out << boot->se[k][static_cast<std::size_t>(part)](m);
        out << '\n';
      }
    }
  }
}

}  // namespace wcte
