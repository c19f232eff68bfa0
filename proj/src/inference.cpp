#include "wcte/inference.hpp"

#include "wcte/error.hpp"
#include "wcte/parallel.hpp"
#include "wcte/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("inference", message); }

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail("quantile level outside (0,1)");
  // Acklam's rational approximation, then one Halley step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

Interval wald_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& se, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha outside (0,1)");
  if (estimate.size() != se.size()) fail("length mismatch");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return {estimate - z * se, estimate + z * se};
}

std::pair<Index, Index> select_band_range(const Eigen::VectorXd& tau,
                                          const Eigen::VectorXd& sigma_plus,
                                          std::optional<double> tau_l,
                                          std::optional<double> tau_u) {
  const Index T = tau.size();
  Index first = 0;
  while (first < T && !(sigma_plus(first) > 0.0)) ++first;
  if (first == T) fail("standard errors are zero on the whole grid");
  if (tau_l) {
    while (first < T && tau(first) < *tau_l) ++first;
  }
  Index last = T - 1;
  if (tau_u) {
    while (last >= 0 && tau(last) > *tau_u) --last;
  }
  if (first >= T || last < first) fail("empty band range");
  return {first, last};
}

BandResult multiplier_band(const Eigen::MatrixXd& centered, const Eigen::VectorXd& tau,
                           const Eigen::VectorXd& estimate, const Eigen::VectorXd& sigma_plus,
                           const BandSpec& spec) {
  if (spec.paths < 1000) fail("B must be at least 1000");
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) fail("alpha outside (0,1)");
  const Index n = centered.rows();
  const Index T = tau.size();
  if (centered.cols() != T || estimate.size() != T || sigma_plus.size() != T) fail("shape mismatch");
  BandResult res;
  std::tie(res.first, res.last) = select_band_range(tau, sigma_plus, spec.tau_l, spec.tau_u);
  const Index L = res.last - res.first + 1;
  // Standardized paths: Z(i, t) = phi_i(t) / sigma_plus(t) / sqrt(n).
  Eigen::MatrixXd z = centered.middleCols(res.first, L);
  z.array().rowwise() /= sigma_plus.segment(res.first, L).transpose().array();
  z /= std::sqrt(static_cast<double>(n));

  const Index block = 256;
  const auto B = static_cast<Index>(spec.paths);
  const auto blocks = static_cast<std::size_t>((B + block - 1) / block);
  Eigen::VectorXd sup(B);
  parallel_for(blocks, spec.threads, [&](std::size_t bi) {
    const Index start = static_cast<Index>(bi) * block;
    const Index rows = std::min(block, B - start);
    Eigen::MatrixXd xi(rows, n);
    std::normal_distribution<double> normal;
    for (Index r = 0; r < rows; ++r) {
      auto rng = make_engine(spec.seed, "multiplier", static_cast<std::uint64_t>(start + r));
      for (Index i = 0; i < n; ++i) xi(r, i) = normal(rng);
    }
    const Eigen::MatrixXd paths = xi * z;
    sup.segment(start, rows) = paths.cwiseAbs().rowwise().maxCoeff();
  });
  std::vector<double> s(sup.data(), sup.data() + B);
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - spec.alpha) * static_cast<double>(B))) - 1;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
  res.critical = s[k];

  const Eigen::VectorXd se = sigma_plus / std::sqrt(static_cast<double>(n));
  res.pointwise = wald_ci(estimate, se, spec.alpha);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.lower = Eigen::VectorXd::Constant(T, nan);
  res.upper = Eigen::VectorXd::Constant(T, nan);
  res.lower.segment(res.first, L) = estimate.segment(res.first, L) - res.critical * se.segment(res.first, L);
  res.upper.segment(res.first, L) = estimate.segment(res.first, L) + res.critical * se.segment(res.first, L);
  return res;
}

BandResult multiplier_band(const EifMatrix& eif, const CurveBlock& block, const BandSpec& spec) {
  return multiplier_band(eif.centered, eif.tau, block.corrected, block.sigma_plus, spec);
}

CovarianceCheck standardized_covariance(const Eigen::MatrixXd& centered,
                                        const Eigen::VectorXd& sigma_plus, Index first,
                                        Index last) {
  if (first < 0 || last >= centered.cols() || last < first) fail("bad covariance range");
  const Index L = last - first + 1;
  Eigen::MatrixXd z = centered.middleCols(first, L);
  z.array().rowwise() /= sigma_plus.segment(first, L).transpose().array();
  CovarianceCheck out;
  out.correlation = z.transpose() * z / static_cast<double>(centered.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.correlation, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.psd = out.min_eigenvalue >= -1e-10;
  return out;
}

void write_band_csv(std::ostream& out, const Eigen::VectorXd& tau, const Eigen::VectorXd& estimate,
                    const BandResult& band, const char* label) {
  if (!label) out << "tau,estimate,ci_lo,ci_hi,band_lo,band_hi\n";
  for (Index k = 0; k < tau.size(); ++k) {
    if (label) out << label << ',';
    out << tau(k) << ',' << estimate(k) << ',' << band.pointwise.lower(k) << ','
        << band.pointwise.upper(k) << ',';
    if (k >= band.first && k <= band.last) {
      out << band.lower(k) << ',' << band.upper(k);
    } else {
      out << ',';
    }
    out << '\n';
  }
}

}  // namespace wcte
