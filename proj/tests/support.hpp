#pragma once

#include "wcte/cohort.hpp"
#include "wcte/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace wcte::test {

/// Small two-covariate cohort with exponential event and censoring times.
/// censor_rate = 0 gives uncensored data.
inline Cohort toy_cohort(Index n, std::uint64_t seed, double censor_rate = 0.3, int causes = 1) {
  auto rng = make_engine(seed, "toy");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXi a(n), c(n);
  Eigen::VectorXd t(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double p = 1.0 / (1.0 + std::exp(-(0.3 * x(i, 0) - 0.2 * x(i, 1))));
    a(i) = unif(rng) < p ? 1 : 0;
    double best = 1e300;
    int cause = 0;
    for (int j = 1; j <= causes; ++j) {
      const double rate = 0.3 * j * std::exp(0.4 * x(i, 0) - 0.3 * a(i) + 0.2 * x(i, 1));
      const double tj = std::exponential_distribution<double>(rate)(rng);
      if (tj < best) {
        best = tj;
        cause = j;
      }
    }
    double cens = 1e300;
    if (censor_rate > 0.0) {
      cens = std::exponential_distribution<double>(censor_rate * std::exp(0.2 * x(i, 0)))(rng);
    }
    if (best <= cens) {
      t(i) = best;
      c(i) = cause;
    } else {
      t(i) = cens;
      c(i) = 0;
    }
  }
  return Cohort(x, a, t, c, causes);
}

}  // namespace wcte::test
