#pragma once

#include "wcte/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace wcte {

/// Right-continuous piecewise-constant function on a sorted grid. `init` is
/// the value on [0, grid(0)).
template <typename Scalar = double>
struct StepFunction {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector grid;
  Vector values;
  Scalar init = Scalar(0);

  StepFunction() = default;
  StepFunction(Vector g, Vector v, Scalar init_value)
      : grid(std::move(g)), values(std::move(v)), init(init_value) {
    if (grid.size() != values.size()) throw Error("lifetables", "grid and values differ in length");
    for (Eigen::Index k = 1; k < grid.size(); ++k) {
      if (!(grid(k) > grid(k - 1))) throw Error("lifetables", "grid not strictly increasing");
    }
  }

  Eigen::Index size() const { return grid.size(); }

  /// Index of the largest grid point <= t, or -1.
  Eigen::Index locate(Scalar t) const {
    const Scalar* b = grid.data();
    return static_cast<Eigen::Index>(std::upper_bound(b, b + grid.size(), t) - b) - 1;
  }

  Scalar operator()(Scalar t) const {
    const Eigen::Index k = locate(t);
    return k < 0 ? init : values(k);
  }

  /// Value on the open interval just before t.
  Scalar left_limit(Scalar t) const {
    const Scalar* b = grid.data();
    const auto k = static_cast<Eigen::Index>(std::lower_bound(b, b + grid.size(), t) - b) - 1;
    return k < 0 ? init : values(k);
  }

  /// Jump at each grid point, with init as the value before the first.
  Vector increments() const {
    Vector d(values.size());
    Scalar prev = init;
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      d(k) = values(k) - prev;
      prev = values(k);
    }
    return d;
  }
};

using Step = StepFunction<double>;

enum class SurvivalTransform { Exp, ProductLimit };

enum class Side { At, Left };

namespace detail {

template <typename Scalar>
void require_same_grid(const StepFunction<Scalar>& a, const StepFunction<Scalar>& b) {
  if (a.grid.size() != b.grid.size() || !(a.grid.array() == b.grid.array()).all()) {
    throw Error("lifetables", "mismatched grids");
  }
}

}  // namespace detail

/// S = exp(-Lambda) or the product-limit prod(1 - dLambda).
template <typename Scalar>
StepFunction<Scalar> cumhaz_to_survival(const StepFunction<Scalar>& cumhaz,
                                        SurvivalTransform mode = SurvivalTransform::ProductLimit) {
  const auto d = cumhaz.increments();
  if (cumhaz.init < Scalar(0) || (d.array() < Scalar(0)).any()) {
    throw Error("lifetables", "decreasing cumulative hazard");
  }
  typename StepFunction<Scalar>::Vector s(d.size());
  if (mode == SurvivalTransform::Exp) {
    s = (-cumhaz.values.array()).exp().matrix();
  } else {
    Scalar acc = Scalar(1);
    for (Eigen::Index k = 0; k < d.size(); ++k) {
      if (d(k) > Scalar(1)) throw Error("lifetables", "product-limit increment > 1");
      acc *= Scalar(1) - d(k);
      s(k) = acc;
    }
  }
  StepFunction<Scalar> out;
  out.grid = cumhaz.grid;
  out.values = std::move(s);
  out.init = mode == SurvivalTransform::Exp ? std::exp(-cumhaz.init) : Scalar(1);
  return out;
}

/// Exact integral of a step function over [0, tau].
template <typename Scalar>
Scalar step_integral(const StepFunction<Scalar>& f, Scalar tau) {
  if (!(tau > Scalar(0))) throw Error("lifetables", "tau must be positive");
  Scalar total = Scalar(0);
  Scalar left = Scalar(0);
  Scalar level = f.init;
  for (Eigen::Index k = 0; k < f.grid.size() && f.grid(k) < tau; ++k) {
    total += level * (f.grid(k) - left);
    left = f.grid(k);
    level = f.values(k);
  }
  return total + level * (tau - left);
}

template <typename Scalar>
Scalar survival_to_rmst(const StepFunction<Scalar>& surv, Scalar tau) {
  return step_integral(surv, tau);
}

template <typename Scalar>
Scalar cif_to_rmtl(const StepFunction<Scalar>& cif, Scalar tau) {
  return step_integral(cif, tau);
}

/// F_j(t) = sum_{u <= t} S(u-) dLambda_j(u).
template <typename Scalar>
StepFunction<Scalar> cif_from_hazards(const StepFunction<Scalar>& cause_cumhaz,
                                      const StepFunction<Scalar>& surv) {
  detail::require_same_grid(cause_cumhaz, surv);
  const auto d = cause_cumhaz.increments();
  if ((d.array() < Scalar(0)).any()) throw Error("lifetables", "decreasing cumulative hazard");
  typename StepFunction<Scalar>::Vector f(d.size());
  Scalar acc = Scalar(0);
  Scalar s_left = surv.init;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    acc += s_left * d(k);
    f(k) = acc;
    s_left = surv.values(k);
  }
  StepFunction<Scalar> out;
  out.grid = cause_cumhaz.grid;
  out.values = std::move(f);
  out.init = Scalar(0);
  return out;
}

/// sum over grid points u <= upper of integrand(u or u-) * d measure(u).
template <typename Scalar>
Scalar stieltjes_integrate(const StepFunction<Scalar>& integrand, Side side,
                           const StepFunction<Scalar>& measure, Scalar upper) {
  detail::require_same_grid(integrand, measure);
  if (measure.grid.size() > 0 && upper > measure.grid(measure.grid.size() - 1) &&
      upper != std::numeric_limits<Scalar>::infinity()) {
    throw Error("lifetables", "integration window extends past the grid");
  }
  const auto d = measure.increments();
  Scalar total = Scalar(0);
  for (Eigen::Index k = 0; k < d.size() && integrand.grid(k) <= upper; ++k) {
    const Scalar f = side == Side::At ? integrand.values(k)
                                      : (k == 0 ? integrand.init : integrand.values(k - 1));
    total += f * d(k);
  }
  return total;
}

}  // namespace wcte
