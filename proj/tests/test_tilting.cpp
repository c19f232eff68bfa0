#include "identities.hpp"
#include "wcte/error.hpp"
#include "wcte/tilting.hpp"

#include <doctest.h>

#include <cmath>

using namespace wcte;
using doctest::Approx;

TEST_CASE("tilt values") {
  CHECK(tilt_value(Estimand::ATO, 0.5) == 0.25);
  CHECK(tilt_value(Estimand::ATM, 0.3) == 0.3);
  CHECK(tilt_value(Estimand::ATEN, 0.5) == Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(tilt_value(Estimand::ATE, 0.01) == 1.0);
  CHECK(tilt_value(Estimand::ATE, 0.77) == 1.0);
  CHECK_THROWS_AS(tilt_value(Estimand::ATO, 0.0), Error);
  CHECK_THROWS_AS(tilt_value(Estimand::ATE, 1.0), Error);
}

TEST_CASE("tilts are symmetric, bounded and peak at one half") {
  for (Estimand e : kAllEstimands) {
    double best = -1.0, arg = 0.0;
    const double cap = e == Estimand::ATE ? 1.0 : e == Estimand::ATO ? 0.25 : e == Estimand::ATM ? 0.5 : std::log(2.0);
    for (int k = 1; k < 1000; ++k) {
      const double p = k / 1000.0;
      const double h = tilt_value(e, p);
      CHECK(h == Approx(tilt_value(e, 1.0 - p)).epsilon(1e-12));
      CHECK(h <= cap + 1e-15);
      CHECK(h > 0.0);
      if (h > best + 1e-15) {
        best = h;
        arg = p;
      }
    }
    if (e != Estimand::ATE) CHECK(arg == Approx(0.5));
  }
}

TEST_CASE("balancing weights") {
  Eigen::VectorXd pi(3);
  pi << 0.25, 0.25, 0.6;
  Eigen::VectorXi a(3);
  a << 1, 0, 1;
  const auto ate = balancing_weights(Estimand::ATE, pi, a, 1);
  CHECK(ate.w(0) == 4.0);
  CHECK(ate.w(1) == 0.0);
  const auto ato = balancing_weights(Estimand::ATO, pi, a, 1);
  CHECK(ato.h(0) == Approx(0.1875));
  CHECK(ato.w(0) == Approx(0.75));
  const auto ctl = balancing_weights(Estimand::ATO, pi, a, 0);
  CHECK(ctl.w(1) == Approx(0.25));
  for (Estimand e : kAllEstimands) CHECK(balancing_weights(e, pi, a, 1).w(1) == 0.0);
  CHECK(test::ato_cancellation_gap(5000, 1) < 1e-15);
}

TEST_CASE("estimand names round-trip") {
  for (Estimand e : kAllEstimands) CHECK(parse_estimand(estimand_name(e)) == e);
  CHECK(parse_estimand("ATO") == Estimand::ATO);
  CHECK_THROWS_AS(parse_estimand("att"), Error);
}
