#include "support.hpp"
#include "wcte/cohort.hpp"
#include "wcte/error.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace wcte;

namespace {

std::string temp_file(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p.string();
}

Cohort three_rows() {
  Eigen::MatrixXd x(3, 1);
  x << 0.5, 1.5, -1.0;
  return Cohort(x, Eigen::Vector3i(1, 0, 1), Eigen::Vector3d(1, 2, 3), Eigen::Vector3i(1, 0, 1));
}

}  // namespace

TEST_CASE("three-row csv parses") {
  const auto path = temp_file("wcte_three.csv", "time,event,treat,x1\n1,1,1,0.5\n2,0,0,1.5\n3,1,1,-1\n");
  const Cohort c = load_cohort(path);
  CHECK(c.n() == 3);
  CHECK(c.d() == 1);
  CHECK(c.j_star() == 1);
  CHECK(c.grid().size() == 3);
  CHECK(c.grid()(2) == 3.0);
  CHECK(c.arm_size(1) == 2);
}

TEST_CASE("event code 2 gives a competing-risks cohort") {
  const auto path = temp_file("wcte_cr.csv", "# comment\ntime,event,treat,x1\n1,2,1,0\n2,0,0,1\n3,1,0,0\n4,1,1,1\n");
  CHECK(load_cohort(path).j_star() == 2);
}

TEST_CASE("ingestion errors") {
  CHECK_THROWS_WITH(load_cohort(temp_file("wcte_t0.csv", "time,event,treat,x1\n0,1,1,0\n2,0,0,1\n")),
                    doctest::Contains("non-positive time"));
  CHECK_THROWS_WITH(load_cohort(temp_file("wcte_nocol.csv", "time,status,treat,x1\n1,1,1,0\n2,0,0,1\n")),
                    doctest::Contains("missing column"));
  CHECK_THROWS_WITH(load_cohort(temp_file("wcte_nan.csv", "time,event,treat,x1\n1,1,1,abc\n2,0,0,1\n")),
                    doctest::Contains("not numeric"));
  CHECK_THROWS_AS(load_cohort(temp_file("wcte_arm.csv", "time,event,treat,x1\n1,1,1,0\n2,0,1,1\n")), Error);
  CHECK_THROWS_AS(load_cohort(temp_file("wcte_tr.csv", "time,event,treat,x1\n1,1,2,0\n2,0,0,1\n")), Error);
  CHECK_THROWS_AS(load_cohort(temp_file("wcte_ev.csv", "time,event,treat,x1\n1,-1,1,0\n2,0,0,1\n")), Error);
  CHECK_THROWS_AS(load_cohort("/nonexistent/file.csv"), Error);
}

TEST_CASE("constructor validation") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(Cohort(x, Eigen::Vector2i(0, 1), Eigen::Vector2d(1, -1), Eigen::Vector2i(0, 0)), Error);
  CHECK_THROWS_AS(Cohort(x, Eigen::Vector2i(0, 1), Eigen::Vector3d(1, 1, 1), Eigen::Vector2i(0, 0)), Error);
  CHECK_THROWS_AS(Cohort(x, Eigen::Vector2i(0, 1), Eigen::Vector2d(1, 2), Eigen::Vector2i(0, 2), 1), Error);
  CHECK_THROWS_AS(Cohort(Eigen::MatrixXd(2, 0), Eigen::Vector2i(0, 1), Eigen::Vector2d(1, 2),
                         Eigen::Vector2i(0, 0)),
                  Error);
}

TEST_CASE("counting view") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 1);
  const Cohort c(x, Eigen::Vector3i(0, 1, 1), Eigen::Vector3d(2, 2, 3), Eigen::Vector3i(1, 0, 1));
  const auto ev = counting_view(c, 0, 2.0);
  CHECK(ev.at_risk);
  CHECK(ev.event == 1);
  CHECK(ev.by_cause(0) == 1);
  CHECK(ev.censor == 0);
  const auto ce = counting_view(c, 1, 2.0);
  CHECK(ce.at_risk);
  CHECK(ce.event == 0);
  CHECK(ce.censor == 1);
  const auto gone = counting_view(c, 0, 3.0);
  CHECK_FALSE(gone.at_risk);
  CHECK(gone.event == 0);
  CHECK(gone.censor == 0);
  CHECK_THROWS_AS(counting_view(c, 0, 2.5), Error);
}

TEST_CASE("counting-process invariants") {
  const Cohort c = test::toy_cohort(60, 3, 0.4, 2);
  int prev = static_cast<int>(c.n()) + 1;
  for (Index i = 0; i < c.n(); ++i) {
    int mass = 0;
    for (Index k = 0; k < c.grid().size(); ++k) {
      const auto v = counting_view(c, i, c.grid()(k));
      CHECK(v.event == v.by_cause.sum());
      mass += v.event + v.censor;
    }
    CHECK(mass == 1);
  }
  for (Index k = 0; k < c.grid().size(); ++k) {
    int at_risk = 0;
    for (Index i = 0; i < c.n(); ++i) at_risk += counting_view(c, i, c.grid()(k)).at_risk;
    CHECK(at_risk <= prev);
    prev = at_risk;
  }
}

TEST_CASE("ties are kept as one grid point") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 1);
  const Cohort c(x, Eigen::Vector4i(0, 1, 0, 1), Eigen::Vector4d(1, 1, 2, 2), Eigen::Vector4i(1, 0, 1, 1));
  CHECK(c.grid().size() == 2);
}

TEST_CASE("write and reload round-trips exactly") {
  const Cohort c = test::toy_cohort(40, 9, 0.5, 2);
  const auto p = (std::filesystem::temp_directory_path() / "wcte_roundtrip.csv").string();
  write_cohort(p, c);
  const Cohort r = load_cohort(p);
  CHECK(r.n() == c.n());
  CHECK((r.time().array() == c.time().array()).all());
  CHECK((r.cause().array() == c.cause().array()).all());
  CHECK((r.treat().array() == c.treat().array()).all());
  CHECK((r.covariates().array() == c.covariates().array()).all());
}

TEST_CASE("subset keeps the cause count") {
  const Cohort c = three_rows();
  const std::vector<Index> rows{0, 0, 1};
  const Cohort s = c.subset(rows);
  CHECK(s.n() == 3);
  CHECK(s.j_star() == c.j_star());
  CHECK(s.time()(1) == 1.0);
  CHECK(c.unit(1).time == 2.0);
}
