#include "wcte/cohort.hpp"

#include "wcte/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace wcte {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("cohort", message); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, Index row, const std::string& column) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc() || ptr != last || !std::isfinite(value)) {
    fail("row " + std::to_string(row + 1) + ": column '" + column + "' is not numeric ('" +
         text + "')");
  }
  return value;
}

}  // namespace

Eigen::VectorXd distinct_sorted(const Eigen::Ref<const Eigen::VectorXd>& values) {
  std::vector<double> v(values.data(), values.data() + values.size());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

Cohort::Cohort(Eigen::MatrixXd covariates, Eigen::VectorXi treat, Eigen::VectorXd time,
               Eigen::VectorXi cause, int j_star)
    : covariates_(std::move(covariates)),
      treat_(std::move(treat)),
      time_(std::move(time)),
      cause_(std::move(cause)) {
  const Index n = time_.size();
  if (n == 0) fail("empty cohort");
  if (treat_.size() != n || cause_.size() != n || covariates_.rows() != n) {
    fail("column lengths differ");
  }
  if (covariates_.cols() < 1) fail("at least one covariate is required");
  for (Index i = 0; i < n; ++i) {
    if (!(time_(i) > 0.0) || !std::isfinite(time_(i))) {
      fail("non-positive time at row " + std::to_string(i + 1));
    }
    if (treat_(i) != 0 && treat_(i) != 1) {
      fail("treat outside {0,1} at row " + std::to_string(i + 1));
    }
    if (cause_(i) < 0) fail("event code outside {0..j*} at row " + std::to_string(i + 1));
  }
  if (!covariates_.allFinite()) fail("non-finite covariate value");
  const int max_code = cause_.maxCoeff();
  j_star_ = j_star < 0 ? std::max(1, max_code) : j_star;
  if (max_code > j_star_) fail("event code outside {0..j*}");
  if (arm_size(0) == 0 || arm_size(1) == 0) fail("empty arm");
  grid_ = distinct_sorted(time_);
}

ObservedUnit Cohort::unit(Index i) const {
  return {covariates_.row(i).transpose(), treat_(i), time_(i), cause_(i)};
}

Index Cohort::arm_size(int arm) const { return (treat_.array() == arm).count(); }

Cohort Cohort::subset(std::span<const Index> rows) const {
  const auto m = static_cast<Index>(rows.size());
  Eigen::MatrixXd x(m, d());
  Eigen::VectorXi a(m), c(m);
  Eigen::VectorXd t(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    x.row(r) = covariates_.row(i);
    a(r) = treat_(i);
    t(r) = time_(i);
    c(r) = cause_(i);
  }
  return Cohort(std::move(x), std::move(a), std::move(t), std::move(c), j_star_);
}

Cohort load_cohort(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail("'" + path + "' is empty");
  while (!line.empty() && line[0] == '#') {
    if (!std::getline(in, line)) fail("'" + path + "' has no header");
  }
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& name) -> Index {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail("missing column '" + name + "'");
    return static_cast<Index>(it - header.begin());
  };
  const Index time_col = find(schema.time);
  const Index event_col = find(schema.event);
  const Index treat_col = find(schema.treat);
  std::vector<Index> cov_cols;
  for (Index c = 0; c < static_cast<Index>(header.size()); ++c) {
    if (c != time_col && c != event_col && c != treat_col) cov_cols.push_back(c);
  }
  if (cov_cols.empty()) fail("no covariate columns");

  std::vector<double> times, covs;
  std::vector<int> events, treats;
  Index row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      fail("row " + std::to_string(row + 1) + " has " + std::to_string(fields.size()) +
           " fields, expected " + std::to_string(header.size()));
    }
    auto at = [&](Index c) { return fields[static_cast<std::size_t>(c)]; };
    times.push_back(parse_number(at(time_col), row, schema.time));
    const double ev = parse_number(at(event_col), row, schema.event);
    const double tr = parse_number(at(treat_col), row, schema.treat);
    if (ev != std::floor(ev)) fail("row " + std::to_string(row + 1) + ": event code not integer");
    if (tr != 0.0 && tr != 1.0) fail("treat outside {0,1} at row " + std::to_string(row + 1));
    events.push_back(static_cast<int>(ev));
    treats.push_back(static_cast<int>(tr));
    for (Index c : cov_cols) covs.push_back(parse_number(at(c), row, header[c]));
    ++row;
  }
  const Index n = row;
  const Index d = static_cast<Index>(cov_cols.size());
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = covs[static_cast<std::size_t>(i * d + j)];
  return Cohort(std::move(x), Eigen::Map<Eigen::VectorXi>(treats.data(), n),
                Eigen::Map<Eigen::VectorXd>(times.data(), n),
                Eigen::Map<Eigen::VectorXi>(events.data(), n));
}

void write_cohort(const std::string& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) fail("cannot write '" + path + "'");
  out.precision(17);
  out << "time,event,treat";
  for (Index j = 0; j < cohort.d(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Index i = 0; i < cohort.n(); ++i) {
    out << cohort.time()(i) << ',' << cohort.cause()(i) << ',' << cohort.treat()(i);
    for (Index j = 0; j < cohort.d(); ++j) out << ',' << cohort.covariates()(i, j);
    out << '\n';
  }
}

CountingView counting_view(const Cohort& cohort, Index i, double t) {
  const auto& g = cohort.grid();
  if (!std::binary_search(g.data(), g.data() + g.size(), t)) {
    fail("time " + std::to_string(t) + " is not on the cohort grid");
  }
  CountingView v;
  const double ti = cohort.time()(i);
  const int ci = cohort.cause()(i);
  v.at_risk = ti >= t;
  v.by_cause = Eigen::VectorXi::Zero(cohort.j_star());
  if (ti == t) {
    if (ci > 0) {
      v.event = 1;
      v.by_cause(ci - 1) = 1;
    } else {
      v.censor = 1;
    }
  }
  return v;
}

}  // namespace wcte
