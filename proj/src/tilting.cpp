#include "wcte/tilting.hpp"

#include "wcte/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace wcte {

Estimand parse_estimand(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ate") return Estimand::ATE;
  if (s == "ato") return Estimand::ATO;
  if (s == "atm") return Estimand::ATM;
  if (s == "aten") return Estimand::ATEN;
  throw Error("tilting", "unknown estimand '" + std::string(text) + "'");
}

std::string estimand_name(Estimand e) {
  switch (e) {
    case Estimand::ATE: return "ate";
    case Estimand::ATO: return "ato";
    case Estimand::ATM: return "atm";
    case Estimand::ATEN: return "aten";
  }
  return "?";
}

double tilt_value(Estimand kind, double pi1) {
  if (!(pi1 > 0.0 && pi1 < 1.0)) throw Error("tilting", "propensity outside (0,1)");
  const double pi0 = 1.0 - pi1;
  switch (kind) {
    case Estimand::ATE: return 1.0;
    case Estimand::ATO: return pi1 * pi0;
    case Estimand::ATM: return std::min(pi1, pi0);
    case Estimand::ATEN: return -(pi1 * std::log(pi1) + pi0 * std::log(pi0));
  }
  return 1.0;
}

Eigen::VectorXd tilt(Estimand kind, const Eigen::VectorXd& pi1) {
  Eigen::VectorXd h(pi1.size());
  for (Eigen::Index i = 0; i < pi1.size(); ++i) h(i) = tilt_value(kind, pi1(i));
  return h;
}

BalancingWeights balancing_weights(Estimand kind, const Eigen::VectorXd& pi1,
                                   const Eigen::VectorXi& treat, int arm) {
  if (pi1.size() != treat.size()) throw Error("tilting", "length mismatch");
  BalancingWeights out;
  out.h = tilt(kind, pi1);
  out.w.resize(pi1.size());
  for (Eigen::Index i = 0; i < pi1.size(); ++i) {
    const double p = arm == 1 ? pi1(i) : 1.0 - pi1(i);
    if (treat(i) != arm) {
      out.w(i) = 0.0;
    } else {
      out.w(i) = kind == Estimand::ATO ? (arm == 1 ? 1.0 - pi1(i) : pi1(i)) : out.h(i) / p;
    }
  }
  return out;
}

}  // namespace wcte
