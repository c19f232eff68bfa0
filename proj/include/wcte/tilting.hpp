#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <string_view>

namespace wcte {

enum class Estimand { ATE, ATO, ATM, ATEN };

inline constexpr std::array<Estimand, 4> kAllEstimands{Estimand::ATE, Estimand::ATO, Estimand::ATM,
                                                       Estimand::ATEN};

Estimand parse_estimand(std::string_view text);
std::string estimand_name(Estimand e);

/// h(pi1): ATE 1, ATO pi(1-pi), ATM min(pi, 1-pi), ATEN binary entropy.
double tilt_value(Estimand kind, double pi1);

/// Elementwise h over a vector of P(A = 1 | X).
Eigen::VectorXd tilt(Estimand kind, const Eigen::VectorXd& pi1);

struct BalancingWeights {
  Eigen::VectorXd h;
  Eigen::VectorXd w;  // h I(A = a) / pi(a | X)
};

BalancingWeights balancing_weights(Estimand kind, const Eigen::VectorXd& pi1,
                                   const Eigen::VectorXi& treat, int arm);

}  // namespace wcte
