#include "wcte/lifetables.hpp"

namespace wcte {

template struct StepFunction<double>;
template StepFunction<double> cumhaz_to_survival(const StepFunction<double>&, SurvivalTransform);
template double step_integral(const StepFunction<double>&, double);
template StepFunction<double> cif_from_hazards(const StepFunction<double>&,
                                               const StepFunction<double>&);

}  // namespace wcte
