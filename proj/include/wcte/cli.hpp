#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace wcte::cli {

struct RunConfig {
  std::string mode;  // estimate | simulate | compare
  std::string input;
  std::string time_col = "time";
  std::string event_col = "event";
  std::string treat_col = "treat";
  std::string estimands = "ato";
  std::string outcome = "rmst";
  int cause = 1;
  double tau = 0.0;  // tau_max; 0 = largest observed time (estimate/compare)
  std::vector<double> tau_extra;
  int k = 2;
  double epsilon = 50.0;
  std::string propensity_learners = "logistic";
  std::string event_learners = "cox";
  std::string censoring_learners = "cox";
  std::string stack_loss = "nll";
  int inner_folds = 3;
  double alpha = 0.05;
  int band_paths = 10000;
  std::optional<double> tau_l;
  std::optional<double> tau_u;
  bool no_shape_correct = false;

  std::string comparators = "or,ipcw,ipcw-cc,dr";
  int bootstrap = 0;
  double winsorize = 0.0;
  int grid_points = 100;

  int setting = 1;
  int reps = 300;
  long long n = 4000;
  std::string bootstrap_targets;
  bool bands = false;
  long long truth_draws = 2000000;
  int tau_points = 40;
  bool winsorized = false;
  bool emit_propensity = false;

  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all cores
  std::string out_dir = ".";
};

/// Runs one subcommand; returns 0 on success, 1 on runtime errors and 2 on
/// usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace wcte::cli
