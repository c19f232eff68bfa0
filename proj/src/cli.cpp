#include "wcte/cli.hpp"

#include "wcte/comparators.hpp"
#include "wcte/dml.hpp"
#include "wcte/error.hpp"
#include "wcte/inference.hpp"
#include "wcte/parallel.hpp"
#include "wcte/random.hpp"
#include "wcte/simlab.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace wcte::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string csv_banner(std::uint64_t seed) {
  return "# wcte " WCTE_VERSION " seed=" + std::to_string(seed) + "\n";
}

void add_data_options(CLI::App* app, RunConfig& c) {
  app->add_option("--input", c.input, "Cohort CSV");
  app->add_option("--time-col", c.time_col, "Column holding the observed time")->capture_default_str();
  app->add_option("--event-col", c.event_col, "Column holding the event code (0 = censored)")->capture_default_str();
  app->add_option("--treat-col", c.treat_col, "Column holding the 0/1 treatment")->capture_default_str();
}

void add_target_options(CLI::App* app, RunConfig& c) {
  app->add_option("--estimand", c.estimands, "ate, ato, atm, aten (comma list)")->capture_default_str();
  app->add_option("--outcome", c.outcome, "rmst or rmtl")->capture_default_str();
  app->add_option("--cause", c.cause, "Cause of interest for rmtl")->capture_default_str();
  app->add_option("--tau", c.tau, "Largest restriction time")->capture_default_str();
  app->add_option("--epsilon", c.epsilon, "Propensity truncation / nuisance floor 1/epsilon")->capture_default_str();
}

void add_learner_options(CLI::App* app, RunConfig& c) {
  app->add_option("--propensity-learners", c.propensity_learners, "Comma list")->capture_default_str();
  app->add_option("--event-learners", c.event_learners, "Comma list")->capture_default_str();
  app->add_option("--censoring-learners", c.censoring_learners, "Comma list")->capture_default_str();
  app->add_option("--stack-loss", c.stack_loss, "nll or brier")->capture_default_str();
  app->add_option("--inner-folds", c.inner_folds, "Folds used to stack learners")->capture_default_str();
}

void add_run_options(CLI::App* app, RunConfig& c) {
  app->add_option("--seed", c.seed, "Top-level seed")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
  app->add_option("--config", "Key-value config file (TOML/INI); flags on the command line win");
}

std::vector<Estimand> parse_estimands(const std::string& text) {
  std::vector<Estimand> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(parse_estimand(item));
  }
  if (out.empty()) throw UsageError("no estimand given");
  return out;
}

Outcome parse_outcome(const std::string& text) {
  if (text == "rmst") return Outcome::RMST;
  if (text == "rmtl") return Outcome::RMTL;
  throw UsageError("--outcome must be rmst or rmtl");
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

NuisanceSpecs learner_specs(const RunConfig& c) {
  NuisanceSpecs s;
  s.propensity = parse_learners(c.propensity_learners);
  s.event = parse_learners(c.event_learners);
  s.censoring = parse_learners(c.censoring_learners);
  s.inner_folds = c.inner_folds;
  if (c.stack_loss == "nll") {
    s.loss = EnsembleLoss::NegLogLik;
  } else if (c.stack_loss == "brier") {
    s.loss = EnsembleLoss::Brier;
  } else {
    throw UsageError("--stack-loss must be nll or brier");
  }
  return s;
}

void check_common(const RunConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw UsageError("--alpha must lie in (0,1)");
  if (c.tau < 0.0) throw UsageError("--tau must be positive");
  for (double t : c.tau_extra) {
    if (!(t > 0.0)) throw UsageError("tau values must be positive");
  }
  if (c.tau_l && c.tau_u && *c.tau_l > *c.tau_u) throw UsageError("--tau-l exceeds --tau-u");
  if (c.threads < 0) throw UsageError("--threads must be non-negative");
  parse_estimands(c.estimands);
  parse_outcome(c.outcome);
}

std::filesystem::path output_dir(const RunConfig& c) {
  std::filesystem::path dir = c.out_dir;
  if (const char* env = std::getenv("WCTE_OUTPUT_DIR"); env && *env) dir = env;
  std::filesystem::create_directories(dir);
  return dir;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error("cli", "cannot write " + p.string());
  f.precision(10);
  return f;
}

void echo_config(std::ostream& out, const RunConfig& c) {
  out << "[config]\n";
  out << "mode = " << c.mode << '\n';
  auto kv = [&](const char* k, const auto& v) { out << k << " = " << v << '\n'; };
  if (c.mode != "simulate") {
    kv("input", c.input);
    kv("time-col", c.time_col);
    kv("event-col", c.event_col);
    kv("treat-col", c.treat_col);
  } else {
    kv("setting", c.setting);
    kv("reps", c.reps);
    kv("n", c.n);
    kv("tau-points", c.tau_points);
    kv("truth-draws", c.truth_draws);
    kv("bands", c.bands ? "true" : "false");
    kv("bootstrap-targets", c.bootstrap_targets);
    kv("winsorized", c.winsorized ? "true" : "false");
  }
  kv("estimand", c.estimands);
  kv("outcome", c.outcome);
  kv("cause", c.cause);
  kv("tau", c.tau);
  if (!c.tau_extra.empty()) {
    out << "tau-grid = ";
    for (std::size_t i = 0; i < c.tau_extra.size(); ++i) out << (i ? "," : "") << c.tau_extra[i];
    out << '\n';
  }
  kv("epsilon", c.epsilon);
  kv("propensity-learners", c.propensity_learners);
  kv("event-learners", c.event_learners);
  kv("censoring-learners", c.censoring_learners);
  kv("stack-loss", c.stack_loss);
  kv("inner-folds", c.inner_folds);
  if (c.mode != "compare") kv("k", c.k);
  kv("alpha", c.alpha);
  if (c.mode == "estimate") {
    kv("band-paths", c.band_paths);
    if (c.tau_l) kv("tau-l", *c.tau_l);
    if (c.tau_u) kv("tau-u", *c.tau_u);
    kv("no-shape-correct", c.no_shape_correct ? "true" : "false");
  } else {
    kv("comparators", c.comparators);
    kv("bootstrap", c.bootstrap);
    if (c.mode == "compare") {
      kv("winsorize", c.winsorize);
      kv("grid-points", c.grid_points);
    } else {
      kv("band-paths", c.band_paths);
    }
  }
  kv("seed", c.seed);
  kv("threads", c.threads);
  kv("out-dir", c.out_dir);
}

Cohort read_input(const RunConfig& c) {
  if (c.input.empty()) throw UsageError("--input is required in " + c.mode + " mode");
  CsvSchema schema;
  schema.time = c.time_col;
  schema.event = c.event_col;
  schema.treat = c.treat_col;
  return load_cohort(c.input, schema);
}

int run_estimate(const RunConfig& c, std::ostream& out) {
  check_common(c);
  if (c.k < 2) throw UsageError("--k must be at least 2");
  if (c.band_paths < 1000) throw UsageError("--band-paths must be at least 1000");
  const auto estimands = parse_estimands(c.estimands);
  const Outcome outcome = parse_outcome(c.outcome);
  const NuisanceSpecs specs = learner_specs(c);
  const Cohort cohort = read_input(c);
  const int threads = c.threads > 0 ? c.threads : default_threads();
  const double tau_max = c.tau > 0.0 ? c.tau : cohort.time().maxCoeff();

  const CrossFitPlan plan = make_plan(cohort, c.k, c.seed);
  const FittedNuisances nu = cross_fit(cohort, plan, specs, c.epsilon, threads);
  const Eigen::VectorXd tau = default_tau_grid(cohort, tau_max, c.tau_extra);
  const auto comp = eif_components(cohort, nu, outcome, c.cause, tau, threads);

  const auto dir = output_dir(c);
  std::ofstream summary = open_out(dir / "summary.txt");
  summary << csv_banner(c.seed);
  echo_config(summary, c);
  summary << "\n[run]\n";
  summary << "n = " << cohort.n() << "\ntreated = " << cohort.arm_size(1)
          << "\ncontrol = " << cohort.arm_size(0) << "\ncauses = " << cohort.j_star() << '\n';
  summary << "folds = " << plan.k << "\nfold sizes =";
  for (const auto& m : plan.members) summary << ' ' << m.size();
  summary << "\npropensity truncated = " << nu.truncated() << " (bounds " << nu.floor() << ", "
          << 1.0 - nu.floor() << ")\n";
  summary << "tau grid = " << tau.size() << " points on [" << tau(0) << ", " << tau(tau.size() - 1) << "]\n";

  for (Estimand e : estimands) {
    const EstimateResult res = estimate_from_components(comp, nu.propensity(), cohort.treat(), plan, e,
                                                        !c.no_shape_correct);
    BandSpec bs;
    bs.alpha = c.alpha;
    bs.tau_l = c.tau_l;
    bs.tau_u = c.tau_u;
    bs.paths = c.band_paths;
    bs.seed = substream_seed(c.seed, "multiplier", static_cast<std::uint64_t>(e));
    bs.threads = threads;
    const BandResult band = multiplier_band(res.contrast, res.curve.contrast, bs);
    const CovarianceCheck cov = standardized_covariance(res.contrast.centered, res.curve.contrast.sigma_plus,
                                                        band.first, band.last);
    const std::string suffix = estimands.size() > 1 ? "_" + estimand_name(e) : "";
    {
      std::ofstream f = open_out(dir / ("curves" + suffix + ".csv"));
      f << csv_banner(c.seed);
      write_curve_csv(f, res.curve);
    }
    {
      std::ofstream f = open_out(dir / ("bands" + suffix + ".csv"));
      f << csv_banner(c.seed);
      write_band_csv(f, res.curve.tau, res.curve.contrast.corrected, band);
    }
    const Index last = tau.size() - 1;
    summary << "\n[" << estimand_name(e) << "]\n";
    summary << "estimate(tau=" << tau(last) << ") = " << res.curve.contrast.corrected(last)
            << "\nse = " << res.curve.contrast.se(last) << '\n';
    summary << "c_alpha = " << band.critical << " on [" << tau(band.first) << ", " << tau(band.last)
            << "] with " << c.band_paths << " paths\n";
    summary << "covariance min eigenvalue = " << cov.min_eigenvalue << (cov.psd ? "" : " (not psd)") << '\n';
    out << estimand_name(e) << ": " << res.curve.contrast.corrected(last) << " (se "
        << res.curve.contrast.se(last) << ") at tau = " << tau(last) << ", c_alpha = " << band.critical
        << '\n';
  }
  out << "wrote " << dir.string() << '\n';
  return 0;
}

int run_compare(const RunConfig& c, std::ostream& out) {
  check_common(c);
  if (c.bootstrap != 0 && c.bootstrap < 200) throw UsageError("--bootstrap must be 0 or at least 200");
  if (c.winsorize != 0.0 && !(c.winsorize > 0.5 && c.winsorize < 1.0)) {
    throw UsageError("--winsorize must be 0 or lie in (0.5, 1)");
  }
  const auto estimands = parse_estimands(c.estimands);
  const Outcome outcome = parse_outcome(c.outcome);
  const Cohort cohort = read_input(c);
  ComparatorConfig cc;
  cc.specs = learner_specs(c);
  cc.epsilon = c.epsilon;
  cc.grid_points = c.grid_points;
  cc.tau_max = c.tau > 0.0 ? c.tau : cohort.time().maxCoeff();
  cc.seed = substream_seed(c.seed, "comparator");
  cc.threads = c.threads > 0 ? c.threads : default_threads();

  std::vector<ComparatorSpec> kinds;
  for (const auto& name : split(c.comparators)) {
    ComparatorSpec s = parse_comparator(name, outcome, c.cause);
    if (c.winsorize > 0.0 && s.kind != ComparatorKind::OR && s.winsorize == 0.0) s.winsorize = c.winsorize;
    kinds.push_back(s);
  }
  if (kinds.empty()) throw UsageError("--comparators is empty");

  const ComparatorNuisances nu = fit_comparator_nuisances(cohort, cc);
  const ComparatorTerms terms = comparator_terms(cohort, nu, outcome, c.cause, cc);
  std::vector<ComparatorCurve> curves;
  std::vector<BootstrapTarget> targets;
  for (const auto& s : kinds) {
    for (Estimand e : estimands) {
      curves.push_back(comparator_curve(terms, nu.pi1, cohort.treat(), s, e));
      targets.push_back({s, e});
    }
  }
  std::optional<BootstrapResult> boot;
  if (c.bootstrap > 0) boot = bootstrap_se(targets, cohort, cc, c.bootstrap, substream_seed(c.seed, "bootstrap"));

  const auto dir = output_dir(c);
  {
    std::ofstream f = open_out(dir / "comparators.csv");
    f << csv_banner(c.seed);
    write_comparator_csv(f, curves, boot ? &*boot : nullptr);
  }
  std::ofstream summary = open_out(dir / "summary.txt");
  summary << csv_banner(c.seed);
  echo_config(summary, c);
  summary << "\n[run]\nn = " << cohort.n() << "\npropensity truncated = " << nu.truncated << '\n';
  if (boot) summary << "bootstrap redraws = " << boot->redraws << '\n';
  const Index last = terms.edges.size() - 1;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& cv = curves[k];
    summary << comparator_name(cv.spec) << ' ' << estimand_name(cv.estimand) << ": "
            << cv.contrast(last);
    if (boot) summary << " (se " << boot->se[k][2](last) << ')';
    summary << '\n';
  }
  out << "wrote " << dir.string() << '\n';
  return 0;
}

int run_simulate(const RunConfig& c, std::ostream& out) {
  check_common(c);
  if (c.reps < 2) throw UsageError("--reps must be at least 2");
  if (c.bands && c.band_paths < 1000) throw UsageError("--band-paths must be at least 1000");
  StudyConfig sc;
  sc.setting = c.setting;
  sc.n = c.n;
  sc.reps = c.reps;
  sc.seed = c.seed;
  sc.threads = c.threads > 0 ? c.threads : default_threads();
  sc.estimands = parse_estimands(c.estimands);
  sc.outcome = parse_outcome(c.outcome);
  sc.cause = c.cause;
  sc.tau_max = c.tau > 0.0 ? c.tau : 4.0;
  sc.tau_points = c.tau_points;
  sc.alpha = c.alpha;
  sc.k = c.k;
  sc.epsilon = c.epsilon;
  sc.specs = learner_specs(c);
  for (const auto& name : split(c.comparators)) sc.comparators.push_back(parse_comparator(name).kind);
  sc.winsorized = c.winsorized;
  for (const auto& t : split(c.bootstrap_targets)) {
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw UsageError("bootstrap target must look like dr:ato");
    ComparatorSpec s = parse_comparator(t.substr(0, colon), sc.outcome, sc.cause);
    sc.bootstrap.push_back({s, parse_estimand(t.substr(colon + 1))});
  }
  sc.bootstrap_reps = c.bootstrap > 0 ? c.bootstrap : 200;
  if (!sc.bootstrap.empty() && sc.bootstrap_reps < 200) throw UsageError("--bootstrap must be at least 200");
  sc.bands = c.bands;
  sc.band_paths = c.band_paths;
  sc.band_estimands = sc.estimands;
  sc.truth_draws = c.truth_draws;

  const McReport report = run_study(sc);
  const auto dir = output_dir(c);
  {
    std::ofstream f = open_out(dir / "mc_report.csv");
    f << csv_banner(c.seed);
    write_report_csv(f, report);
  }
  {
    std::ofstream f = open_out(dir / "mc_summary.txt");
    f << csv_banner(c.seed);
    echo_config(f, c);
    f << '\n';
    write_report_table(f, report, sc.tau_max);
  }
  if (c.emit_propensity) {
    const SimulatedData d = generate(sc.setting, sc.n, substream_seed(sc.seed, "replication", 0), sc.dgp);
    std::ofstream f = open_out(dir / "propensity.csv");
    f << csv_banner(c.seed) << "treat,pi1\n";
    for (Index i = 0; i < d.cohort.n(); ++i) f << d.cohort.treat()(i) << ',' << d.pi1(i) << '\n';
  }
  write_report_table(out, report, sc.tau_max);
  return 0;
}

// Prepends config-file entries that the command line does not set.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string path;
  std::set<std::string> given;
  std::string mode;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (i == 0 && a.rfind("-", 0) != 0) mode = a;
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    given.insert(key);
    if (key == "config") {
      if (eq != std::string::npos) {
        path = a.substr(eq + 1);
      } else if (i + 1 < args.size()) {
        path = args[i + 1];
      } else {
        throw UsageError("--config needs a file");
      }
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigBase().from_config(in);
  } catch (const CLI::Error& e) {
    throw UsageError("cannot parse config file " + path + ": " + e.what());
  }
  std::vector<std::string> extra;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == mode)) continue;
    if (item.name == "config" || given.count(item.name)) continue;
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    extra.push_back("--" + item.name + "=" + value);
  }
  std::vector<std::string> merged;
  merged.reserve(args.size() + extra.size());
  if (!mode.empty()) merged.push_back(args[0]);
  merged.insert(merged.end(), extra.begin(), extra.end());
  merged.insert(merged.end(), args.begin() + (mode.empty() ? 0 : 1), args.end());
  return merged;
}

}  // namespace

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weighted cumulative treatment effects for censored time-to-event data", "wcte"};
  app.require_subcommand(1);
  app.set_version_flag("--version", WCTE_VERSION);

  RunConfig est, cmp, sim;
  est.mode = "estimate";
  cmp.mode = "compare";
  sim.mode = "simulate";
  sim.estimands = "ate,ato,atm,aten";
  sim.tau = 4.0;
  sim.band_paths = 2000;
  sim.propensity_learners = "logistic";
  sim.event_learners = "exponential-ph";
  sim.censoring_learners = "exponential-ph";
  sim.comparators = "";
  cmp.propensity_learners = "logistic";

  auto* e = app.add_subcommand("estimate", "Cross-fitted estimates, pointwise CIs and bands");
  add_data_options(e, est);
  add_target_options(e, est);
  add_learner_options(e, est);
  e->add_option("--tau-grid", est.tau_extra, "Extra restriction times")->delimiter(',');
  e->add_option("--k", est.k, "Cross-fitting folds")->capture_default_str();
  e->add_option("--alpha", est.alpha, "Error level")->capture_default_str();
  e->add_option("--band-paths", est.band_paths, "Multiplier paths")->capture_default_str();
  e->add_option("--tau-l", est.tau_l, "Band start");
  e->add_option("--tau-u", est.tau_u, "Band end");
  e->add_flag("--no-shape-correct", est.no_shape_correct, "Skip LCM/GCM projection");
  add_run_options(e, est);

  auto* c = app.add_subcommand("compare", "Outcome regression, IPCW and doubly robust comparators");
  add_data_options(c, cmp);
  add_target_options(c, cmp);
  add_learner_options(c, cmp);
  c->add_option("--comparators", cmp.comparators, "or, ipcw, ipcw-cc, dr; '.t' suffix Winsorizes")->capture_default_str();
  c->add_option("--bootstrap", cmp.bootstrap, "Bootstrap replicates (0 = none)")->capture_default_str();
  c->add_option("--winsorize", cmp.winsorize, "IPTW cap quantile (0 = none)")->capture_default_str();
  c->add_option("--grid-points", cmp.grid_points, "Cells of the t-grid")->capture_default_str();
  c->add_option("--alpha", cmp.alpha, "Error level")->capture_default_str();
  add_run_options(c, cmp);

  auto* s = app.add_subcommand("simulate", "Monte Carlo study on a built-in setting");
  s->add_option("--setting", sim.setting, "1-4")->capture_default_str();
  s->add_option("--reps", sim.reps, "Replications")->capture_default_str();
  s->add_option("--n", sim.n, "Sample size")->capture_default_str();
  add_target_options(s, sim);
  add_learner_options(s, sim);
  s->add_option("--tau-points", sim.tau_points, "Uniform tau grid size")->capture_default_str();
  s->add_option("--k", sim.k, "Cross-fitting folds")->capture_default_str();
  s->add_option("--alpha", sim.alpha, "Error level")->capture_default_str();
  s->add_option("--comparators", sim.comparators, "Comparators to run alongside")->capture_default_str();
  s->add_flag("--winsorized", sim.winsorized, "Add 99% Winsorized IPCW/DR variants");
  s->add_option("--bootstrap", sim.bootstrap, "Bootstrap replicates for the targets")->capture_default_str();
  s->add_option("--bootstrap-targets", sim.bootstrap_targets, "e.g. ipcw:ate,dr:ato");
  s->add_flag("--bands", sim.bands, "Record simultaneous band coverage");
  s->add_option("--band-paths", sim.band_paths, "Multiplier paths")->capture_default_str();
  s->add_option("--truth-draws", sim.truth_draws, "Oracle covariate draws")->capture_default_str();
  s->add_flag("--emit-propensity", sim.emit_propensity, "Write true propensities of one draw");
  add_run_options(s, sim);

  try {
    std::vector<std::string> args = merge_config(raw);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << WCTE_VERSION << '\n';
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return 2;
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (e->parsed()) return run_estimate(est, out);
    if (c->parsed()) return run_compare(cmp, out);
    return run_simulate(sim, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return 2;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace wcte::cli
