// il7: fit, simulate and compare IL-7 injection protocols from the command line.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "il7/error.hpp"
#include "il7/estimation.hpp"
#include "il7/io.hpp"
#include "il7/presets.hpp"
#include "il7/protocols.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace il7;

namespace {

struct Source {
  std::string preset = "table3-cycle";
  std::string report;

  Preset load() const {
    if (!report.empty()) return parse_parameter_document(read_file(report));
    return load_preset(preset);
  }
};

struct Individual {
  std::vector<double> u;
  std::optional<double> lambda, rho;

  RandomEffects resolve(const PopulationParams& pop) const {
    RandomEffects out;
    if (!u.empty()) {
      if (u.size() != 2) throw ValidationError("--u takes two values: u_lambda,u_rho");
      out = {u[0], u[1]};
    }
    if (lambda) out.u_lambda = std::log(*lambda) - pop.phi_lambda;
    if (rho) out.u_rho = std::log(*rho) - pop.phi_rho;
    if ((lambda && !(*lambda > 0)) || (rho && !(*rho > 0))) throw ValidationError("--lambda/--rho must be > 0");
    return out;
  }
};

struct Options {
  std::string config;
  // fit / predict
  std::string observations, injections, out, model = "cycle";
  std::optional<double> nu;
  int nodes = 9;
  double rdm_threshold = 0.1;
  int max_iterations = 100;
  std::string init_preset;
  bool no_covariance = false;
  bool verbose = false;
  std::string patient;
  // simulate / compare / predict
  Source source;
  Individual ind;
  std::string cycles = "0:3";
  std::string protocols = "A,B,C,D";
  double horizon = 1440.0;
  double threshold = 550.0;
  double interval = 90.0;
  double dose = 20.0;
  double min_cycle_gap = 0.0;
  std::string out_dir = ".";
  // generate
  std::size_t n = 100;
  std::uint64_t seed = 1;
  double duration = 720.0;
  double ki67_fraction = 0.5;
  bool first_cycle_only = false;
  bool no_noise = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_source(CLI::App* app, Options& o) {
  auto* pre = app->add_option("--preset", o.source.preset, "named parameter preset")->capture_default_str();
  auto* rep = app->add_option("--report", o.source.report, "fit report or preset JSON file");
  pre->excludes(rep);
}

void add_individual(CLI::App* app, Options& o) {
  app->add_option("--u", o.ind.u, "random effects u_lambda,u_rho")->delimiter(',')->expected(2);
  app->add_option("--lambda", o.ind.lambda, "individual production rate (natural scale)");
  app->add_option("--rho", o.ind.rho, "individual reversion rate (natural scale)");
}

void build(CLI::App& app, Options& o) {
  app.require_subcommand(1);
  app.add_option("--config", o.config, "JSON file of option defaults for the subcommand");

  auto* fit = app.add_subcommand("fit", "estimate population parameters from CSV data");
  fit->add_option("--observations", o.observations, "observations CSV")->required();
  fit->add_option("--injections", o.injections, "injections CSV")->required();
  fit->add_option("--model", o.model, "basic | three-beta | cycle")->capture_default_str();
  fit->add_option("--nu", o.nu, "feedback exponent (omit for no feedback)");
  fit->add_option("--out", o.out, "report path")->required();
  fit->add_option("--nodes", o.nodes, "quadrature nodes per dimension")->capture_default_str();
  fit->add_option("--rdm-threshold", o.rdm_threshold, "stopping threshold")->capture_default_str();
  fit->add_option("--max-iterations", o.max_iterations, "iteration cap")->capture_default_str();
  fit->add_option("--init-preset", o.init_preset, "start from a preset instead of the prior means");
  fit->add_flag("--no-covariance", o.no_covariance, "skip the final Hessian");
  fit->add_flag("--verbose", o.verbose, "report each iteration on stderr");

  auto* sim = app.add_subcommand("simulate", "simulate one trajectory");
  add_source(sim, o);
  add_individual(sim, o);
  sim->add_option("--cycles", o.cycles, "cycles as start:injections,... (days)")->capture_default_str();
  sim->add_option("--dose", o.dose, "dose, ug/kg")->capture_default_str();
  sim->add_option("--horizon", o.horizon, "days")->capture_default_str();
  sim->add_option("--out", o.out, "trajectory CSV")->required();

  auto* cmp = app.add_subcommand("compare-protocols", "compare injection protocols");
  add_source(cmp, o);
  add_individual(cmp, o);
  cmp->add_option("--protocols", o.protocols, "comma-separated subset of A,B,C,D")->capture_default_str();
  cmp->add_option("--horizon", o.horizon, "days")->capture_default_str();
  cmp->add_option("--threshold", o.threshold, "CD4 trigger, cells/uL")->capture_default_str();
  cmp->add_option("--interval", o.interval, "assessment interval, days")->capture_default_str();
  cmp->add_option("--dose", o.dose, "dose, ug/kg")->capture_default_str();
  cmp->add_option("--min-cycle-gap", o.min_cycle_gap, "minimum days between cycle starts")->capture_default_str();
  cmp->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();

  auto* gen = app.add_subcommand("generate", "generate a synthetic cohort");
  add_source(gen, o);
  gen->add_option("--n", o.n, "patients")->capture_default_str();
  gen->add_option("--seed", o.seed, "random seed")->capture_default_str();
  gen->add_option("--dose", o.dose, "dose, ug/kg")->capture_default_str();
  gen->add_option("--duration", o.duration, "follow-up, days")->capture_default_str();
  gen->add_option("--ki67-fraction", o.ki67_fraction, "share of patients with Ki67")->capture_default_str();
  gen->add_flag("--first-cycle-only", o.first_cycle_only, "no repeated cycles");
  gen->add_flag("--no-noise", o.no_noise, "observations on the model trajectory");
  gen->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();

  auto* pred = app.add_subcommand("predict", "individual predictions by empirical Bayes");
  add_source(pred, o);
  pred->add_option("--observations", o.observations, "observations CSV")->required();
  pred->add_option("--injections", o.injections, "injections CSV")->required();
  pred->add_option("--patient", o.patient, "patient id (default: all)");
  pred->add_option("--horizon", o.horizon, "days")->capture_default_str();
  pred->add_option("--nodes", o.nodes, "unused; accepted for config sharing")->capture_default_str();
  pred->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
}

/// Arguments synthesized from the config file for options not given on the command line.
std::vector<std::string> config_args(const std::string& path, const CLI::App& sub) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  if (!doc.is_object()) throw ValidationError(path + ": config must be a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, val] : doc.items()) {
    const CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt || key == "config") throw ValidationError(path + ": unknown key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;  // command line wins
    if (val.is_boolean()) {
      if (val.get<bool>()) out.push_back("--" + key);
      continue;
    }
    std::string text;
    if (val.is_array()) {
      for (const auto& x : val) text += (text.empty() ? "" : ",") + (x.is_string() ? x.get<std::string>() : x.dump());
    } else {
      text = val.is_string() ? val.get<std::string>() : val.dump();
    }
    out.push_back("--" + key + "=" + text);
  }
  return out;
}

InjectionSchedule parse_cycles(const std::string& spec, double dose) {
  std::vector<Cycle> cycles;
  for (const auto& item : split_list(spec)) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      cycles.push_back({std::stod(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw ValidationError("bad cycle '" + item + "' (expected start:injections)");
    }
  }
  return InjectionSchedule(cycles, dose);
}

std::vector<double> daily(double from, double to) {
  std::vector<double> g;
  for (double t = from; t <= to; t += 1.0) g.push_back(t);
  return g;
}

int cmd_fit(const Options& o) {
  const auto cohort = read_cohort(o.observations, o.injections);
  if (cohort.empty()) throw ValidationError("no patients in the input files");
  for (const auto& p : cohort) {
    if (p.observations.empty()) throw ValidationError("patient " + p.id + ": no observations");
  }
  ModelSpec spec;
  spec.variant = parse_variant(o.model);
  if (o.nu) spec.feedback = FeedbackSpec::with_exponent(*o.nu);
  spec.validate();
  const PriorSpec prior = intercept_prior(spec.variant);
  PopulationParams init = default_init(spec.variant, prior);
  if (!o.init_preset.empty()) {
    const Preset p = load_preset(o.init_preset);
    if (p.spec.variant != spec.variant) throw ValidationError("--init-preset is for a different model");
    init = p.pop;
  }
  OptimizerConfig cfg;
  cfg.rdm_threshold = o.rdm_threshold;
  cfg.max_iterations = o.max_iterations;
  cfg.compute_covariance = !o.no_covariance;
  if (o.verbose) {
    cfg.on_iteration = [](int it, double lp, double r, double step) {
      std::fprintf(stderr, "iteration %d  penalized %.6f  rdm %.4g  step %g\n", it, lp, r, step);
    };
  }
  LikelihoodOptions lo;
  lo.nodes = o.nodes;
  const CohortFit f = fit_cohort(cohort, spec, prior, init, cfg, lo);
  atomic_write(o.out, fit_report_json(f, prior));
  std::printf("iterations %d  rdm %.4g  loglik %.4f  penalized %.4f  lcva %.4f\n", f.result.iterations,
              f.result.final_rdm, f.result.loglik, f.result.penalized_loglik, f.result.lcva);
  if (!f.result.converged) {
    std::fprintf(stderr, "il7: error_class=numerical: %s\n", f.result.warning.c_str());
    return exit_code(ErrorClass::Numerical);
  }
  if (!f.result.warning.empty()) std::fprintf(stderr, "il7: warning: %s\n", f.result.warning.c_str());
  return 0;
}

int cmd_simulate(const Options& o) {
  const Preset p = o.source.load();
  const RandomEffects u = o.ind.resolve(p.pop);
  const InjectionSchedule schedule = parse_cycles(o.cycles, o.dose);
  const Trajectory tr = simulate_patient(schedule, p.spec, p.pop, u, daily(0.0, o.horizon));
  atomic_write(o.out, trajectory_csv(tr, schedule));
  return 0;
}

int cmd_compare(const Options& o) {
  const Preset p = o.source.load();
  const RandomEffects u = o.ind.resolve(p.pop);
  std::vector<ProtocolSpec> protos;
  for (const auto& name : split_list(o.protocols)) {
    ProtocolSpec s = ProtocolSpec::preset(name);
    s.horizon = o.horizon;
    s.trigger_threshold = o.threshold;
    s.assessment_interval = o.interval;
    s.dose = o.dose;
    s.min_cycle_gap = o.min_cycle_gap;
    s.validate();
    protos.push_back(s);
  }
  if (protos.empty()) throw ValidationError("no protocols given");
  const auto rows = compare_protocols(protos, p.spec, p.pop, u);
  const fs::path dir = o.out_dir;
  atomic_write(dir / "comparison.csv", comparison_csv(rows));
  int status = 0;
  for (const auto& r : rows) {
    if (!r.report) {
      std::fprintf(stderr, "il7: error_class=numerical: protocol %s: %s\n", r.protocol.c_str(), r.error.c_str());
      status = exit_code(ErrorClass::Numerical);
      continue;
    }
    atomic_write(dir / ("trajectory_" + r.protocol + ".csv"), trajectory_csv(r.report->trajectory, r.report->schedule));
    std::printf("%s  injections %d  cycles %d  days<500 %g  median %.1f\n", r.protocol.c_str(), r.report->n_injections,
                r.report->n_cycles, r.report->days_below, r.report->median_cd4);
  }
  return status;
}

int cmd_generate(const Options& o) {
  const Preset p = o.source.load();
  ObservationDesign d;
  d.dose = o.dose;
  d.duration = o.duration;
  d.ki67_fraction = o.ki67_fraction;
  d.repeat_cycles = !o.first_cycle_only;
  d.noise = !o.no_noise;
  const SyntheticCohort c = synth_cohort(p.spec, p.pop, o.n, d, o.seed);
  const fs::path dir = o.out_dir;
  atomic_write(dir / "observations.csv", observations_csv(c.patients));
  atomic_write(dir / "injections.csv", injections_csv(c.patients));
  atomic_write(dir / "truth.json", truth_json(p.spec, p.pop, c, o.seed));
  return 0;
}

int cmd_predict(const Options& o) {
  const Preset p = o.source.load();
  auto cohort = read_cohort(o.observations, o.injections);
  if (!o.patient.empty()) {
    std::erase_if(cohort, [&](const PatientRecord& r) { return r.id != o.patient; });
    if (cohort.empty()) throw ValidationError("patient '" + o.patient + "' not found");
  }
  const fs::path dir = o.out_dir;
  for (const auto& rec : cohort) {
    const IndividualPrediction pr = predict_individual(rec, p.spec, p.pop, o.horizon);
    std::vector<double> grid = pr.trajectory.times;
    for (const auto& ob : rec.observations) grid.push_back(ob.time);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const Trajectory tr = simulate_patient(rec.schedule, p.spec, p.pop, pr.u, grid);
    std::string csv = "time_days,cd4,ki67,observed_cd4,observed_ki67\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::string ocd4, oki;
      for (const auto& ob : rec.observations) {
        if (ob.time != grid[i]) continue;
        (ob.kind == ObsKind::Cd4 ? ocd4 : oki) = format_double(ob.value);
      }
      csv += format_double(grid[i]) + "," + format_double(tr.states[i].total()) + "," + format_double(tr.states[i].p) +
             "," + ocd4 + "," + oki + "\n";
    }
    atomic_write(dir / ("prediction_" + rec.id + ".csv"), csv);
    std::printf("%s  u_lambda %.5f  u_rho %.5f\n", rec.id.c_str(), pr.u.u_lambda, pr.u.u_rho);
  }
  return 0;
}

const char* class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::Validation:
      return "validation";
    case ErrorClass::Numerical:
      return "numerical";
    case ErrorClass::Io:
      return "io";
  }
  return "unknown";
}

int dispatch(const CLI::App& app, const Options& o) {
  const std::string name = app.get_subcommands().front()->get_name();
  if (name == "fit") return cmd_fit(o);
  if (name == "simulate") return cmd_simulate(o);
  if (name == "compare-protocols") return cmd_compare(o);
  if (name == "generate") return cmd_generate(o);
  return cmd_predict(o);
}

/// Parse, fold in the config file (command line > file > defaults) and run.
int run(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"CD4 T-cell dynamics under IL-7 injection cycles", "il7"};
  build(app, o);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "il7: error_class=validation: %s\n", e.what());
    return exit_code(ErrorClass::Validation);
  }
  if (o.config.empty()) return dispatch(app, o);
  std::vector<std::string> merged = args;
  const auto extra = config_args(o.config, *app.get_subcommands().front());
  merged.insert(merged.end(), extra.begin(), extra.end());
  Options o2;
  CLI::App app2{"CD4 T-cell dynamics under IL-7 injection cycles", "il7"};
  build(app2, o2);
  try {
    std::vector<std::string> rev(merged.rbegin(), merged.rend());
    app2.parse(rev);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "il7: error_class=validation: %s: %s\n", o.config.c_str(), e.what());
    return exit_code(ErrorClass::Validation);
  }
  return dispatch(app2, o2);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const Error& e) {
    std::fprintf(stderr, "il7: error_class=%s: %s\n", class_name(e.error_class()), e.what());
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "il7: error_class=io: %s\n", e.what());
    return exit_code(ErrorClass::Io);
  }
}
