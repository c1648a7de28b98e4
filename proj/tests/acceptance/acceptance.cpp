// Acceptance suite: one PASS/FAIL line per criterion, indented detail lines
// below it. Arguments select criteria by name; no arguments runs all of them.
// Exit status is 1 when any selected criterion fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "il7/covariates.hpp"
#include "il7/dynamics.hpp"
#include "il7/error.hpp"
#include "il7/estimation.hpp"
#include "il7/likelihood.hpp"
#include "il7/parallel.hpp"
#include "il7/presets.hpp"
#include "il7/protocols.hpp"
#include "il7/simd/kernels.hpp"
#include "mc_oracle.hpp"

using namespace il7;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

class Report {
 public:
  explicit Report(std::string name) : name_(std::move(name)) {}

  __attribute__((format(printf, 2, 3))) void note(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    lines_.emplace_back(buf);
  }

  /// Records a sub-check; the criterion passes only if every check does.
  bool check(bool ok, const char* what) {
    note("%s %s", ok ? "ok  " : "FAIL", what);
    pass_ = pass_ && ok;
    return ok;
  }

  bool pass() const { return pass_; }
  const std::string& name() const { return name_; }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::string name_;
  bool pass_ = true;
  std::vector<std::string> lines_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

__attribute__((format(printf, 1, 2))) std::string strf(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

void check_near(Report& r, const char* label, double value, double target, double tol) {
  r.check(within(value, target, tol), strf("%s %.4g (target %g +- %g)", label, value, target, tol).c_str());
}

void check_runtime(Report& r, double secs, double limit) {
  r.check(secs < limit, strf("runtime %.3g s (limit %g s)", secs, limit).c_str());
}

// ---------------------------------------------------------------------------

void equilibrium_values(Report& r) {
  const auto t0 = Clock::now();
  const Preset p = load_preset("table3-cycle");
  const CompartmentState eq = equilibrium(p.pop.baseline_rates(), FeedbackSpec::none());
  const double secs = seconds_since(t0);
  r.note("Q %.3f  P %.3f", eq.q, eq.p);
  check_near(r, "total CD4", eq.total(), 272.0, 1.0);
  check_near(r, "Ki67", eq.p, 6.3, 0.1);
  check_runtime(r, secs, 1.0);
}

void covariate_scale(Report& r) {
  const auto t0 = Clock::now();
  const Preset p = load_preset("table1-basic");
  const InjectionSchedule s({{0.0, 3}}, 20.0);
  const BiologicalRates in = rates_at(3.0, p.spec, p.pop, {}, s);
  const double secs = seconds_since(t0);
  r.note("dose covariate at 20 ug/kg: %.6f", dose_covariate(20.0));
  check_near(r, "pi inside the window", in.pi, 0.135, 0.002);
  check_near(r, "mu_Q under effect", in.mu_q, 0.072, 0.002);
  check_runtime(r, secs, 1.0);
}

void cycle_multiplier(Report& r) {
  const auto t0 = Clock::now();
  const Preset p = load_preset("table3-cycle");
  const InjectionSchedule s({{0.0, 3}, {300.0, 3}}, 20.0);
  const double first = rates_at(1.0, p.spec, p.pop, {}, s).pi;
  const double repeated = rates_at(301.0, p.spec, p.pop, {}, s).pi;
  const double secs = seconds_since(t0);
  r.note("pi first cycle %.5f, repeated cycle %.5f", first, repeated);
  check_near(r, "repeated / first", repeated / first, 0.85, 0.01);
  check_runtime(r, secs, 1.0);
}

struct ProtocolTargets {
  int injections, cycles;
  double days_below, median;
};

void protocol_rows(Report& r, const std::vector<ComparisonRow>& rows) {
  for (const auto& row : rows) {
    if (row.report) {
      r.note("%s: injections %d, cycles %d, days below 500 %.0f, median CD4 %.1f", row.protocol.c_str(),
             row.report->n_injections, row.report->n_cycles, row.report->days_below, row.report->median_cd4);
    } else {
      r.note("%s: error %s", row.protocol.c_str(), row.error.c_str());
    }
  }
}

std::vector<ComparisonRow> run_all(const Preset& p, const RandomEffects& u) {
  std::vector<ProtocolSpec> protos;
  for (const char* n : {"A", "B", "C", "D"}) protos.push_back(ProtocolSpec::preset(n));
  return compare_protocols(protos, p.spec, p.pop, u);
}

void table4(Report& r) {
  const auto t0 = Clock::now();
  const Preset p = load_preset("table3-cycle");
  const auto rows = run_all(p, {});
  const double secs = seconds_since(t0);
  protocol_rows(r, rows);
  const ProtocolTargets targets[] = {{21, 7, 60, 678}, {15, 7, 73, 663}, {10, 8, 60, 588}, {14, 7, 87, 654}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string n = rows[i].protocol;
    if (!r.check(rows[i].report.has_value(), (n + " ran").c_str())) continue;
    const ProtocolReport& rep = *rows[i].report;
    check_near(r, (n + " injections").c_str(), rep.n_injections, targets[i].injections, 3);
    check_near(r, (n + " cycles").c_str(), rep.n_cycles, targets[i].cycles, 1);
    check_near(r, (n + " days below 500").c_str(), rep.days_below, targets[i].days_below, 30);
    check_near(r, (n + " median CD4").c_str(), rep.median_cd4, targets[i].median, 30);
  }
  check_runtime(r, secs, 30.0);
}

void tables5_6(Report& r) {
  const auto t0 = Clock::now();
  const Preset p = load_preset("table3-cycle");
  const auto good = run_all(p, effects_for_rates(p.pop, 6.586, 4.797));
  const auto poor = run_all(p, effects_for_rates(p.pop, 3.284, 1.956));
  const double secs = seconds_since(t0);
  r.note("lambda 6.586, rho 4.797:");
  protocol_rows(r, good);
  const ProtocolTargets targets[] = {{9, 3, 0, 721}, {7, 3, 0, 709}, {5, 3, 0, 669}, {6, 3, 0, 703}};
  for (std::size_t i = 0; i < good.size(); ++i) {
    const std::string n = good[i].protocol;
    if (!r.check(good[i].report.has_value(), (n + " ran").c_str())) continue;
    const ProtocolReport& rep = *good[i].report;
    check_near(r, (n + " injections").c_str(), rep.n_injections, targets[i].injections, 2);
    check_near(r, (n + " cycles").c_str(), rep.n_cycles, targets[i].cycles, 1);
    check_near(r, (n + " median CD4").c_str(), rep.median_cd4, targets[i].median, 30);
  }
  r.note("lambda 3.284, rho 1.956:");
  protocol_rows(r, poor);
  if (r.check(poor[1].report && poor[2].report, "B and C ran")) {
    check_near(r, "C median CD4", poor[2].report->median_cd4, 470, 30);
    r.check(poor[2].report->days_below > poor[1].report->days_below, "C days below 500 > B days below 500");
  }
  check_runtime(r, secs, 60.0);
}

void recovery(Report& r) {
  const Preset p = load_preset("table3-cycle");
  const std::size_t n = 100;
  const std::uint64_t seed = 20240;
  const SyntheticCohort c = synth_cohort(p.spec, p.pop, n, ObservationDesign{}, seed);
  std::size_t obs = 0;
  for (const auto& pt : c.patients) obs += pt.observations.size();
  r.note("cohort: %zu patients, %zu observations, seed %llu, workers %zu", n, obs,
         static_cast<unsigned long long>(seed), worker_count());
  const PriorSpec prior = intercept_prior(p.spec.variant);
  const auto t0 = Clock::now();
  const CohortFit f = fit_cohort(c.patients, p.spec, prior, default_init(p.spec.variant, prior));
  const double secs = seconds_since(t0);
  r.note("iterations %d, penalized log-likelihood %.4f, warning '%s'", f.result.iterations,
         f.result.penalized_loglik, f.result.warning.c_str());
  const auto layout = parameter_layout(p.spec.variant);
  const auto truth = to_theta(p.pop, p.spec.variant);
  const auto sd = f.result.sd();
  bool all_within = true;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double z = (f.result.theta[i] - truth[i]) / sd[i];
    const bool fixed = layout[i].name.rfind("sigma", 0) != 0;
    r.note("%-12s estimate %8.4f  truth %8.4f  sd %.4f  z %+.2f%s", layout[i].name.c_str(), f.result.theta[i],
           truth[i], sd[i], z, fixed ? "" : "  (variance parameter)");
    if (fixed && !(std::abs(z) <= 3.0)) all_within = false;
  }
  r.check(all_within, "every fixed effect within 3 posterior SDs of truth");
  r.check(f.result.final_rdm < 0.1, strf("final RDM %.4g < 0.1", f.result.final_rdm).c_str());
  check_runtime(r, secs, 1800.0);
}

void quadrature(Report& r) {
  const Preset p = load_preset("table3-cycle");
  const SyntheticCohort c = synth_cohort(p.spec, p.pop, 10, ObservationDesign{}, 777);
  const std::size_t draws = 100000;
  LikelihoodOptions nine, five;
  five.nodes = 5;
  int within_se = 0;
  double worst_nodes = 0.0;
  for (std::size_t i = 0; i < c.patients.size(); ++i) {
    const auto& pt = c.patients[i];
    const double l9 = marginal_loglik(pt, p.spec, p.pop, nine).loglik;
    const double l5 = marginal_loglik(pt, p.spec, p.pop, five).loglik;
    const auto mc = oracle::monte_carlo_marginal(pt, p.spec, p.pop, draws, 1000 + i);
    const double z = (l9 - mc.loglik) / mc.std_error;
    within_se += std::abs(z) <= 3.0;
    worst_nodes = std::max(worst_nodes, std::abs(l5 - l9));
    r.note("%s: 9 nodes %.5f  MC %.5f (se %.5f, z %+.2f)  |5 - 9| %.2e", pt.id.c_str(), l9, mc.loglik,
           mc.std_error, z, std::abs(l5 - l9));
  }
  r.check(within_se == 10, strf("%d of 10 patients within 3 MC standard errors (%zu draws)", within_se, draws).c_str());
  r.check(worst_nodes <= 1e-3, strf("max |5-node - 9-node| %.3g <= 1e-3", worst_nodes).c_str());
}

void lcva_sanity(Report& r) {
  {
    const Preset p = load_preset("table1-basic");
    ObservationDesign d;
    d.repeat_cycles = false;
    d.duration = 90.0;
    const SyntheticCohort c = synth_cohort(p.spec, p.pop, 20, d, 31);
    const std::size_t dim = parameter_layout(p.spec.variant).size();
    const PriorSpec flat = PriorSpec::flat(dim);
    LikelihoodOptions opts;
    opts.nodes = 5;
    const CohortFit f = fit_cohort(c.patients, p.spec, flat, p.pop, {}, opts);
    const double n = static_cast<double>(c.patients.size());
    const double expected = -(f.result.loglik - static_cast<double>(dim)) / n;
    r.note("flat-prior fit: %zu patients, p %zu, L %.6f, LCVa %.9f, -(L - p)/n %.9f", c.patients.size(), dim,
           f.result.loglik, f.result.lcva, expected);
    r.check(std::abs(f.result.lcva - expected) <= 1e-6, "flat-prior LCVa equals -(L - p)/n to 1e-6");
  }
  const Preset truth = load_preset("table2-3beta");
  const Preset basic = load_preset("table1-basic");
  ObservationDesign d;
  d.repeat_cycles = false;
  d.duration = 90.0;
  LikelihoodOptions opts;
  opts.nodes = 5;
  const std::size_t reps = 20, n = 20;
  r.note("selection study: %zu replications of %zu patients from the three-beta preset, first cycle only, "
         "%.0f days, %d nodes",
         reps, n, d.duration, opts.nodes);
  int prefer = 0;
  for (std::size_t k = 0; k < reps; ++k) {
    const SyntheticCohort c = synth_cohort(truth.spec, truth.pop, n, d, 5000 + k);
    double l3 = NAN, l1 = NAN;
    try {
      l3 = fit_cohort(c.patients, truth.spec, intercept_prior(truth.spec.variant), truth.pop, {}, opts).result.lcva;
      l1 = fit_cohort(c.patients, basic.spec, intercept_prior(basic.spec.variant), basic.pop, {}, opts).result.lcva;
    } catch (const Error& e) {
      r.note("replication %zu: %s", k, e.what());
      continue;
    }
    prefer += l3 < l1;
    r.note("replication %2zu: LCVa three-beta %.4f, basic %.4f", k, l3, l1);
  }
  r.check(prefer >= 18, strf("three-beta preferred in %d of %zu replications (need >= 90%%)", prefer, reps).c_str());
}

bool same_bits(const Trajectory& a, const Trajectory& b) {
  if (a.states.size() != b.states.size()) return false;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    if (std::memcmp(&a.states[i].q, &b.states[i].q, sizeof(double)) != 0) return false;
    if (std::memcmp(&a.states[i].p, &b.states[i].p, sizeof(double)) != 0) return false;
  }
  return true;
}

void feedback(Report& r) {
  {
    const Preset p = load_preset("table3-cycle");
    ModelSpec zero = p.spec;
    zero.feedback = FeedbackSpec::with_exponent(0.0);
    const InjectionSchedule s({{0.0, 3}, {200.0, 3}, {500.0, 2}}, 20.0);
    std::vector<double> grid(901);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i);
    bool same = true;
    for (const RandomEffects u : {RandomEffects{}, RandomEffects{0.4, -0.3}}) {
      same = same && same_bits(simulate_patient(s, p.spec, p.pop, u, grid), simulate_patient(s, zero, p.pop, u, grid));
    }
    const SyntheticCohort c = synth_cohort(p.spec, p.pop, 3, ObservationDesign{}, 9);
    for (const auto& pt : c.patients) {
      const double a = marginal_loglik(pt, p.spec, p.pop).loglik;
      const double b = marginal_loglik(pt, zero, p.pop).loglik;
      same = same && std::memcmp(&a, &b, sizeof a) == 0;
    }
    r.check(same, "nu = 0 feedback system bit-identical to the base system (trajectories and likelihoods)");
  }
  const Preset p = load_preset("table8-feedback");
  const std::vector<double> grid{0.05, 0.1, 0.15};
  const std::size_t reps = 20, n = 20;
  LikelihoodOptions opts;
  opts.nodes = 5;
  OptimizerConfig cfg;
  cfg.compute_covariance = false;
  ObservationDesign design;
  design.repeat_cycles = false;
  design.duration = 360.0;
  r.note("profile study: %zu replications of %zu patients from the nu = %.2f preset, first cycle over %.0f days, %d nodes",
         reps, n, p.spec.feedback.nu, design.duration, opts.nodes);
  int picked = 0;
  for (std::size_t k = 0; k < reps; ++k) {
    const SyntheticCohort c = synth_cohort(p.spec, p.pop, n, design, 7000 + k);
    try {
      const ProfileResult pr = profile_nu(c.patients, p.spec, intercept_prior(p.spec.variant), p.pop, grid, cfg, opts);
      picked += pr.best_nu == 0.1;
      std::string row;
      for (const auto& pt : pr.table) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  nu %.2f: %s", pt.nu,
                      pt.ok ? std::to_string(pt.penalized_loglik).c_str() : pt.error.c_str());
        row += buf;
      }
      r.note("replication %2zu: best %.2f%s", k, pr.best_nu, row.c_str());
    } catch (const Error& e) {
      r.note("replication %2zu: %s", k, e.what());
    }
  }
  r.check(2 * picked > static_cast<int>(reps),
          strf("nu = 0.1 selected in %d of %zu replications (need a majority)", picked, reps).c_str());
}

MatrixXd haar_orthogonal(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> N;
  MatrixXd M(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) M(i, j) = N(rng);
  Eigen::HouseholderQR<MatrixXd> qr(M);
  MatrixXd Q = qr.householderQ();
  const VectorXd d = qr.matrixQR().diagonal();
  for (int j = 0; j < p; ++j)
    if (d(j) < 0) Q.col(j) *= -1.0;
  return Q;
}

void rdm_invariance(Report& r) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> logs(std::log(0.1), std::log(10.0));
  const int trials = 200;
  double worst = 0.0, worst_cond = 0.0;
  for (int k = 0; k < trials; ++k) {
    const int p = 2 + k % 13;
    VectorXd s(p);
    for (int i = 0; i < p; ++i) s(i) = std::exp(logs(rng));
    const MatrixXd A = haar_orthogonal(p, rng) * s.asDiagonal() * haar_orthogonal(p, rng);
    MatrixXd B(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) B(i, j) = N(rng);
    const MatrixXd G = B * B.transpose() + MatrixXd::Identity(p, p);
    VectorXd U(p);
    for (int i = 0; i < p; ++i) U(i) = N(rng);
    const double base = rdm(U, G, static_cast<std::size_t>(p));
    const double moved = rdm(A.transpose() * U, A.transpose() * G * A, static_cast<std::size_t>(p));
    const double rel = std::abs(moved - base) / std::max(1.0, std::abs(base));
    if (rel > worst) {
      worst = rel;
      worst_cond = s.maxCoeff() / s.minCoeff();
    }
  }
  r.note("%d random reparameterizations, dimensions 2-14, singular values log-uniform in [0.1, 10]", trials);
  r.note("worst case: condition number of A %.1f", worst_cond);
  r.check(worst <= 1e-10, strf("max relative change %.3g <= 1e-10", worst).c_str());
}

struct Criterion {
  const char* name;
  std::function<void(Report&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"equilibrium", equilibrium_values}, {"covariates", covariate_scale}, {"cycle-multiplier", cycle_multiplier},
      {"table4", table4},                  {"tables5-6", tables5_6},        {"recovery", recovery},
      {"quadrature", quadrature},          {"lcva", lcva_sanity},           {"feedback", feedback},
      {"rdm-invariance", rdm_invariance},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return w == c.name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", w.c_str());
      return 2;
    }
  }
  std::printf("kernels: %s\n", std::string(simd::isa_name(simd::active_kernels().isa)).c_str());
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    Report rep(c.name);
    const auto t0 = Clock::now();
    try {
      c.run(rep);
    } catch (const std::exception& e) {
      rep.check(false, (std::string("exception: ") + e.what()).c_str());
    }
    std::printf("%s %s (%.1f s)\n", rep.pass() ? "PASS" : "FAIL", rep.name().c_str(), seconds_since(t0));
    for (const auto& l : rep.lines()) std::printf("    %s\n", l.c_str());
    std::fflush(stdout);
    failed += !rep.pass();
  }
  return failed ? 1 : 0;
}
