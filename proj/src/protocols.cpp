#include "il7/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "il7/error.hpp"
#include "il7/parallel.hpp"

namespace il7 {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> daily_grid(double end) {
  std::vector<double> g;
  for (double t = 0.0; t <= end; t += 1.0) g.push_back(t);
  if (g.back() < end) g.push_back(end);
  return g;
}

struct AdaptiveRule {
  int initial = 3;
  int repeated = 3;
  double threshold = 550.0;
  double interval = 90.0;
  double horizon = 1440.0;
  double min_gap = 0.0;
  double dose = 20.0;
  bool repeat = true;
  bool daily = true;  ///< evaluate assessments on the daily grid (matches the final trajectory)
};

InjectionSchedule adaptive_schedule(const AdaptiveRule& rule, const ModelSpec& spec, const PopulationParams& pop,
                                    const RandomEffects& u, const SolverOptions& solver) {
  InjectionSchedule schedule({Cycle{0.0, rule.initial}}, rule.dose);
  if (!rule.repeat) return schedule;
  for (int k = 1;; ++k) {
    const double a = k * rule.interval;
    if (!(a < rule.horizon)) break;
    const double last = schedule.injection_times().back();
    if (a - last < spec.effect_window) continue;  // cycle in progress
    if (rule.min_gap > 0.0 && a - schedule.cycle_starts().back() < rule.min_gap) continue;
    const std::vector<double> grid = rule.daily ? daily_grid(a) : std::vector<double>{a};
    const Trajectory tr = simulate_patient(schedule, spec, pop, u, grid, solver);
    if (tr.states.back().total() < rule.threshold) schedule.add_cycle({a, rule.repeated});
  }
  return schedule;
}

}  // namespace

void ProtocolSpec::validate() const {
  auto check_count = [](int n, const char* what) {
    if (n < 1 || n > 3) throw ValidationError(std::string(what) + " must be 1, 2 or 3");
  };
  check_count(initial_cycle_injections, "initial_cycle_injections");
  check_count(repeated_cycle_injections, "repeated_cycle_injections");
  if (!(trigger_threshold > 0.0) || !(report_threshold > 0.0)) throw ValidationError("thresholds must be > 0");
  if (!(assessment_interval > 0.0)) throw ValidationError("assessment_interval must be > 0");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be finite and > 0");
  if (!(dose > 0.0)) throw ValidationError("dose must be > 0");
  if (!(min_cycle_gap >= 0.0)) throw ValidationError("min_cycle_gap must be >= 0");
}

ProtocolSpec ProtocolSpec::preset(const std::string& name) {
  ProtocolSpec p;
  p.name = name;
  if (name == "A") {
    p.repeated_cycle_injections = 3;
  } else if (name == "B") {
    p.repeated_cycle_injections = 2;
  } else if (name == "C") {
    p.repeated_cycle_injections = 1;
  } else if (name == "D") {
    p.initial_cycle_injections = 2;
    p.repeated_cycle_injections = 2;
  } else {
    throw ValidationError("unknown protocol '" + name + "' (expected A, B, C or D)");
  }
  return p;
}

RandomEffects effects_for_rates(const PopulationParams& pop, double lambda, double rho) {
  if (!(lambda > 0.0) || !(rho > 0.0)) throw DomainError("individual rates must be > 0");
  return {std::log(lambda) - pop.phi_lambda, std::log(rho) - pop.phi_rho};
}

ProtocolReport run_protocol(const ProtocolSpec& proto, const ModelSpec& spec, const PopulationParams& pop,
                            const RandomEffects& u, const SolverOptions& solver) {
  proto.validate();
  spec.validate();
  pop.validate(spec.variant);
  AdaptiveRule rule;
  rule.initial = proto.initial_cycle_injections;
  rule.repeated = proto.repeated_cycle_injections;
  rule.threshold = proto.trigger_threshold;
  rule.interval = proto.assessment_interval;
  rule.horizon = proto.horizon;
  rule.min_gap = proto.min_cycle_gap;
  rule.dose = proto.dose;

  ProtocolReport out;
  out.protocol = proto.name;
  out.schedule = adaptive_schedule(rule, spec, pop, u, solver).truncated(proto.horizon);
  out.trajectory = simulate_patient(out.schedule, spec, pop, u, daily_grid(proto.horizon), solver);
  out.n_injections = static_cast<int>(out.schedule.injection_count());
  out.n_cycles = static_cast<int>(out.schedule.cycle_count());

  std::vector<double> samples;
  for (std::size_t i = 0; i < out.trajectory.times.size(); ++i) {
    if (out.trajectory.times[i] < proto.horizon) samples.push_back(out.trajectory.states[i].total());
  }
  if (samples.empty()) samples.push_back(out.trajectory.states.front().total());
  out.days_below = static_cast<double>(
      std::count_if(samples.begin(), samples.end(), [&](double v) { return v < proto.report_threshold; }));
  std::sort(samples.begin(), samples.end());
  const std::size_t m = samples.size();
  out.median_cd4 = m % 2 == 1 ? samples[m / 2] : 0.5 * (samples[m / 2 - 1] + samples[m / 2]);
  return out;
}

std::vector<ComparisonRow> compare_protocols(const std::vector<ProtocolSpec>& protos, const ModelSpec& spec,
                                             const PopulationParams& pop, const RandomEffects& u,
                                             const SolverOptions& solver) {
  std::vector<ComparisonRow> rows(protos.size());
  parallel_for(protos.size(), [&](std::size_t i) {
    rows[i].protocol = protos[i].name;
    try {
      rows[i].report = run_protocol(protos[i], spec, pop, u, solver);
    } catch (const Error& e) {
      rows[i].error = e.what();
    }
  });
  return rows;
}

void ObservationDesign::validate() const {
  if (!(duration > 0.0)) throw ValidationError("design duration must be > 0");
  if (!(assessment_interval > 0.0)) throw ValidationError("assessment_interval must be > 0");
  if (!(ki67_fraction >= 0.0 && ki67_fraction <= 1.0)) throw ValidationError("ki67_fraction must be in [0, 1]");
  if (initial_cycle_injections < 1 || initial_cycle_injections > 3 || repeated_cycle_injections < 1 ||
      repeated_cycle_injections > 3)
    throw ValidationError("cycles have 1 to 3 injections");
  if (!(dose > 0.0)) throw ValidationError("dose must be > 0");
  for (const auto* v : {&first_cycle_visits, &repeated_cycle_visits, &ki67_visits}) {
    for (double t : *v) {
      if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError("visit offsets must be finite and >= 0");
    }
  }
}

SyntheticCohort synth_cohort(const ModelSpec& spec, const PopulationParams& pop, std::size_t n,
                             const ObservationDesign& design, std::uint64_t seed, const SolverOptions& solver) {
  if (n == 0) throw ValidationError("cohort size must be >= 1");
  design.validate();
  spec.validate();
  pop.validate(spec.variant);

  SyntheticCohort out;
  out.patients.resize(n);
  out.effects.resize(n);
  parallel_for(n, [&](std::size_t i) {
    std::mt19937_64 rng(splitmix64(splitmix64(seed) + i));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const RandomEffects u{pop.sigma_lambda * normal(rng), pop.sigma_rho * normal(rng)};
    const bool has_ki67 = unif(rng) < design.ki67_fraction;

    AdaptiveRule rule;
    rule.initial = design.initial_cycle_injections;
    rule.repeated = design.repeated_cycle_injections;
    rule.threshold = design.trigger_threshold;
    rule.interval = design.assessment_interval;
    rule.horizon = design.duration;
    rule.dose = design.dose;
    rule.repeat = design.repeat_cycles;
    rule.daily = false;
    const InjectionSchedule schedule = adaptive_schedule(rule, spec, pop, u, solver).truncated(design.duration);

    std::set<double> cd4_times;
    const auto starts = schedule.cycle_starts();
    for (std::size_t c = 0; c < starts.size(); ++c) {
      for (double off : c == 0 ? design.first_cycle_visits : design.repeated_cycle_visits) {
        if (starts[c] + off <= design.duration) cd4_times.insert(starts[c] + off);
      }
    }
    if (design.repeat_cycles) {
      for (double a = design.assessment_interval; a <= design.duration; a += design.assessment_interval)
        cd4_times.insert(a);
    }
    std::set<double> ki_times;
    if (has_ki67) {
      for (double off : design.ki67_visits) {
        if (off <= design.duration) ki_times.insert(off);
      }
    }
    std::set<double> all = cd4_times;
    all.insert(ki_times.begin(), ki_times.end());
    const std::vector<double> grid(all.begin(), all.end());
    const Trajectory tr = simulate_patient(schedule, spec, pop, u, grid, solver);

    PatientRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "S%04zu", i + 1);
    rec.id = id;
    rec.schedule = schedule;
    auto noisy = [&](double signal, double sigma) {
      const double root = std::pow(std::max(signal, 0.0), 0.25) + (design.noise ? sigma * normal(rng) : 0.0);
      return design.noise ? std::pow(root, 4) : signal;
    };
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double t = grid[k];
      if (cd4_times.count(t)) rec.observations.push_back({t, ObsKind::Cd4, noisy(tr.states[k].total(), pop.sigma_cd4)});
      if (ki_times.count(t)) rec.observations.push_back({t, ObsKind::Ki67, noisy(tr.states[k].p, pop.sigma_p)});
    }
    out.patients[i] = std::move(rec);
    out.effects[i] = u;
  });
  return out;
}

}  // namespace il7
