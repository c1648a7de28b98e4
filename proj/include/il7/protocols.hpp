#pragma once

// Injection strategies: an initial cycle at day 0, then a new cycle whenever
// the CD4 count at a periodic assessment falls below a threshold.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "il7/covariates.hpp"
#include "il7/dynamics.hpp"
#include "il7/likelihood.hpp"

namespace il7 {

struct ProtocolSpec {
  std::string name = "custom";
  int initial_cycle_injections = 3;
  int repeated_cycle_injections = 3;
  double trigger_threshold = 550.0;  ///< cells / uL
  double assessment_interval = 90.0; ///< days
  double horizon = 1440.0;           ///< days
  double dose = 20.0;                ///< ug / kg
  double min_cycle_gap = 0.0;        ///< days between cycle starts; 0 disables the cap
  double report_threshold = 500.0;   ///< cells / uL, for days below

  void validate() const;
  /// Presets A (3/3), B (3/2), C (3/1) and D (2/2).
  static ProtocolSpec preset(const std::string& name);
};

struct ProtocolReport {
  std::string protocol;
  int n_injections = 0;
  int n_cycles = 0;
  double days_below = 0.0;  ///< daily samples in [0, horizon) below report_threshold
  double median_cd4 = 0.0;  ///< median of the same samples
  InjectionSchedule schedule;
  Trajectory trajectory;    ///< daily, 0..horizon
};

/// Random effects that turn the population lambda and rho into the given
/// natural-scale individual values.
RandomEffects effects_for_rates(const PopulationParams& pop, double lambda, double rho);

ProtocolReport run_protocol(const ProtocolSpec& proto, const ModelSpec& spec, const PopulationParams& pop,
                            const RandomEffects& u, const SolverOptions& solver = {});

struct ComparisonRow {
  std::string protocol;
  std::optional<ProtocolReport> report;
  std::string error;
};

std::vector<ComparisonRow> compare_protocols(const std::vector<ProtocolSpec>& protos, const ModelSpec& spec,
                                             const PopulationParams& pop, const RandomEffects& u,
                                             const SolverOptions& solver = {});

/// Visit plan of a synthetic study modelled on the trial design: dense visits
/// in the first cycle, fewer in repeated cycles, quarterly assessments that
/// start a new cycle below a CD4 threshold.
struct ObservationDesign {
  std::vector<double> first_cycle_visits{0, 7, 14, 21, 28, 35, 56, 77};
  std::vector<double> repeated_cycle_visits{0, 7, 14, 28, 77};
  std::vector<double> ki67_visits{0, 7, 14, 28, 77};  ///< first cycle only
  double ki67_fraction = 0.5;   ///< share of patients with Ki67 data
  double duration = 720.0;      ///< days of follow-up
  double assessment_interval = 90.0;
  double trigger_threshold = 550.0;
  int initial_cycle_injections = 3;
  int repeated_cycle_injections = 3;
  bool repeat_cycles = true;    ///< false: first cycle only
  double dose = 20.0;
  bool noise = true;

  void validate() const;
};

struct SyntheticCohort {
  std::vector<PatientRecord> patients;
  std::vector<RandomEffects> effects;  ///< generating random effects, same order
};

SyntheticCohort synth_cohort(const ModelSpec& spec, const PopulationParams& pop, std::size_t n,
                             const ObservationDesign& design, std::uint64_t seed,
                             const SolverOptions& solver = {});

}  // namespace il7
