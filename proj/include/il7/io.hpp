#pragma once

// File formats.
//
//   observations.csv  patient_id,time_days,kind,value      (kind: CD4 | KI67)
//   injections.csv    patient_id,time_days,dose_ug_per_kg
//   comparison.csv    protocol,n_injections,n_cycles,days_below_500,median_cd4
//   trajectory csv    time_days,cd4,ki67,injections_marker
//
// Fit reports and truth files are JSON.

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "il7/estimation.hpp"
#include "il7/likelihood.hpp"
#include "il7/presets.hpp"
#include "il7/protocols.hpp"

namespace il7 {

struct RawInjection {
  std::string patient_id;
  double time = 0.0;
  double dose = 0.0;
};

struct RawObservation {
  std::string patient_id;
  Observation obs;
};

std::vector<RawObservation> read_observations(std::istream& in);
std::vector<RawInjection> read_injections(std::istream& in);

/// Join both tables into patient records ordered by id.
std::vector<PatientRecord> assemble_cohort(const std::vector<RawObservation>& obs,
                                           const std::vector<RawInjection>& inj);
std::vector<PatientRecord> read_cohort(const std::filesystem::path& observations,
                                       const std::filesystem::path& injections);

std::string format_double(double v);
std::string observations_csv(const std::vector<PatientRecord>& cohort);
std::string injections_csv(const std::vector<PatientRecord>& cohort);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string trajectory_csv(const Trajectory& trajectory, const InjectionSchedule& schedule);

std::string fit_report_json(const CohortFit& fit, const PriorSpec& prior);
/// A fit report or preset document as a parameter set.
Preset parse_parameter_document(const std::string& text);

std::string truth_json(const ModelSpec& spec, const PopulationParams& pop, const SyntheticCohort& cohort,
                       std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);
/// Write via a temporary file in the same directory and rename over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace il7
