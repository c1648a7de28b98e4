#include "il7/cohort_objective.hpp"

#include "il7/error.hpp"
#include "il7/parallel.hpp"

namespace il7 {

CohortObjective::CohortObjective(const std::vector<PatientRecord>& cohort, ModelSpec spec, LikelihoodOptions options)
    : cohort_(cohort), spec_(spec), options_(options), anchors_(cohort.size()) {
  spec_.validate();
  if (cohort_.empty()) throw ValidationError("cohort is empty");
  for (const auto& p : cohort_) validate_patient(p);
}

std::size_t CohortObjective::dimension() const { return parameter_layout(spec_.variant).size(); }

std::vector<double> CohortObjective::unit_logliks(const std::vector<double>& theta) const {
  const PopulationParams pop = from_theta(theta, spec_.variant);
  std::vector<double> out(cohort_.size());
  parallel_for(cohort_.size(), [&](std::size_t i) {
    try {
      out[i] = marginal_loglik(cohort_[i], spec_, pop, options_, anchors_[i]).loglik;
    } catch (const PatientError&) {
      throw;
    } catch (const Error& e) {
      throw PatientError(cohort_[i].id, e);
    }
  });
  return out;
}

void CohortObjective::set_anchor(const std::vector<double>& theta) {
  const PopulationParams pop = from_theta(theta, spec_.variant);
  std::vector<std::optional<std::array<double, 2>>> next(cohort_.size());
  parallel_for(cohort_.size(), [&](std::size_t i) {
    try {
      next[i] = posterior_mode(cohort_[i], spec_, pop, options_, anchors_[i]).mode_z;
    } catch (const Error&) {
      next[i] = std::nullopt;  // fall back to a cold start
    }
  });
  anchors_ = std::move(next);
}

}  // namespace il7
