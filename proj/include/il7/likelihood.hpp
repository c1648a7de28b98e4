#pragma once

// Observation model, individual likelihoods and the marginal likelihood over
// the random effects. Counts are compared on the fourth-root scale:
//
//   CD4^0.25  = (Q + P)^0.25 + e1,   e1 ~ N(0, sigma_cd4^2)
//   Ki67^0.25 = P^0.25 + e2,         e2 ~ N(0, sigma_p^2)
//
// Random effects are integrated in standardized coordinates z (u = sigma * z)
// by adaptive Gauss-Hermite quadrature around the mode of the integrand.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "il7/covariates.hpp"
#include "il7/dynamics.hpp"
#include "il7/prior.hpp"
#include "il7/simd/kernels.hpp"

namespace il7 {

enum class ObsKind { Cd4, Ki67 };

struct Observation {
  double time = 0.0;  ///< days since the first injection
  ObsKind kind = ObsKind::Cd4;
  double value = 0.0;  ///< cells / uL
};

struct PatientRecord {
  std::string id;
  InjectionSchedule schedule;
  std::vector<Observation> observations;
};

struct LikelihoodOptions {
  int nodes = 9;                 ///< Gauss-Hermite nodes per dimension
  SolverOptions solver{1e-10, 1e-10};
  double stencil_step = 1e-3;    ///< finite-difference step of the inner Hessian (z units)
  double mode_tolerance = 1e-8;  ///< inner Newton stops when the step is below this (z units)
  int max_newton_iterations = 50;
  const simd::KernelTable* kernels = nullptr;  ///< nullptr: runtime selection
};

double transform(double value);

/// log N(obs^0.25 - model^0.25; 0, sigma^2) summed over the patient's
/// observations, with the equilibrium of the baseline rates as initial state.
double conditional_loglik(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                          const RandomEffects& u, const LikelihoodOptions& options = {});

/// Same for many random-effect vectors in one lockstep integration.
std::vector<double> conditional_loglik_batch(const PatientRecord& patient, const ModelSpec& spec,
                                             const PopulationParams& pop, const std::vector<RandomEffects>& us,
                                             const LikelihoodOptions& options = {});

struct MarginalResult {
  double loglik = 0.0;
  std::array<double, 2> mode_z{};      ///< integrand mode, standardized coordinates
  RandomEffects mode{};                ///< the same mode as random effects
  std::array<double, 4> hessian_z{};   ///< row-major Hessian of the log integrand at the mode
  int newton_iterations = 0;
};

/// Mode of the log posterior of the standardized random effects. `start`
/// seeds the Newton iterations (warm start); the origin otherwise.
MarginalResult posterior_mode(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                              const LikelihoodOptions& options = {},
                              const std::optional<std::array<double, 2>>& start = std::nullopt);

/// log of the integral of exp(conditional_loglik) against the random-effect density.
MarginalResult marginal_loglik(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                               const LikelihoodOptions& options = {},
                               const std::optional<std::array<double, 2>>& start = std::nullopt);

/// Sum of marginal log-likelihoods in cohort order. Failures carry the patient id.
double total_loglik(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PopulationParams& pop,
                    const LikelihoodOptions& options = {});

double penalized_loglik(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PopulationParams& pop,
                        const PriorSpec& prior, const LikelihoodOptions& options = {});

/// Model CD4 (q + p) and Ki67 (p) on a grid, for plotting and prediction.
Trajectory simulate_patient(const InjectionSchedule& schedule, const ModelSpec& spec, const PopulationParams& pop,
                            const RandomEffects& u, const std::vector<double>& grid,
                            const SolverOptions& solver = {});

void validate_patient(const PatientRecord& patient);

}  // namespace il7
