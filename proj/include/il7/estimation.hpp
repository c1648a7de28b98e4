#pragma once

// Penalized-likelihood (MAP) estimation by robust-variance scoring.
//
// The optimizer works on any Objective that returns per-unit (per-patient)
// log-likelihoods; derivatives are central finite differences. At the mode the
// posterior is approximated by N(theta_hat, H_LP^-1).

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "il7/covariates.hpp"
#include "il7/likelihood.hpp"
#include "il7/prior.hpp"

namespace il7 {

class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t units() const = 0;
  /// Log-likelihood of each unit at theta (estimation scale).
  virtual std::vector<double> unit_logliks(const std::vector<double>& theta) const = 0;
  /// Called whenever the optimizer accepts a new point; objectives with inner
  /// optimizations re-seed them from here so later evaluations are reproducible.
  virtual void set_anchor(const std::vector<double>& /*theta*/) {}
};

struct OptimizerConfig {
  double rdm_threshold = 0.1;
  int max_iterations = 100;
  double gradient_step = 1e-5;  ///< relative central-difference step of the score
  double hessian_step = 1e-4;   ///< relative step of the final Hessian
  double contraction = 0.5;     ///< line-search step factor
  int max_halvings = 30;
  int max_expansions = 10;      ///< step doublings tried after the full step is accepted
  bool compute_covariance = true;
  /// Called after each accepted step: iteration, penalized log-likelihood, RDM, step length.
  std::function<void(int, double, double, double)> on_iteration;

  void validate() const;
};

struct ScoreResult {
  double loglik = 0.0;
  double penalized_loglik = 0.0;
  Eigen::VectorXd score;       ///< U^P
  Eigen::MatrixXd G;           ///< sum_i s_i s_i^T + prior precision
  Eigen::MatrixXd unit_scores; ///< n x p, penalized shares s_i
};

ScoreResult score_and_G(const Objective& objective, const std::vector<double>& theta, const PriorSpec& prior,
                        double relative_step = 1e-5);

struct RdmResult {
  double value = 0.0;
  double ridge = 0.0;  ///< ridge added to G to make it invertible (0 if none)
};

/// U^T G^-1 U / p. Adds a ridge from 1e-10 upward when G is singular and gives
/// up (SingularMatrixError) beyond 1e-6.
RdmResult rdm_detail(const Eigen::VectorXd& U, const Eigen::MatrixXd& G, std::size_t p);
double rdm(const Eigen::VectorXd& U, const Eigen::MatrixXd& G, std::size_t p);

struct FitResult {
  std::vector<double> theta;
  Eigen::MatrixXd covariance;  ///< H_LP^-1
  Eigen::MatrixXd hessian_l;   ///< Hessian of -L
  Eigen::MatrixXd hessian_lp;  ///< Hessian of -L^P
  double loglik = 0.0;
  double penalized_loglik = 0.0;
  double lcva = 0.0;
  int iterations = 0;
  double final_rdm = 0.0;
  bool converged = false;
  std::string warning;
  std::size_t units = 0;
  std::vector<double> trace;  ///< penalized log-likelihood at the start and after each accepted step

  std::vector<double> sd() const;
};

/// Hessian of -sum(unit_logliks) by central differences; 2 p^2 evaluations.
Eigen::MatrixXd neg_loglik_hessian(const Objective& objective, const std::vector<double>& theta,
                                   double relative_step = 1e-4);

FitResult fit(Objective& objective, const PriorSpec& prior, const std::vector<double>& init,
              const OptimizerConfig& config = {});

/// -n^-1 [L - tr(H_LP^-1 H_L)].
double lcva(double loglik, const Eigen::MatrixXd& hessian_l, const Eigen::MatrixXd& hessian_lp, std::size_t n);

// Cohort-level drivers.

struct CohortFit {
  ModelSpec spec;
  PopulationParams pop;
  FitResult result;
};

CohortFit fit_cohort(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PriorSpec& prior,
                     const PopulationParams& init, const OptimizerConfig& config = {},
                     const LikelihoodOptions& options = {});

/// LCVa of a converged cohort fit, recomputing the Hessian if the fit skipped it.
double lcva(const std::vector<PatientRecord>& cohort, const CohortFit& fit, const PriorSpec& prior,
            const OptimizerConfig& config = {}, const LikelihoodOptions& options = {});

struct ProfilePoint {
  double nu = 0.0;
  bool ok = false;
  double penalized_loglik = 0.0;
  double loglik = 0.0;
  std::string error;
};

struct ProfileResult {
  double best_nu = 0.0;
  std::vector<ProfilePoint> table;
};

/// Fit with the feedback exponent fixed at each grid value; failures are
/// recorded in the table. Throws only when every grid point fails.
ProfileResult profile_nu(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PriorSpec& prior,
                         const PopulationParams& init, const std::vector<double>& nu_grid,
                         const OptimizerConfig& config = {}, const LikelihoodOptions& options = {});

/// Parametric empirical Bayes: the mode of the random effects given the data.
RandomEffects peb(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                  const LikelihoodOptions& options = {});

struct IndividualPrediction {
  RandomEffects u;
  Trajectory trajectory;  ///< daily from min(0, first observation) to horizon
};

IndividualPrediction predict_individual(const PatientRecord& patient, const ModelSpec& spec,
                                        const PopulationParams& pop, double horizon,
                                        const LikelihoodOptions& options = {});

}  // namespace il7
