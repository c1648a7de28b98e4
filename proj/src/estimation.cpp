#include "il7/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "il7/cohort_objective.hpp"
#include "il7/error.hpp"

namespace il7 {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double step_for(double x, double relative) { return relative * std::max(std::abs(x), 1.0); }

/// Solve G x = b, with the same ridge policy as rdm.
VectorXd ridge_solve(const MatrixXd& G, const VectorXd& b, double* ridge_out) {
  const double scale = std::max(G.diagonal().cwiseAbs().mean(), 1.0);
  double ridge = 0.0;
  for (;;) {
    MatrixXd A = G;
    A.diagonal().array() += ridge * scale;
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      VectorXd x = llt.solve(b);
      if (x.allFinite()) {
        if (ridge_out) *ridge_out = ridge;
        return x;
      }
    }
    ridge = ridge == 0.0 ? 1e-10 : ridge * 10.0;
    if (ridge > 1e-6 * (1 + 1e-9)) throw SingularMatrixError("G is singular (ridge above 1e-6 required)");
  }
}

/// Symmetric inverse; eigenvalues below a floor are lifted and reported.
MatrixXd spd_inverse(const MatrixXd& H, bool* repaired) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (H + H.transpose()));
  VectorXd ev = es.eigenvalues();
  const double floor = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1.0);
  *repaired = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!(ev(i) > floor)) {
      ev(i) = std::max(std::abs(ev(i)), floor);
      *repaired = true;
    }
  }
  const MatrixXd& V = es.eigenvectors();
  MatrixXd inv = V * ev.cwiseInverse().asDiagonal() * V.transpose();
  return 0.5 * (inv + inv.transpose());
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(rdm_threshold > 0.0)) throw ValidationError("rdm_threshold must be > 0");
  if (max_iterations < 0) throw ValidationError("max_iterations must be >= 0");
  if (!(gradient_step > 0.0) || !(hessian_step > 0.0)) throw ValidationError("finite-difference steps must be > 0");
  if (!(contraction > 0.0 && contraction < 1.0)) throw ValidationError("contraction must be in (0, 1)");
  if (max_halvings < 0) throw ValidationError("max_halvings must be >= 0");
  if (max_expansions < 0) throw ValidationError("max_expansions must be >= 0");
}

ScoreResult score_and_G(const Objective& objective, const std::vector<double>& theta, const PriorSpec& prior,
                        double relative_step) {
  const std::size_t p = objective.dimension();
  const std::size_t n = objective.units();
  if (theta.size() != p) throw ValidationError("parameter vector has the wrong length");
  prior.validate(p);

  ScoreResult out;
  const std::vector<double> base = objective.unit_logliks(theta);
  out.loglik = sum(base);
  out.penalized_loglik = out.loglik + prior.log_density(theta);

  MatrixXd S(n, p);
  std::vector<double> probe = theta;
  for (std::size_t j = 0; j < p; ++j) {
    const double h = step_for(theta[j], relative_step);
    probe[j] = theta[j] + h;
    const std::vector<double> up = objective.unit_logliks(probe);
    probe[j] = theta[j] - h;
    const std::vector<double> down = objective.unit_logliks(probe);
    probe[j] = theta[j];
    for (std::size_t i = 0; i < n; ++i) {
      S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (up[i] - down[i]) / (2.0 * h);
    }
    if (!S.col(static_cast<Eigen::Index>(j)).allFinite())
      throw NumericalError("non-finite score for parameter " + std::to_string(j));
  }
  const std::vector<double> pg = prior.gradient(theta);
  const std::vector<double> prec = prior.precision();
  const VectorXd prior_grad = Eigen::Map<const VectorXd>(pg.data(), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < S.rows(); ++i) S.row(i) += prior_grad.transpose() / static_cast<double>(n);

  out.score = S.colwise().sum().transpose();
  if (n == 0) out.score = prior_grad;
  out.G = S.transpose() * S;
  for (std::size_t j = 0; j < p; ++j) out.G(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += prec[j];
  out.unit_scores = std::move(S);
  return out;
}

RdmResult rdm_detail(const VectorXd& U, const MatrixXd& G, std::size_t p) {
  if (p == 0) throw DomainError("rdm needs p >= 1");
  if (U.size() != G.rows() || G.rows() != G.cols()) throw DomainError("rdm: dimension mismatch");
  RdmResult out;
  if (U.isZero(0.0)) return out;
  const VectorXd x = ridge_solve(G, U, &out.ridge);
  out.value = U.dot(x) / static_cast<double>(p);
  return out;
}

double rdm(const VectorXd& U, const MatrixXd& G, std::size_t p) { return rdm_detail(U, G, p).value; }

std::vector<double> FitResult::sd() const {
  std::vector<double> out(theta.size(), std::numeric_limits<double>::quiet_NaN());
  if (covariance.rows() == static_cast<Eigen::Index>(theta.size())) {
    for (std::size_t i = 0; i < theta.size(); ++i)
      out[i] = std::sqrt(std::max(covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)), 0.0));
  }
  return out;
}

MatrixXd neg_loglik_hessian(const Objective& objective, const std::vector<double>& theta, double relative_step) {
  const std::size_t p = theta.size();
  std::vector<double> h(p);
  for (std::size_t j = 0; j < p; ++j) h[j] = step_for(theta[j], relative_step);
  auto f = [&](const std::vector<double>& x) { return -sum(objective.unit_logliks(x)); };
  const double f0 = f(theta);
  MatrixXd H(p, p);
  std::vector<double> x = theta;
  for (std::size_t i = 0; i < p; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    x[i] = theta[i] + h[i];
    const double fp = f(x);
    x[i] = theta[i] - h[i];
    const double fm = f(x);
    x[i] = theta[i];
    H(ii, ii) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (std::size_t j = 0; j < i; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          x[i] = theta[i] + si * h[i];
          x[j] = theta[j] + sj * h[j];
          acc += si * sj * f(x);
        }
      }
      x[i] = theta[i];
      x[j] = theta[j];
      H(ii, jj) = H(jj, ii) = acc / (4.0 * h[i] * h[j]);
    }
  }
  if (!H.allFinite()) throw NumericalError("non-finite Hessian");
  return H;
}

double lcva(double loglik, const MatrixXd& hessian_l, const MatrixXd& hessian_lp, std::size_t n) {
  if (n == 0) throw DomainError("LCVa needs at least one unit");
  bool repaired = false;
  const MatrixXd inv = spd_inverse(hessian_lp, &repaired);
  const double trace = (inv * hessian_l).trace();
  return -(loglik - trace) / static_cast<double>(n);
}

FitResult fit(Objective& objective, const PriorSpec& prior, const std::vector<double>& init,
              const OptimizerConfig& config) {
  config.validate();
  const std::size_t p = objective.dimension();
  if (init.size() != p) throw ValidationError("initial parameter vector has the wrong length");
  prior.validate(p);

  FitResult out;
  out.units = objective.units();
  std::vector<double> theta = init;
  objective.set_anchor(theta);

  ScoreResult sr = score_and_G(objective, theta, prior, config.gradient_step);
  if (!std::isfinite(sr.penalized_loglik)) throw NumericalError("penalized log-likelihood is not finite at the start");
  out.trace.push_back(sr.penalized_loglik);
  int iter = 0;
  for (;;) {
    out.final_rdm = rdm(sr.score, sr.G, p);
    if (out.final_rdm < config.rdm_threshold) {
      out.converged = true;
      break;
    }
    if (iter >= config.max_iterations) {
      out.warning = "maximum iterations reached (rdm " + std::to_string(out.final_rdm) + ")";
      break;
    }
    const VectorXd dir = ridge_solve(sr.G, sr.score, nullptr);
    auto evaluate = [&](double t, std::vector<double>& x) {
      for (std::size_t j = 0; j < p; ++j) x[j] = theta[j] + t * dir(static_cast<Eigen::Index>(j));
      // The start point was evaluated without error, so a failure here means
      // the trial left the region where the model is defined.
      try {
        const double lp = sum(objective.unit_logliks(x)) + prior.log_density(x);
        if (std::isfinite(lp)) return lp;
      } catch (const Error&) {
      }
      return -std::numeric_limits<double>::infinity();
    };
    double step = 1.0;
    double best = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    std::vector<double> trial(p);
    for (int k = 0; k <= config.max_halvings; ++k, step *= config.contraction) {
      best = evaluate(step, trial);
      if (best >= sr.penalized_loglik) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.warning = "line search failed to find an ascent step (rdm " + std::to_string(out.final_rdm) + ")";
      break;
    }
    if (step == 1.0) {
      std::vector<double> longer(p);
      for (int k = 0; k < config.max_expansions; ++k) {
        const double lp = evaluate(2.0 * step, longer);
        if (!(lp > best)) break;
        best = lp;
        step *= 2.0;
        trial.swap(longer);
      }
    }
    theta = trial;
    ++iter;
    objective.set_anchor(theta);
    sr = score_and_G(objective, theta, prior, config.gradient_step);
    out.trace.push_back(sr.penalized_loglik);
    if (config.on_iteration) config.on_iteration(iter, sr.penalized_loglik, rdm(sr.score, sr.G, p), step);
  }
  out.theta = theta;
  out.iterations = iter;
  out.loglik = sr.loglik;
  out.penalized_loglik = sr.penalized_loglik;

  if (out.converged && config.compute_covariance) {
    out.hessian_l = neg_loglik_hessian(objective, theta, config.hessian_step);
    out.hessian_lp = out.hessian_l;
    const std::vector<double> prec = prior.precision();
    for (std::size_t j = 0; j < p; ++j)
      out.hessian_lp(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += prec[j];
    bool repaired = false;
    out.covariance = spd_inverse(out.hessian_lp, &repaired);
    if (repaired) out.warning = "Hessian not positive definite at the optimum; covariance from the repaired Hessian";
    out.lcva = lcva(out.loglik, out.hessian_l, out.hessian_lp, out.units);
  } else {
    out.lcva = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

CohortFit fit_cohort(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PriorSpec& prior,
                     const PopulationParams& init, const OptimizerConfig& config, const LikelihoodOptions& options) {
  CohortObjective objective(cohort, spec, options);
  CohortFit out;
  out.spec = spec;
  out.result = fit(objective, prior, to_theta(init, spec.variant), config);
  out.pop = from_theta(out.result.theta, spec.variant);
  return out;
}

double lcva(const std::vector<PatientRecord>& cohort, const CohortFit& fitted, const PriorSpec& prior,
            const OptimizerConfig& config, const LikelihoodOptions& options) {
  const FitResult& r = fitted.result;
  if (!r.converged) throw ValidationError("LCVa needs a converged fit");
  if (r.hessian_l.size() > 0) return lcva(r.loglik, r.hessian_l, r.hessian_lp, cohort.size());
  CohortObjective objective(cohort, fitted.spec, options);
  objective.set_anchor(r.theta);
  const MatrixXd hl = neg_loglik_hessian(objective, r.theta, config.hessian_step);
  MatrixXd hlp = hl;
  const std::vector<double> prec = prior.precision();
  for (std::size_t j = 0; j < prec.size(); ++j) hlp(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += prec[j];
  return lcva(r.loglik, hl, hlp, cohort.size());
}

ProfileResult profile_nu(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PriorSpec& prior,
                         const PopulationParams& init, const std::vector<double>& nu_grid,
                         const OptimizerConfig& config, const LikelihoodOptions& options) {
  if (nu_grid.empty()) throw ValidationError("nu grid is empty");
  ProfileResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (double nu : nu_grid) {
    ProfilePoint pt;
    pt.nu = nu;
    try {
      ModelSpec s = spec;
      s.feedback = FeedbackSpec::with_exponent(nu);
      s.validate();
      const CohortFit f = fit_cohort(cohort, s, prior, init, config, options);
      pt.penalized_loglik = f.result.penalized_loglik;
      pt.loglik = f.result.loglik;
      pt.ok = f.result.converged;
      if (!pt.ok) pt.error = f.result.warning;
    } catch (const Error& e) {
      pt.error = e.what();
    }
    if (pt.ok && pt.penalized_loglik > best) {
      best = pt.penalized_loglik;
      out.best_nu = nu;
    }
    out.table.push_back(pt);
  }
  if (!std::isfinite(best)) throw NonConvergenceError("every profile-likelihood fit failed");
  return out;
}

RandomEffects peb(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                  const LikelihoodOptions& options) {
  return posterior_mode(patient, spec, pop, options).mode;
}

IndividualPrediction predict_individual(const PatientRecord& patient, const ModelSpec& spec,
                                        const PopulationParams& pop, double horizon,
                                        const LikelihoodOptions& options) {
  IndividualPrediction out;
  out.u = peb(patient, spec, pop, options);
  double start = 0.0;
  for (const auto& o : patient.observations) start = std::min(start, std::floor(o.time));
  if (!(horizon > start)) throw DomainError("prediction horizon must follow the first observation");
  std::vector<double> grid;
  for (double t = start; t <= horizon; t += 1.0) grid.push_back(t);
  out.trajectory = simulate_patient(patient.schedule, spec, pop, out.u, grid, options.solver);
  return out;
}

}  // namespace il7
