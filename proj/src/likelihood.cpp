#include "il7/likelihood.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "il7/ensemble.hpp"
#include "il7/error.hpp"
#include "il7/parallel.hpp"
#include "il7/quadrature.hpp"

namespace il7 {
namespace {

const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

struct StopObs {
  ObsKind kind;
  double root;
};

/// Observations grouped by unique time.
struct Prepared {
  std::vector<double> stops;
  std::vector<std::vector<StopObs>> obs;
  std::size_t n_cd4 = 0;
  std::size_t n_ki67 = 0;
};

Prepared prepare(const PatientRecord& patient) {
  std::vector<Observation> sorted = patient.observations;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Observation& a, const Observation& b) {
    if (a.time != b.time) return a.time < b.time;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.value < b.value;
  });
  Prepared out;
  for (const auto& o : sorted) {
    if (out.stops.empty() || out.stops.back() != o.time) {
      out.stops.push_back(o.time);
      out.obs.emplace_back();
    }
    out.obs.back().push_back({o.kind, transform(o.value)});
    (o.kind == ObsKind::Cd4 ? out.n_cd4 : out.n_ki67)++;
  }
  return out;
}

const simd::KernelTable& kernels_of(const LikelihoodOptions& o) {
  return o.kernels ? *o.kernels : simd::active_kernels();
}

/// Integrate lanes with random effects `us` from the baseline equilibrium at
/// t0 and hand each stop's states to `visit`.
void run_lanes(const InjectionSchedule& schedule, const ModelSpec& spec, const PopulationParams& pop,
               const std::vector<RandomEffects>& us, double t0, const std::vector<double>& stops,
               const SolverOptions& solver, const simd::KernelTable& kernels,
               const EnsembleSolver::StopCallback& visit) {
  const std::size_t n = us.size();
  std::vector<double> ls(n), rs(n), q(n), p(n);
  for (std::size_t l = 0; l < n; ++l) {
    ls[l] = std::exp(us[l].u_lambda);
    rs[l] = std::exp(us[l].u_rho);
    const CompartmentState eq = equilibrium(pop.baseline_rates(us[l]), spec.feedback);
    q[l] = eq.q;
    p[l] = eq.p;
  }
  const double horizon = std::max(stops.back(), t0);
  const PiecewiseRates path = build_rate_path(spec, pop, {}, schedule, t0, horizon);
  std::vector<double> bps;
  for (std::size_t i = 1; i < path.segments().size(); ++i) bps.push_back(path.segments()[i].start);
  EnsembleSolver(solver, &kernels).run(path, ls, rs, spec.feedback, t0, q, p, stops, bps, visit);
}

struct Stencil {
  double f0;
  Eigen::Vector2d grad;
  Eigen::Matrix2d hess;
};

class ModeSearch {
 public:
  ModeSearch(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
             const LikelihoodOptions& options)
      : patient_(patient), spec_(spec), pop_(pop), options_(options) {}

  std::vector<double> log_integrand(const std::vector<Eigen::Vector2d>& zs) const {
    std::vector<RandomEffects> us(zs.size());
    for (std::size_t k = 0; k < zs.size(); ++k) us[k] = {pop_.sigma_lambda * zs[k](0), pop_.sigma_rho * zs[k](1)};
    std::vector<double> f = conditional_loglik_batch(patient_, spec_, pop_, us, options_);
    for (std::size_t k = 0; k < zs.size(); ++k) f[k] -= 0.5 * zs[k].squaredNorm();
    return f;
  }

  Stencil stencil(const Eigen::Vector2d& z) const {
    const double h = options_.stencil_step;
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(9);
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) pts.push_back(z + Eigen::Vector2d(i * h, j * h));
    }
    const auto f = log_integrand(pts);
    auto at = [&](int i, int j) { return f[static_cast<std::size_t>((i + 1) * 3 + (j + 1))]; };
    Stencil s;
    s.f0 = at(0, 0);
    s.grad << (at(1, 0) - at(-1, 0)) / (2 * h), (at(0, 1) - at(0, -1)) / (2 * h);
    s.hess(0, 0) = (at(1, 0) - 2 * s.f0 + at(-1, 0)) / (h * h);
    s.hess(1, 1) = (at(0, 1) - 2 * s.f0 + at(0, -1)) / (h * h);
    s.hess(0, 1) = s.hess(1, 0) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
    if (!std::isfinite(s.f0) || !s.grad.allFinite() || !s.hess.allFinite())
      throw NumericalError("non-finite log integrand near the random-effect mode");
    return s;
  }

 private:
  const PatientRecord& patient_;
  const ModelSpec& spec_;
  const PopulationParams& pop_;
  const LikelihoodOptions& options_;
};

/// Ascent direction: Newton where -H is positive definite, otherwise a
/// modified Newton step on |eigenvalues| bounded away from zero.
Eigen::Vector2d ascent_direction(const Stencil& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(-s.hess);
  Eigen::Vector2d ev = es.eigenvalues().cwiseAbs().cwiseMax(1e-3);
  const Eigen::Matrix2d V = es.eigenvectors();
  Eigen::Vector2d d = V * (V.transpose() * s.grad).cwiseQuotient(ev);
  const double len = d.norm();
  if (len > 2.0) d *= 2.0 / len;
  return d;
}

}  // namespace

double transform(double value) {
  if (!(value >= 0.0)) throw DomainError("counts must be non-negative");
  return std::pow(value, 0.25);
}

void validate_patient(const PatientRecord& patient) {
  for (const auto& o : patient.observations) {
    if (!std::isfinite(o.time)) throw ValidationError("patient " + patient.id + ": observation time must be finite");
    if (!(o.value >= 0.0) || !std::isfinite(o.value))
      throw ValidationError("patient " + patient.id + ": observation values must be finite and >= 0");
  }
}

std::vector<double> conditional_loglik_batch(const PatientRecord& patient, const ModelSpec& spec,
                                             const PopulationParams& pop, const std::vector<RandomEffects>& us,
                                             const LikelihoodOptions& options) {
  validate_patient(patient);
  const Prepared prep = prepare(patient);
  const std::size_t n = us.size();
  std::vector<double> acc(n, 0.0);
  if (prep.stops.empty() || n == 0) return acc;

  const auto& K = kernels_of(options);
  const double inv_cd4 = 1.0 / pop.sigma_cd4;
  const double inv_p = 1.0 / pop.sigma_p;
  std::vector<double> total(n);
  const double t0 = std::min(0.0, prep.stops.front());
  run_lanes(patient.schedule, spec, pop, us, t0, prep.stops, options.solver, K,
            [&](std::size_t idx, std::span<const double> q, std::span<const double> p) {
              bool have_total = false;
              for (const auto& o : prep.obs[idx]) {
                if (o.kind == ObsKind::Cd4) {
                  if (!have_total) {
                    K.sum(n, q.data(), p.data(), total.data());
                    have_total = true;
                  }
                  K.residual(n, total.data(), o.root, inv_cd4, acc.data());
                } else {
                  K.residual(n, p.data(), o.root, inv_p, acc.data());
                }
              }
            });
  const double norm = -static_cast<double>(prep.n_cd4) * (std::log(pop.sigma_cd4) + kLogSqrt2Pi) -
                      static_cast<double>(prep.n_ki67) * (std::log(pop.sigma_p) + kLogSqrt2Pi);
  for (double& a : acc) {
    a += norm;
    if (!std::isfinite(a)) throw NumericalError("non-finite conditional log-likelihood");
  }
  return acc;
}

double conditional_loglik(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                          const RandomEffects& u, const LikelihoodOptions& options) {
  return conditional_loglik_batch(patient, spec, pop, {u}, options).front();
}

MarginalResult posterior_mode(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                              const LikelihoodOptions& options, const std::optional<std::array<double, 2>>& start) {
  if (!(pop.sigma_lambda >= 0.0) || !(pop.sigma_rho >= 0.0)) throw DomainError("random-effect SDs must be >= 0");
  MarginalResult out;
  if (patient.observations.empty()) {
    out.hessian_z = {-1.0, 0.0, 0.0, -1.0};
    return out;
  }
  const ModeSearch search(patient, spec, pop, options);
  Eigen::Vector2d z = start ? Eigen::Vector2d((*start)[0], (*start)[1]) : Eigen::Vector2d::Zero();
  if (!z.allFinite()) z.setZero();
  Stencil s = search.stencil(z);
  bool converged = false;
  int it = 0;
  for (; it < options.max_newton_iterations; ++it) {
    Eigen::Vector2d d = ascent_direction(s);
    if (d.lpNorm<Eigen::Infinity>() < options.mode_tolerance) {
      converged = true;
      break;
    }
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      Stencil trial = search.stencil(z + d);
      if (trial.f0 >= s.f0 - 1e-12 * std::max(1.0, std::abs(s.f0))) {
        const double gain = trial.f0 - s.f0;
        z += d;
        s = trial;
        accepted = true;
        // Steps at the noise floor of the stencil: the mode is located.
        if (d.lpNorm<Eigen::Infinity>() < 1e-6 && gain < 1e-10) converged = true;
        break;
      }
      d *= 0.5;
      if (d.lpNorm<Eigen::Infinity>() < options.mode_tolerance) break;
    }
    if (!accepted || converged) {
      converged = true;  // no further ascent possible at this resolution
      break;
    }
  }
  if (!converged) throw NonConvergenceError("random-effect mode search did not converge for patient " + patient.id);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(-s.hess);
  if (!(es.eigenvalues().minCoeff() > 0.0))
    throw NumericalError("non-positive-definite curvature at the random-effect mode for patient " + patient.id);
  out.newton_iterations = it;
  out.mode_z = {z(0), z(1)};
  out.mode = {pop.sigma_lambda * z(0), pop.sigma_rho * z(1)};
  out.hessian_z = {s.hess(0, 0), s.hess(0, 1), s.hess(1, 0), s.hess(1, 1)};
  out.loglik = s.f0;
  return out;
}

MarginalResult marginal_loglik(const PatientRecord& patient, const ModelSpec& spec, const PopulationParams& pop,
                               const LikelihoodOptions& options, const std::optional<std::array<double, 2>>& start) {
  if (options.nodes < 1) throw DomainError("quadrature needs at least one node per dimension");
  MarginalResult mode = posterior_mode(patient, spec, pop, options, start);
  if (patient.observations.empty()) {
    mode.loglik = 0.0;
    return mode;
  }
  const Eigen::Matrix2d negH{{-mode.hessian_z[0], -mode.hessian_z[1]}, {-mode.hessian_z[2], -mode.hessian_z[3]}};
  const Eigen::Matrix2d cov = negH.inverse();
  Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("quadrature scale is not positive definite");
  const Eigen::Matrix2d L = llt.matrixL();
  const Eigen::Vector2d zhat(mode.mode_z[0], mode.mode_z[1]);

  const auto& rule = gauss_hermite(options.nodes);
  const std::size_t m = rule.nodes.size();
  std::vector<Eigen::Vector2d> zs;
  std::vector<double> logw;
  zs.reserve(m * m);
  logw.reserve(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Eigen::Vector2d x(rule.nodes[i], rule.nodes[j]);
      zs.push_back(zhat + std::sqrt(2.0) * L * x);
      logw.push_back(std::log(rule.weights[i]) + std::log(rule.weights[j]) + x.squaredNorm());
    }
  }
  const ModeSearch search(patient, spec, pop, options);
  const std::vector<double> g = search.log_integrand(zs);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < zs.size(); ++k) top = std::max(top, logw[k] + g[k]);
  double sum = 0.0;
  for (std::size_t k = 0; k < zs.size(); ++k) sum += std::exp(logw[k] + g[k] - top);
  // The N(0, I) density contributes -log(2 pi); 2^{d/2} |det L| is the change of variables.
  mode.loglik = top + std::log(sum) + std::log(2.0 * std::abs(L.determinant())) - std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(mode.loglik)) throw NumericalError("non-finite marginal log-likelihood for patient " + patient.id);
  return mode;
}

double total_loglik(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PopulationParams& pop,
                    const LikelihoodOptions& options) {
  std::vector<double> values(cohort.size());
  parallel_for(cohort.size(), [&](std::size_t i) {
    try {
      values[i] = marginal_loglik(cohort[i], spec, pop, options).loglik;
    } catch (const PatientError&) {
      throw;
    } catch (const Error& e) {
      throw PatientError(cohort[i].id, e);
    }
  });
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

double penalized_loglik(const std::vector<PatientRecord>& cohort, const ModelSpec& spec, const PopulationParams& pop,
                        const PriorSpec& prior, const LikelihoodOptions& options) {
  return total_loglik(cohort, spec, pop, options) + prior.log_density(to_theta(pop, spec.variant));
}

Trajectory simulate_patient(const InjectionSchedule& schedule, const ModelSpec& spec, const PopulationParams& pop,
                            const RandomEffects& u, const std::vector<double>& grid, const SolverOptions& solver) {
  Trajectory out;
  if (grid.empty()) return out;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw DomainError("grid must be strictly increasing");
  }
  out.times = grid;
  out.states.resize(grid.size());
  const double t0 = std::min(0.0, grid.front());
  run_lanes(schedule, spec, pop, {u}, t0, grid, solver, simd::active_kernels(),
            [&](std::size_t idx, std::span<const double> q, std::span<const double> p) {
              out.states[idx] = {q[0], p[0]};
            });
  return out;
}

}  // namespace il7
