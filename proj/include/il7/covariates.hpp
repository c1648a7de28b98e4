#pragma once

// Mixed-effects model for the ODE rates. Each rate is log-linear in the
// intercept, the random effect (lambda and rho only) and injection covariates:
//
//   log lambda = phi_lambda + u_lambda
//   log rho    = phi_rho + u_rho
//   log pi     = phi_pi + [beta_C 1{repeated cycle} + beta_pi,k dc] 1{injection k active}
//   log mu_q   = phi_mu_q + beta_mu_q dc f(t - cycle start)
//   log mu_p   = phi_mu_p
//
// with dc = (dose / 10)^0.25 and f the survival ramp.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "il7/dynamics.hpp"

namespace il7 {

enum class ModelVariant { Basic, ThreeBeta, CycleEffect };

std::string_view variant_name(ModelVariant v) noexcept;
ModelVariant parse_variant(std::string_view name);

struct ModelSpec {
  ModelVariant variant = ModelVariant::CycleEffect;
  FeedbackSpec feedback{};
  double effect_window = 7.0;   ///< days the proliferation effect lasts after an injection
  double mu_q_onset = 2.0;      ///< survival effect starts this many days after a cycle start
  double ramp_plateau = 360.0;  ///< full survival effect until this day of the cycle
  double ramp_end = 720.0;      ///< survival effect has decayed linearly to zero by this day
  double dose_reference = 10.0;
  double dose_power = 0.25;

  void validate() const;
};

struct Cycle {
  double start = 0.0;
  int injections = 3;
};

/// Injection history of one patient. Cycles are runs of 1-3 injections about
/// a week apart; every patient has a single dose level.
class InjectionSchedule {
 public:
  static constexpr double kSpacing = 7.0;

  InjectionSchedule() = default;
  /// Cycles of weekly injections.
  InjectionSchedule(const std::vector<Cycle>& cycles, double dose);

  /// Group injection times into cycles: a new cycle starts after a gap longer
  /// than `max_gap` days or once the current cycle already has three injections.
  static InjectionSchedule from_injection_times(std::vector<double> times, double dose, double max_gap = 10.0);

  double dose() const noexcept { return dose_; }
  const std::vector<double>& injection_times() const noexcept { return times_; }
  std::vector<Cycle> cycles() const;
  std::vector<double> cycle_starts() const;
  std::size_t cycle_count() const noexcept { return times_.empty() ? 0 : cycle_index_.back() + 1; }
  bool empty() const noexcept { return times_.empty(); }
  std::size_t injection_count() const noexcept { return times_.size(); }

  /// Cycle index (0-based) and rank within the cycle (1-based) of injection i.
  std::size_t cycle_of(std::size_t i) const { return cycle_index_.at(i); }
  int rank_of(std::size_t i) const { return rank_.at(i); }

  /// Append a cycle of weekly injections starting after every existing injection.
  void add_cycle(const Cycle& c);
  InjectionSchedule shifted(double dt) const;
  /// Drop injections after `horizon`.
  InjectionSchedule truncated(double horizon) const;

 private:
  void push(double t, bool new_cycle);

  double dose_ = 20.0;
  std::vector<double> times_;
  std::vector<std::size_t> cycle_index_;
  std::vector<int> rank_;
};

struct RandomEffects {
  double u_lambda = 0.0;
  double u_rho = 0.0;
};

struct PopulationParams {
  // Log-scale intercepts.
  double phi_lambda = 0.0;
  double phi_rho = 0.0;
  double phi_pi = 0.0;
  double phi_mu_q = 0.0;
  double phi_mu_p = 0.0;
  std::vector<double> beta_pi;  ///< 1 coefficient (Basic) or 3 (per injection rank)
  double beta_mu_q = 0.0;
  double beta_cycle = 0.0;  ///< CycleEffect only
  double sigma_lambda = 0.0;
  double sigma_rho = 0.0;
  double sigma_cd4 = 1.0;
  double sigma_p = 1.0;

  /// Throws ValidationError when the shape does not match `variant`.
  void validate(ModelVariant variant) const;
  BiologicalRates baseline_rates(const RandomEffects& u = {}) const;
};

/// Estimation-scale parameter vector. Intercepts are log rates, betas are
/// unconstrained and every SD is carried as its logarithm.
enum class ParamScale { Log, Linear };

struct ParameterInfo {
  std::string name;
  ParamScale scale;  ///< Log: natural value = exp(theta)
  bool intercept;
};

std::vector<ParameterInfo> parameter_layout(ModelVariant variant);
std::vector<double> to_theta(const PopulationParams& pop, ModelVariant variant);
PopulationParams from_theta(const std::vector<double>& theta, ModelVariant variant);

double dose_covariate(double dose, const ModelSpec& spec = {});

struct InjectionContext {
  int rank = 0;            ///< 1..3
  std::size_t cycle = 0;   ///< 0-based cycle index
};

/// Active injection at time t: exactly one injection in (t - window, t].
std::optional<InjectionContext> active_injection(const InjectionSchedule& schedule, double t, double window);
std::optional<int> injection_rank(const InjectionSchedule& schedule, double t, double window = 7.0);

/// Survival-effect profile, `t` measured from the most recent cycle start.
double survival_ramp(double t_since_cycle_start, const ModelSpec& spec = {});

BiologicalRates log_rates_at(double t, const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                             const InjectionSchedule& schedule);
BiologicalRates rates_at(double t, const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                         const InjectionSchedule& schedule);

/// Every discontinuity (or kink) of rates_at in [0, horizon], sorted and unique.
std::vector<double> breakpoints(const InjectionSchedule& schedule, const ModelSpec& spec, double horizon);

/// Exact piecewise log-affine representation of rates_at on [t0, horizon].
PiecewiseRates build_rate_path(const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                               const InjectionSchedule& schedule, double t0, double horizon);

}  // namespace il7
