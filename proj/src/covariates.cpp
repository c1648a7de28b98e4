#include "il7/covariates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "il7/error.hpp"

namespace il7 {
namespace {

double ramp_value(double tau, const ModelSpec& spec, bool right_limit) {
  const bool before_onset = right_limit ? tau < spec.mu_q_onset : tau <= spec.mu_q_onset;
  if (before_onset) return 0.0;
  if (tau <= spec.ramp_plateau) return 1.0;
  if (tau <= spec.ramp_end) return 1.0 - (tau - spec.ramp_plateau) / (spec.ramp_end - spec.ramp_plateau);
  return 0.0;
}

/// Right derivative of the ramp.
double ramp_slope(double tau, const ModelSpec& spec) {
  if (tau >= spec.ramp_plateau && tau < spec.ramp_end) return -1.0 / (spec.ramp_end - spec.ramp_plateau);
  return 0.0;
}

/// Start of the most recent cycle at or before t.
std::optional<double> current_cycle_start(const InjectionSchedule& schedule, double t) {
  const auto& times = schedule.injection_times();
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return std::nullopt;
  std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
  while (i > 0 && schedule.rank_of(i) > 1) --i;
  return times[i];
}

double pi_effect(const std::optional<InjectionContext>& ctx, ModelVariant variant, const PopulationParams& pop,
                 double dc) {
  if (!ctx) return 0.0;
  switch (variant) {
    case ModelVariant::Basic:
      return pop.beta_pi.at(0) * dc;
    case ModelVariant::ThreeBeta:
      return pop.beta_pi.at(static_cast<std::size_t>(ctx->rank - 1)) * dc;
    case ModelVariant::CycleEffect:
      return (ctx->cycle > 0 ? pop.beta_cycle : 0.0) + pop.beta_pi.at(static_cast<std::size_t>(ctx->rank - 1)) * dc;
  }
  return 0.0;
}

struct LogRatesWithSlope {
  BiologicalRates value;
  double mu_q_slope = 0.0;
};

LogRatesWithSlope log_rates_impl(double t, const ModelSpec& spec, const PopulationParams& pop,
                                 const RandomEffects& u, const InjectionSchedule& schedule, bool right_limit) {
  LogRatesWithSlope out;
  out.value.lambda = pop.phi_lambda + u.u_lambda;
  out.value.rho = pop.phi_rho + u.u_rho;
  out.value.pi = pop.phi_pi;
  out.value.mu_q = pop.phi_mu_q;
  out.value.mu_p = pop.phi_mu_p;
  if (schedule.empty()) return out;

  const double dc = dose_covariate(schedule.dose(), spec);
  out.value.pi += pi_effect(active_injection(schedule, t, spec.effect_window), spec.variant, pop, dc);
  if (auto start = current_cycle_start(schedule, t)) {
    const double tau = t - *start;
    out.value.mu_q += pop.beta_mu_q * dc * ramp_value(tau, spec, right_limit);
    out.mu_q_slope = pop.beta_mu_q * dc * ramp_slope(tau, spec);
  }
  return out;
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " must be finite");
  }
}

}  // namespace

std::string_view variant_name(ModelVariant v) noexcept {
  switch (v) {
    case ModelVariant::Basic:
      return "basic";
    case ModelVariant::ThreeBeta:
      return "three-beta";
    case ModelVariant::CycleEffect:
      return "cycle";
  }
  return "?";
}

ModelVariant parse_variant(std::string_view name) {
  if (name == "basic") return ModelVariant::Basic;
  if (name == "three-beta" || name == "3beta") return ModelVariant::ThreeBeta;
  if (name == "cycle" || name == "cycle-effect") return ModelVariant::CycleEffect;
  throw ValidationError("unknown model variant '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (!(effect_window > 0.0)) throw ValidationError("effect_window must be positive");
  if (!(mu_q_onset >= 0.0 && mu_q_onset < ramp_plateau && ramp_plateau < ramp_end))
    throw ValidationError("need 0 <= mu_q_onset < ramp_plateau < ramp_end");
  if (!(dose_reference > 0.0) || !std::isfinite(dose_power)) throw ValidationError("invalid dose scaling");
  if (feedback.active() && !(feedback.nu >= 0.0 && std::isfinite(feedback.nu)))
    throw ValidationError("feedback exponent must be finite and >= 0");
}

InjectionSchedule::InjectionSchedule(const std::vector<Cycle>& cycles, double dose) : dose_(dose) {
  if (!(dose > 0.0) || !std::isfinite(dose)) throw ValidationError("dose must be positive");
  for (const auto& c : cycles) add_cycle(c);
}

InjectionSchedule InjectionSchedule::from_injection_times(std::vector<double> times, double dose, double max_gap) {
  if (!(dose > 0.0) || !std::isfinite(dose)) throw ValidationError("dose must be positive");
  require_finite(times, "injection times");
  std::sort(times.begin(), times.end());
  InjectionSchedule s;
  s.dose_ = dose;
  for (double t : times) {
    if (!s.times_.empty() && t == s.times_.back()) throw ValidationError("duplicate injection time");
    const bool fresh = s.times_.empty() || t - s.times_.back() > max_gap || s.rank_.back() >= 3;
    s.push(t, fresh);
  }
  return s;
}

void InjectionSchedule::push(double t, bool new_cycle) {
  if (new_cycle) {
    cycle_index_.push_back(times_.empty() ? 0 : cycle_index_.back() + 1);
    rank_.push_back(1);
  } else {
    cycle_index_.push_back(cycle_index_.back());
    rank_.push_back(rank_.back() + 1);
  }
  times_.push_back(t);
}

void InjectionSchedule::add_cycle(const Cycle& c) {
  if (c.injections < 1 || c.injections > 3) throw ValidationError("a cycle has 1 to 3 injections");
  if (!std::isfinite(c.start)) throw ValidationError("cycle start must be finite");
  if (!times_.empty() && !(c.start > times_.back())) throw ValidationError("cycles must not overlap");
  for (int k = 0; k < c.injections; ++k) push(c.start + kSpacing * k, k == 0);
}

std::vector<Cycle> InjectionSchedule::cycles() const {
  std::vector<Cycle> out;
  for (std::size_t i = 0; i < times_.size(); ++i) {
    if (rank_[i] == 1) out.push_back({times_[i], 0});
    ++out.back().injections;
  }
  return out;
}

std::vector<double> InjectionSchedule::cycle_starts() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < times_.size(); ++i) {
    if (rank_[i] == 1) out.push_back(times_[i]);
  }
  return out;
}

InjectionSchedule InjectionSchedule::shifted(double dt) const {
  InjectionSchedule s = *this;
  for (double& t : s.times_) t += dt;
  return s;
}

InjectionSchedule InjectionSchedule::truncated(double horizon) const {
  InjectionSchedule s = *this;
  const auto n = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), horizon) - times_.begin());
  s.times_.resize(n);
  s.cycle_index_.resize(n);
  s.rank_.resize(n);
  return s;
}

void PopulationParams::validate(ModelVariant variant) const {
  const std::size_t want = variant == ModelVariant::Basic ? 1 : 3;
  if (beta_pi.size() != want)
    throw ValidationError("model '" + std::string(variant_name(variant)) + "' needs " + std::to_string(want) +
                          " proliferation coefficient(s), got " + std::to_string(beta_pi.size()));
  if (variant != ModelVariant::CycleEffect && beta_cycle != 0.0)
    throw ValidationError("beta_cycle is only defined for the cycle model");
  require_finite({phi_lambda, phi_rho, phi_pi, phi_mu_q, phi_mu_p, beta_mu_q, beta_cycle}, "fixed effects");
  require_finite(beta_pi, "beta_pi");
  if (!(sigma_lambda >= 0.0) || !(sigma_rho >= 0.0) || !std::isfinite(sigma_lambda) || !std::isfinite(sigma_rho))
    throw ValidationError("random-effect SDs must be finite and >= 0");
  if (!(sigma_cd4 > 0.0) || !(sigma_p > 0.0) || !std::isfinite(sigma_cd4) || !std::isfinite(sigma_p))
    throw ValidationError("measurement SDs must be finite and > 0");
}

BiologicalRates PopulationParams::baseline_rates(const RandomEffects& u) const {
  return {std::exp(phi_lambda + u.u_lambda), std::exp(phi_rho + u.u_rho), std::exp(phi_pi), std::exp(phi_mu_q),
          std::exp(phi_mu_p)};
}

std::vector<ParameterInfo> parameter_layout(ModelVariant variant) {
  std::vector<ParameterInfo> out = {{"phi_lambda", ParamScale::Log, true},
                                    {"phi_rho", ParamScale::Log, true},
                                    {"phi_pi", ParamScale::Log, true},
                                    {"phi_mu_q", ParamScale::Log, true},
                                    {"phi_mu_p", ParamScale::Log, true}};
  if (variant == ModelVariant::Basic) {
    out.push_back({"beta_pi", ParamScale::Linear, false});
  } else {
    for (int k = 1; k <= 3; ++k) out.push_back({"beta_pi" + std::to_string(k), ParamScale::Linear, false});
  }
  out.push_back({"beta_mu_q", ParamScale::Linear, false});
  if (variant == ModelVariant::CycleEffect) out.push_back({"beta_cycle", ParamScale::Linear, false});
  out.push_back({"sigma_lambda", ParamScale::Log, false});
  out.push_back({"sigma_rho", ParamScale::Log, false});
  out.push_back({"sigma_cd4", ParamScale::Log, false});
  out.push_back({"sigma_p", ParamScale::Log, false});
  return out;
}

std::vector<double> to_theta(const PopulationParams& pop, ModelVariant variant) {
  pop.validate(variant);
  if (!(pop.sigma_lambda > 0.0) || !(pop.sigma_rho > 0.0))
    throw ValidationError("random-effect SDs must be > 0 to be estimated");
  std::vector<double> th = {pop.phi_lambda, pop.phi_rho, pop.phi_pi, pop.phi_mu_q, pop.phi_mu_p};
  th.insert(th.end(), pop.beta_pi.begin(), pop.beta_pi.end());
  th.push_back(pop.beta_mu_q);
  if (variant == ModelVariant::CycleEffect) th.push_back(pop.beta_cycle);
  th.push_back(std::log(pop.sigma_lambda));
  th.push_back(std::log(pop.sigma_rho));
  th.push_back(std::log(pop.sigma_cd4));
  th.push_back(std::log(pop.sigma_p));
  return th;
}

PopulationParams from_theta(const std::vector<double>& theta, ModelVariant variant) {
  if (theta.size() != parameter_layout(variant).size())
    throw ValidationError("parameter vector has the wrong length for model '" + std::string(variant_name(variant)) +
                          "'");
  PopulationParams pop;
  std::size_t i = 0;
  pop.phi_lambda = theta[i++];
  pop.phi_rho = theta[i++];
  pop.phi_pi = theta[i++];
  pop.phi_mu_q = theta[i++];
  pop.phi_mu_p = theta[i++];
  const std::size_t nb = variant == ModelVariant::Basic ? 1 : 3;
  pop.beta_pi.assign(theta.begin() + static_cast<std::ptrdiff_t>(i), theta.begin() + static_cast<std::ptrdiff_t>(i + nb));
  i += nb;
  pop.beta_mu_q = theta[i++];
  if (variant == ModelVariant::CycleEffect) pop.beta_cycle = theta[i++];
  pop.sigma_lambda = std::exp(theta[i++]);
  pop.sigma_rho = std::exp(theta[i++]);
  pop.sigma_cd4 = std::exp(theta[i++]);
  pop.sigma_p = std::exp(theta[i++]);
  return pop;
}

double dose_covariate(double dose, const ModelSpec& spec) {
  if (!(dose > 0.0) || !std::isfinite(dose)) throw DomainError("dose must be positive");
  return std::pow(dose / spec.dose_reference, spec.dose_power);
}

std::optional<InjectionContext> active_injection(const InjectionSchedule& schedule, double t, double window) {
  const auto& times = schedule.injection_times();
  // Injections in (t - window, t].
  auto hi = std::upper_bound(times.begin(), times.end(), t);
  auto lo = std::upper_bound(times.begin(), hi, t - window);
  if (hi - lo != 1) return std::nullopt;
  const auto i = static_cast<std::size_t>(lo - times.begin());
  return InjectionContext{schedule.rank_of(i), schedule.cycle_of(i)};
}

std::optional<int> injection_rank(const InjectionSchedule& schedule, double t, double window) {
  if (auto ctx = active_injection(schedule, t, window)) return ctx->rank;
  return std::nullopt;
}

double survival_ramp(double t_since_cycle_start, const ModelSpec& spec) {
  return ramp_value(t_since_cycle_start, spec, false);
}

BiologicalRates log_rates_at(double t, const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                             const InjectionSchedule& schedule) {
  return log_rates_impl(t, spec, pop, u, schedule, false).value;
}

BiologicalRates rates_at(double t, const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                         const InjectionSchedule& schedule) {
  const BiologicalRates l = log_rates_at(t, spec, pop, u, schedule);
  return {std::exp(l.lambda), std::exp(l.rho), std::exp(l.pi), std::exp(l.mu_q), std::exp(l.mu_p)};
}

std::vector<double> breakpoints(const InjectionSchedule& schedule, const ModelSpec& spec, double horizon) {
  if (!(horizon > 0.0)) throw DomainError("horizon must be positive");
  std::vector<double> out;
  auto add = [&](double t) {
    if (t >= 0.0 && t <= horizon) out.push_back(t);
  };
  for (double t : schedule.injection_times()) {
    add(t);
    add(t + spec.effect_window);
  }
  for (double s : schedule.cycle_starts()) {
    add(s + spec.mu_q_onset);
    add(s + spec.ramp_plateau);
    add(s + spec.ramp_end);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PiecewiseRates build_rate_path(const ModelSpec& spec, const PopulationParams& pop, const RandomEffects& u,
                               const InjectionSchedule& schedule, double t0, double horizon) {
  std::vector<double> starts{t0};
  // Breakpoints are collected on a shifted clock so pre-treatment times (t0 < 0) are covered.
  const double shift = std::min(t0, 0.0);
  for (double b : breakpoints(schedule.shifted(-shift), spec, std::max(horizon - shift, 1.0))) {
    const double t = b + shift;
    if (t > t0 && t <= horizon) starts.push_back(t);
  }
  std::vector<PiecewiseRates::Segment> segs;
  segs.reserve(starts.size());
  for (double s : starts) {
    const auto r = log_rates_impl(s, spec, pop, u, schedule, true);
    PiecewiseRates::Segment seg;
    seg.start = s;
    seg.log_base = r.value;
    seg.log_slope.mu_q = r.mu_q_slope;
    segs.push_back(seg);
  }
  return PiecewiseRates(std::move(segs));
}

}  // namespace il7
