#include "il7/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "il7/ensemble.hpp"
#include "il7/error.hpp"

namespace il7 {
namespace {

BiologicalRates exp_rates(const BiologicalRates& l) {
  return {std::exp(l.lambda), std::exp(l.rho), std::exp(l.pi), std::exp(l.mu_q), std::exp(l.mu_p)};
}

bool is_zero(const BiologicalRates& r) {
  return r.lambda == 0.0 && r.rho == 0.0 && r.pi == 0.0 && r.mu_q == 0.0 && r.mu_p == 0.0;
}

void check_rates(const BiologicalRates& r) {
  const double v[] = {r.lambda, r.rho, r.pi, r.mu_q, r.mu_p};
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) throw DomainError("rates must be finite and non-negative");
  }
  if (!(r.mu_q > 0.0) || !(r.mu_p + r.rho > 0.0)) throw DomainError("mortality rates must be positive");
}

}  // namespace

PiecewiseRates::PiecewiseRates(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw DomainError("piecewise rates need at least one segment");
  for (std::size_t i = 1; i < segments_.size(); ++i) {
    if (!(segments_[i].start > segments_[i - 1].start)) throw DomainError("segment starts must increase");
  }
  constant_.reserve(segments_.size());
  has_slope_.reserve(segments_.size());
  for (const auto& s : segments_) {
    constant_.push_back(exp_rates(s.log_base));
    has_slope_.push_back(!is_zero(s.log_slope));
  }
}

BiologicalRates PiecewiseRates::at(double t) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                             [](double v, const Segment& s) { return v < s.start; });
  const std::size_t k = it == segments_.begin() ? 0 : static_cast<std::size_t>(it - segments_.begin()) - 1;
  if (!has_slope_[k]) return constant_[k];
  const Segment& s = segments_[k];
  const double dt = std::max(t - s.start, 0.0);
  const BiologicalRates& b = s.log_base;
  const BiologicalRates& m = s.log_slope;
  return exp_rates({b.lambda + m.lambda * dt, b.rho + m.rho * dt, b.pi + m.pi * dt, b.mu_q + m.mu_q * dt,
                    b.mu_p + m.mu_p * dt});
}

std::pair<double, double> derivatives(const CompartmentState& s, const BiologicalRates& r, const FeedbackSpec& fb) {
  if (!(s.q >= 0.0) || !(s.p >= 0.0)) throw DomainError("state components must be non-negative");
  double w = 1.0;
  if (fb.active() && fb.nu != 0.0) {
    const double total = s.q + s.p;
    if (!(total > 0.0)) throw DomainError("feedback term undefined at zero total count");
    w = std::pow(total, -fb.nu);
  }
  const double prolif = fb.active() ? r.pi * w * s.q : r.pi * s.q;
  return {r.lambda + 2.0 * r.rho * s.p - prolif - r.mu_q * s.q, prolif - r.rho * s.p - r.mu_p * s.p};
}

CompartmentState equilibrium(const BiologicalRates& r, const FeedbackSpec& fb) {
  check_rates(r);
  const double turnover = r.rho + r.mu_p;
  if (!fb.active() || fb.nu == 0.0) {
    const double denom = r.pi + r.mu_q - 2.0 * r.rho * r.pi / turnover;
    if (!(denom > 0.0)) throw NoEquilibriumError("no positive equilibrium: (pi + mu_q)(rho + mu_p) <= 2 rho pi");
    const double q = r.lambda / denom;
    return {q, r.pi * q / turnover};
  }
  if (fb.nu < 0.0) throw DomainError("feedback exponent must be non-negative");

  // Summing both equations at rest: lambda + (rho - mu_p) P - mu_q Q = 0, with
  // P = c Q and c = pi T^-nu / (rho + mu_p). Solve for the total T = Q + P.
  auto ratio = [&](double total) { return r.pi * std::pow(total, -fb.nu) / turnover; };
  auto residual = [&](double total) {
    const double c = ratio(total);
    return r.lambda + ((r.rho - r.mu_p) * c - r.mu_q) * total / (1.0 + c);
  };
  auto slope = [&](double total) {
    const double c = ratio(total);
    const double dc = -fb.nu * c / total;
    const double a = (r.rho - r.mu_p) * c - r.mu_q;
    const double da = (r.rho - r.mu_p) * dc;
    return (da * total + a) / (1.0 + c) - a * total * dc / ((1.0 + c) * (1.0 + c));
  };

  // residual(0+) = lambda > 0 and residual -> -inf; bracket a sign change.
  double lo = 1e-12;
  double hi = r.lambda / r.mu_q + 1.0;
  {
    const double base = r.pi + r.mu_q - 2.0 * r.rho * r.pi / turnover;
    if (base > 0.0) hi = std::max(hi, 2.0 * (r.lambda / base) * (1.0 + r.pi / turnover));
  }
  int expand = 0;
  while (residual(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++expand > 200) throw NonConvergenceError("could not bracket the feedback equilibrium");
  }
  double total = 0.5 * (lo + hi);
  {
    const double base = r.pi + r.mu_q - 2.0 * r.rho * r.pi / turnover;
    if (base > 0.0) {
      const double guess = (r.lambda / base) * (1.0 + r.pi / turnover);
      if (guess > lo && guess < hi) total = guess;
    }
  }
  for (int iter = 0; iter < 100; ++iter) {
    const double g = residual(total);
    if (g > 0.0) lo = total; else hi = total;
    const double d = slope(total);
    double next = total - g / d;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - total) <= 1e-14 * total) {
      total = next;
      const double c = ratio(total);
      const double q = total / (1.0 + c);
      return {q, total - q};
    }
    total = next;
  }
  throw NonConvergenceError("feedback equilibrium did not converge in 100 iterations");
}

Trajectory integrate(const RatePath& rates, const FeedbackSpec& fb, const CompartmentState& init,
                     std::span<const double> grid, std::span<const double> breakpoints, const SolverOptions& options) {
  if (grid.empty()) throw DomainError("integration grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw DomainError("integration grid must be strictly increasing");
  }
  std::vector<double> bps(breakpoints.begin(), breakpoints.end());
  std::sort(bps.begin(), bps.end());

  Trajectory out;
  out.times.assign(grid.begin(), grid.end());
  out.states.resize(grid.size());
  double q[1] = {init.q};
  double p[1] = {init.p};
  const double one[1] = {1.0};
  EnsembleSolver solver(options);
  solver.run(rates, one, one, fb, grid.front(), q, p, grid, bps,
             [&](std::size_t i, std::span<const double> sq, std::span<const double> sp) {
               out.states[i] = {sq[0], sp[0]};
             });
  return out;
}

Trajectory integrate(const std::function<BiologicalRates(double)>& rates_at, const FeedbackSpec& fb,
                     const CompartmentState& init, std::span<const double> grid, std::span<const double> breakpoints,
                     const SolverOptions& options) {
  return integrate(FunctionRates(rates_at), fb, init, grid, breakpoints, options);
}

}  // namespace il7
