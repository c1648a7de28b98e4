#pragma once

// Two-compartment model of CD4+ T cells: quiescent (Q) and proliferating,
// Ki67+ (P) cells.
//
//   dQ/dt = lambda + 2 rho P - pi w Q - mu_q Q
//   dP/dt = pi w Q - rho P - mu_p P,          w = (Q + P)^-nu
//
// w == 1 without feedback. Rates may change with time (injection effects); the
// integrators restart at every discontinuity so no step straddles one.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace il7 {

struct CompartmentState {
  double q = 0.0;  ///< quiescent cells / uL
  double p = 0.0;  ///< proliferating cells / uL

  double total() const noexcept { return q + p; }
};

/// Natural-scale rates of the ODE system at one instant (per day; lambda in cells/uL/day).
struct BiologicalRates {
  double lambda = 0.0;
  double rho = 0.0;
  double pi = 0.0;
  double mu_q = 0.0;
  double mu_p = 0.0;
};

/// Feedback on proliferation by the total count. `enabled == false` is the
/// base system; `enabled` with nu == 0 evaluates the feedback form with w == 1.
struct FeedbackSpec {
  double nu = 0.0;
  bool enabled = false;

  static FeedbackSpec none() noexcept { return {}; }
  static FeedbackSpec with_exponent(double nu) noexcept { return {nu, true}; }
  bool active() const noexcept { return enabled; }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<CompartmentState> states;
};

/// Time-dependent rates. `at(t)` is right-continuous; integrators request the
/// left limit at the end of a segment by evaluating just before the breakpoint.
class RatePath {
 public:
  virtual ~RatePath() = default;
  virtual BiologicalRates at(double t) const = 0;
};

class ConstantRates final : public RatePath {
 public:
  explicit ConstantRates(BiologicalRates r) : rates_(r) {}
  BiologicalRates at(double) const override { return rates_; }

 private:
  BiologicalRates rates_;
};

class FunctionRates final : public RatePath {
 public:
  explicit FunctionRates(std::function<BiologicalRates(double)> fn) : fn_(std::move(fn)) {}
  BiologicalRates at(double t) const override { return fn_(t); }

 private:
  std::function<BiologicalRates(double)> fn_;
};

/// Rates whose logarithms are affine in time on each segment [start_k, start_{k+1}).
/// Before the first segment the first segment's values at its start apply.
class PiecewiseRates final : public RatePath {
 public:
  struct Segment {
    double start = 0.0;
    BiologicalRates log_base{};   ///< log-rates at `start`
    BiologicalRates log_slope{};  ///< d(log-rate)/dt within the segment
  };

  PiecewiseRates() = default;
  explicit PiecewiseRates(std::vector<Segment> segments);

  BiologicalRates at(double t) const override;
  const std::vector<Segment>& segments() const noexcept { return segments_; }

 private:
  std::vector<Segment> segments_;
  std::vector<BiologicalRates> constant_;  ///< exp(log_base), used when the slope is zero
  std::vector<bool> has_slope_;
};

struct SolverOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 2'000'000;
};

std::pair<double, double> derivatives(const CompartmentState& s, const BiologicalRates& r, const FeedbackSpec& fb);

/// Equilibrium of the autonomous system with rates `r`. Closed form without
/// feedback; safeguarded Newton on the total count with feedback.
CompartmentState equilibrium(const BiologicalRates& r, const FeedbackSpec& fb);

/// Integrate one trajectory from `init` at grid.front() and report the state at
/// every grid time. `breakpoints` must contain every discontinuity of `rates`.
Trajectory integrate(const RatePath& rates, const FeedbackSpec& fb, const CompartmentState& init,
                     std::span<const double> grid, std::span<const double> breakpoints,
                     const SolverOptions& options = {});

Trajectory integrate(const std::function<BiologicalRates(double)>& rates_at, const FeedbackSpec& fb,
                     const CompartmentState& init, std::span<const double> grid, std::span<const double> breakpoints,
                     const SolverOptions& options = {});

}  // namespace il7
