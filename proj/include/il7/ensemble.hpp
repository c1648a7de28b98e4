#pragma once

// Lockstep Dormand-Prince 5(4) integration of many copies of the compartment
// model that share one rate path and differ only in multiplicative factors on
// lambda and rho (the random effects). All lanes take the same steps; the step
// controller uses the worst lane. Inner loops go through the SIMD kernel table.

#include <functional>
#include <span>
#include <vector>

#include "il7/dynamics.hpp"
#include "il7/simd/kernels.hpp"

namespace il7 {

class EnsembleSolver {
 public:
  /// Called at each stop with the lane states (q, p) at stops[index].
  using StopCallback = std::function<void(std::size_t index, std::span<const double> q, std::span<const double> p)>;

  explicit EnsembleSolver(SolverOptions options = {}, const simd::KernelTable* kernels = nullptr);

  /// Advance lanes from t0 through every time in `stops` (sorted, each >= t0).
  /// `q` and `p` hold the initial states and receive the final ones. A stop at
  /// t0 reports the initial state.
  void run(const RatePath& path, std::span<const double> lambda_scale, std::span<const double> rho_scale,
           const FeedbackSpec& fb, double t0, std::span<double> q, std::span<double> p, std::span<const double> stops,
           std::span<const double> breakpoints, const StopCallback& on_stop) const;

  const SolverOptions& options() const noexcept { return options_; }
  const simd::KernelTable& kernels() const noexcept { return *kernels_; }

 private:
  SolverOptions options_;
  const simd::KernelTable* kernels_;
};

}  // namespace il7
