#include "il7/ensemble.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "il7/error.hpp"

namespace il7 {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr std::array<double, 1> a2{1.0 / 5.0};
constexpr std::array<double, 2> a3{3.0 / 40.0, 9.0 / 40.0};
constexpr std::array<double, 3> a4{44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0};
constexpr std::array<double, 4> a5{19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0};
constexpr std::array<double, 5> a6{9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                                   -5103.0 / 18656.0};
// 5th-order weights (k2 has weight zero and is skipped).
constexpr std::array<double, 5> b5{35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0};
// b5 - b4 on (k1, k3, k4, k5, k6, k7).
constexpr std::array<double, 6> e5{71.0 / 57600.0,      -71.0 / 16695.0, 71.0 / 1920.0,
                                   -17253.0 / 339200.0, 22.0 / 525.0,    -1.0 / 40.0};

struct Workspace {
  explicit Workspace(std::size_t n)
      : k(7, std::vector<double>(n)), kp(7, std::vector<double>(n)), tq(n), tp(n), nq(n), np(n), weight(n) {}
  std::vector<std::vector<double>> k, kp;  // stage derivatives for q and p
  std::vector<double> tq, tp, nq, np, weight;
};

}  // namespace

EnsembleSolver::EnsembleSolver(SolverOptions options, const simd::KernelTable* kernels)
    : options_(options), kernels_(kernels ? kernels : &simd::active_kernels()) {
  if (!(options_.rtol > 0.0) || !(options_.atol > 0.0)) throw DomainError("solver tolerances must be positive");
}

void EnsembleSolver::run(const RatePath& path, std::span<const double> lambda_scale,
                         std::span<const double> rho_scale, const FeedbackSpec& fb, double t0, std::span<double> q,
                         std::span<double> p, std::span<const double> stops, std::span<const double> breakpoints,
                         const StopCallback& on_stop) const {
  const std::size_t n = q.size();
  if (p.size() != n || lambda_scale.size() != n || rho_scale.size() != n)
    throw DomainError("ensemble arrays must have equal length");
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (stops[i] < t0 || (i > 0 && stops[i] < stops[i - 1]))
      throw DomainError("stops must be sorted and not precede the initial time");
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (!(q[l] >= 0.0) || !(p[l] >= 0.0)) throw DomainError("initial state must be non-negative");
  }
  if (n == 0 || stops.empty()) return;

  const auto& K = *kernels_;
  const double rtol = options_.rtol;
  const double atol = options_.atol;
  Workspace ws(n);
  const bool feedback = fb.active() && fb.nu != 0.0;
  const bool forced_weight = fb.active() && fb.nu == 0.0;
  if (forced_weight) std::fill(ws.weight.begin(), ws.weight.end(), 1.0);

  auto eval = [&](double t, double seg_end, const double* yq, const double* yp, double* dq, double* dp) {
    const double te = t >= seg_end ? std::nextafter(seg_end, -std::numeric_limits<double>::infinity()) : t;
    const BiologicalRates r = path.at(te);
    const double* w = nullptr;
    if (feedback) {
      bool positive = true;
      for (std::size_t l = 0; l < n; ++l) positive &= yq[l] + yp[l] > 0.0;
      if (!positive) throw DomainError("feedback term undefined at zero total count");
      K.weight(n, yq, yp, fb.nu, ws.weight.data());
      w = ws.weight.data();
    } else if (forced_weight) {
      w = ws.weight.data();
    }
    K.derivs(n, yq, yp, lambda_scale.data(), rho_scale.data(), w, {r.lambda, r.rho, r.pi, r.mu_q, r.mu_p}, dq, dp);
  };

  // Merge stops and breakpoints into one ordered list of segment ends.
  const double t_final = stops.back();
  std::vector<double> ends;
  ends.reserve(stops.size() + breakpoints.size());
  for (double s : stops)
    if (s > t0) ends.push_back(s);
  for (double b : breakpoints)
    if (b > t0 && b < t_final) ends.push_back(b);
  std::sort(ends.begin(), ends.end());
  ends.erase(std::unique(ends.begin(), ends.end()), ends.end());

  auto is_breakpoint = [&](double t) { return std::binary_search(breakpoints.begin(), breakpoints.end(), t); };
  const bool bps_sorted = std::is_sorted(breakpoints.begin(), breakpoints.end());
  std::vector<double> sorted_bps;
  if (!bps_sorted) {
    sorted_bps.assign(breakpoints.begin(), breakpoints.end());
    std::sort(sorted_bps.begin(), sorted_bps.end());
  }
  auto breakpoint_at = [&](double t) {
    return bps_sorted ? is_breakpoint(t) : std::binary_search(sorted_bps.begin(), sorted_bps.end(), t);
  };

  std::size_t next_stop = 0;
  auto report = [&](double t) {
    while (next_stop < stops.size() && stops[next_stop] <= t) {
      on_stop(next_stop, std::span<const double>(q.data(), n), std::span<const double>(p.data(), n));
      ++next_stop;
    }
  };
  report(t0);

  double t = t0;
  double h = std::numeric_limits<double>::infinity();
  bool fsal_valid = false;
  std::size_t steps = 0;
  std::vector<double>& k1q = ws.k[0];
  std::vector<double>& k1p = ws.kp[0];

  for (double seg_end : ends) {
    // Segment end for rate evaluation: the next breakpoint at or after seg_end.
    auto it = std::lower_bound(ends.begin(), ends.end(), seg_end);
    double rate_end = t_final;
    for (auto jt = it; jt != ends.end(); ++jt) {
      if (breakpoint_at(*jt)) {
        rate_end = *jt;
        break;
      }
    }
    if (!fsal_valid) {
      eval(t, rate_end, q.data(), p.data(), k1q.data(), k1p.data());
      // Initial step heuristic: 1% of the ratio of scaled state to scaled slope.
      double d0 = 0.0, d1 = 0.0;
      for (std::size_t l = 0; l < n; ++l) {
        const double sq = atol + rtol * std::abs(q[l]);
        const double sp = atol + rtol * std::abs(p[l]);
        d0 = std::max(d0, std::max(std::abs(q[l]) / sq, std::abs(p[l]) / sp));
        d1 = std::max(d1, std::max(std::abs(k1q[l]) / sq, std::abs(k1p[l]) / sp));
      }
      const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
      h = std::min(h, h0);
      fsal_valid = true;
    }
    while (t < seg_end) {
      if (++steps > options_.max_steps) throw StepUnderflowError("maximum number of solver steps exceeded");
      h = std::min(h, options_.max_step);
      bool last = false;
      double step = h;
      if (t + step >= seg_end || seg_end - (t + step) < 1e-12 * std::max(1.0, std::abs(seg_end))) {
        step = seg_end - t;
        last = true;
      }
      if (step < 1e-13 * std::max(1.0, std::abs(t)))
        throw StepUnderflowError("step size underflow at t = " + std::to_string(t));

      const double* yq = q.data();
      const double* yp = p.data();
      auto stage = [&](std::size_t idx, double c, const double* coeffs, std::size_t nk) {
        const double* ksq[6];
        const double* ksp[6];
        for (std::size_t j = 0; j < nk; ++j) {
          ksq[j] = ws.k[j].data();
          ksp[j] = ws.kp[j].data();
        }
        K.combine(n, ws.tq.data(), yq, step, ksq, coeffs, nk);
        K.combine(n, ws.tp.data(), yp, step, ksp, coeffs, nk);
        eval(t + c * step, rate_end, ws.tq.data(), ws.tp.data(), ws.k[idx].data(), ws.kp[idx].data());
      };
      stage(1, c2, a2.data(), a2.size());
      stage(2, c3, a3.data(), a3.size());
      stage(3, c4, a4.data(), a4.size());
      stage(4, c5, a5.data(), a5.size());
      stage(5, 1.0, a6.data(), a6.size());

      // 5th-order solution from k1, k3..k6.
      {
        const double* ksq[5] = {ws.k[0].data(), ws.k[2].data(), ws.k[3].data(), ws.k[4].data(), ws.k[5].data()};
        const double* ksp[5] = {ws.kp[0].data(), ws.kp[2].data(), ws.kp[3].data(), ws.kp[4].data(), ws.kp[5].data()};
        K.combine(n, ws.nq.data(), yq, step, ksq, b5.data(), 5);
        K.combine(n, ws.np.data(), yp, step, ksp, b5.data(), 5);
      }
      // FSAL stage at the new point.
      eval(t + step, rate_end, ws.nq.data(), ws.np.data(), ws.k[6].data(), ws.kp[6].data());
      {
        const double* ksq[6] = {ws.k[0].data(), ws.k[2].data(), ws.k[3].data(),
                                ws.k[4].data(), ws.k[5].data(), ws.k[6].data()};
        const double* ksp[6] = {ws.kp[0].data(), ws.kp[2].data(), ws.kp[3].data(),
                                ws.kp[4].data(), ws.kp[5].data(), ws.kp[6].data()};
        std::vector<double>& eq = ws.tq;
        std::vector<double>& ep = ws.tp;
        // err = step * sum e_j k_j, written via combine with a zero base.
        std::fill(eq.begin(), eq.end(), 0.0);
        std::fill(ep.begin(), ep.end(), 0.0);
        K.combine(n, eq.data(), eq.data(), step, ksq, e5.data(), 6);
        K.combine(n, ep.data(), ep.data(), step, ksp, e5.data(), 6);
      }
      double err = K.error_norm(n, ws.tq.data(), ws.tp.data(), yq, yp, ws.nq.data(), ws.np.data(), atol, rtol);

      // Reject steps that leave the positive orthant beyond tolerance.
      bool negative = false;
      for (std::size_t l = 0; l < n && !negative; ++l) {
        if (ws.nq[l] < -(atol + rtol * std::abs(q[l])) || ws.np[l] < -(atol + rtol * std::abs(p[l]))) negative = true;
      }
      if (!std::isfinite(err)) negative = true;
      if (negative) {
        if (step < 1e-10 * std::max(1.0, std::abs(t)))
          throw NegativeStateError("solution left the positive orthant at t = " + std::to_string(t));
        h = 0.25 * step;
        continue;
      }

      if (err <= 1.0) {
        t = last ? seg_end : t + step;
        for (std::size_t l = 0; l < n; ++l) {
          q[l] = std::max(ws.nq[l], 0.0);
          p[l] = std::max(ws.np[l], 0.0);
        }
        std::swap(ws.k[0], ws.k[6]);
        std::swap(ws.kp[0], ws.kp[6]);
        const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        // Keep the controller's proposal when the step was shortened to hit a stop.
        h = last ? std::max(h, step * factor) : step * factor;
      } else {
        h = step * std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
      }
    }
    report(t);
    if (breakpoint_at(seg_end)) fsal_valid = false;
  }
  report(t);
}

}  // namespace il7
