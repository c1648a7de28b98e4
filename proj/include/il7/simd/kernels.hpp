#pragma once

// Data-parallel inner loops of the ensemble ODE solver and the observation
// model. Every kernel has a portable scalar reference implementation and, where
// the target supports it, an AVX2/FMA variant. The variant is selected once at
// runtime; IL7_SIMD=scalar|avx2 overrides the choice.
//
// Layout is structure-of-arrays: lane l of an ensemble lives at index l of each
// array. Kernels accept any lane count; vector variants finish the tail with
// scalar code.

#include <cstddef>
#include <string_view>
#include <vector>

namespace il7::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Shared (lane-independent) rates at one stage time. Per-lane production and
/// reversion are `lambda * lambda_scale[l]` and `rho * rho_scale[l]`.
struct StageRates {
  double lambda;
  double rho;
  double pi;
  double mu_q;
  double mu_p;
};

/// dq = lambda_l + 2 rho_l p - (pi w_l + mu_q) q,  dp = pi w_l q - (rho_l + mu_p) p.
/// `weight` may be null, meaning w_l = 1.
using DerivsFn = void (*)(std::size_t n, const double* q, const double* p, const double* lambda_scale,
                          const double* rho_scale, const double* weight, StageRates r, double* dq, double* dp);

/// out = y + h * sum_j coeffs[j] * ks[j].
using CombineFn = void (*)(std::size_t n, double* out, const double* y, double h, const double* const* ks,
                           const double* coeffs, std::size_t nk);

/// max over lanes of sqrt(((eq/sq)^2 + (ep/sp)^2) / 2), s = atol + rtol * max(|old|, |new|).
using ErrorNormFn = double (*)(std::size_t n, const double* eq, const double* ep, const double* q0, const double* p0,
                               const double* q1, const double* p1, double atol, double rtol);

/// acc[l] += -0.5 * ((obs_root - model[l]^0.25) * inv_sigma)^2.
using ResidualFn = void (*)(std::size_t n, const double* model, double obs_root, double inv_sigma, double* acc);

/// out[l] = q[l] + p[l].
using SumFn = void (*)(std::size_t n, const double* q, const double* p, double* out);

/// w[l] = (q[l] + p[l])^-nu, for totals > 0.
using WeightFn = void (*)(std::size_t n, const double* q, const double* p, double nu, double* w);

struct KernelTable {
  Isa isa;
  DerivsFn derivs;
  CombineFn combine;
  ErrorNormFn error_norm;
  ResidualFn residual;
  SumFn sum;
  WeightFn weight;
};

const KernelTable& scalar_kernels() noexcept;
#if defined(IL7_HAVE_AVX2)
const KernelTable& avx2_kernels() noexcept;
#endif

/// ISAs that are both compiled in and supported by the running CPU.
std::vector<Isa> available_isas();

/// Kernel table for a specific ISA; throws if the ISA is unavailable.
const KernelTable& kernels_for(Isa isa);

/// Kernel table chosen at first use (best available, or IL7_SIMD).
const KernelTable& active_kernels();

}  // namespace il7::simd
