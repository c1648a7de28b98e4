#include <algorithm>
#include <cmath>

#include "il7/simd/kernels.hpp"

namespace il7::simd {
namespace {

void derivs(std::size_t n, const double* q, const double* p, const double* lambda_scale, const double* rho_scale,
            const double* weight, StageRates r, double* dq, double* dp) {
  for (std::size_t l = 0; l < n; ++l) {
    const double lam = r.lambda * lambda_scale[l];
    const double rho = r.rho * rho_scale[l];
    const double prolif = weight ? r.pi * weight[l] * q[l] : r.pi * q[l];
    dq[l] = lam + 2.0 * rho * p[l] - prolif - r.mu_q * q[l];
    dp[l] = prolif - rho * p[l] - r.mu_p * p[l];
  }
}

void combine(std::size_t n, double* out, const double* y, double h, const double* const* ks, const double* coeffs,
             std::size_t nk) {
  for (std::size_t l = 0; l < n; ++l) {
    double acc = 0.0;
    for (std::size_t j = 0; j < nk; ++j) acc += coeffs[j] * ks[j][l];
    out[l] = y[l] + h * acc;
  }
}

double error_norm(std::size_t n, const double* eq, const double* ep, const double* q0, const double* p0,
                  const double* q1, const double* p1, double atol, double rtol) {
  double worst = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const double sq = atol + rtol * std::max(std::abs(q0[l]), std::abs(q1[l]));
    const double sp = atol + rtol * std::max(std::abs(p0[l]), std::abs(p1[l]));
    const double a = eq[l] / sq;
    const double b = ep[l] / sp;
    worst = std::max(worst, 0.5 * (a * a + b * b));
  }
  return std::sqrt(worst);
}

void residual(std::size_t n, const double* model, double obs_root, double inv_sigma, double* acc) {
  for (std::size_t l = 0; l < n; ++l) {
    const double z = (obs_root - std::sqrt(std::sqrt(model[l]))) * inv_sigma;
    acc[l] += -0.5 * z * z;
  }
}

void sum(std::size_t n, const double* q, const double* p, double* out) {
  for (std::size_t l = 0; l < n; ++l) out[l] = q[l] + p[l];
}

void weight(std::size_t n, const double* q, const double* p, double nu, double* w) {
  for (std::size_t l = 0; l < n; ++l) w[l] = std::pow(q[l] + p[l], -nu);
}

}  // namespace

const KernelTable& scalar_kernels() noexcept {
  static const KernelTable table{Isa::Scalar, derivs, combine, error_norm, residual, sum, weight};
  return table;
}

}  // namespace il7::simd
