// AVX2/FMA variants of the ensemble kernels. This translation unit and
// kernels_avx2_math.cpp are the only ones compiled with -mavx2 -mfma; they are
// reached through the dispatch table only after a CPU feature check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "il7/simd/kernels.hpp"

namespace il7::simd {

// kernels_avx2_math.cpp: vectorized through the C library's vector math routines.
void feedback_weight_avx2(std::size_t n, const double* q, const double* p, double nu, double* w);

namespace {

constexpr std::size_t kWidth = 4;

void derivs(std::size_t n, const double* q, const double* p, const double* lambda_scale, const double* rho_scale,
            const double* weight, StageRates r, double* dq, double* dp) {
  const __m256d v_lambda = _mm256_set1_pd(r.lambda);
  const __m256d v_rho = _mm256_set1_pd(r.rho);
  const __m256d v_pi = _mm256_set1_pd(r.pi);
  const __m256d v_mu_q = _mm256_set1_pd(r.mu_q);
  const __m256d v_mu_p = _mm256_set1_pd(r.mu_p);
  const __m256d v_two = _mm256_set1_pd(2.0);
  std::size_t l = 0;
  for (; l + kWidth <= n; l += kWidth) {
    const __m256d vq = _mm256_loadu_pd(q + l);
    const __m256d vp = _mm256_loadu_pd(p + l);
    const __m256d lam = _mm256_mul_pd(v_lambda, _mm256_loadu_pd(lambda_scale + l));
    const __m256d rho = _mm256_mul_pd(v_rho, _mm256_loadu_pd(rho_scale + l));
    __m256d prolif = _mm256_mul_pd(v_pi, vq);
    if (weight) prolif = _mm256_mul_pd(_mm256_mul_pd(v_pi, _mm256_loadu_pd(weight + l)), vq);
    // lam + 2 rho p - prolif - mu_q q
    __m256d gain = _mm256_fmadd_pd(_mm256_mul_pd(v_two, rho), vp, lam);
    __m256d out_q = _mm256_fnmadd_pd(v_mu_q, vq, _mm256_sub_pd(gain, prolif));
    // prolif - (rho + mu_p) p
    __m256d out_p = _mm256_fnmadd_pd(_mm256_add_pd(rho, v_mu_p), vp, prolif);
    _mm256_storeu_pd(dq + l, out_q);
    _mm256_storeu_pd(dp + l, out_p);
  }
  for (; l < n; ++l) {
    const double lam = r.lambda * lambda_scale[l];
    const double rho = r.rho * rho_scale[l];
    const double prolif = weight ? r.pi * weight[l] * q[l] : r.pi * q[l];
    dq[l] = lam + 2.0 * rho * p[l] - prolif - r.mu_q * q[l];
    dp[l] = prolif - rho * p[l] - r.mu_p * p[l];
  }
}

void combine(std::size_t n, double* out, const double* y, double h, const double* const* ks, const double* coeffs,
             std::size_t nk) {
  const __m256d vh = _mm256_set1_pd(h);
  std::size_t l = 0;
  for (; l + kWidth <= n; l += kWidth) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t j = 0; j < nk; ++j) acc = _mm256_fmadd_pd(_mm256_set1_pd(coeffs[j]), _mm256_loadu_pd(ks[j] + l), acc);
    _mm256_storeu_pd(out + l, _mm256_fmadd_pd(vh, acc, _mm256_loadu_pd(y + l)));
  }
  for (; l < n; ++l) {
    double acc = 0.0;
    for (std::size_t j = 0; j < nk; ++j) acc += coeffs[j] * ks[j][l];
    out[l] = y[l] + h * acc;
  }
}

inline __m256d abs_pd(__m256d x) { return _mm256_andnot_pd(_mm256_set1_pd(-0.0), x); }

double error_norm(std::size_t n, const double* eq, const double* ep, const double* q0, const double* p0,
                  const double* q1, const double* p1, double atol, double rtol) {
  const __m256d va = _mm256_set1_pd(atol);
  const __m256d vr = _mm256_set1_pd(rtol);
  __m256d worst = _mm256_setzero_pd();
  std::size_t l = 0;
  for (; l + kWidth <= n; l += kWidth) {
    const __m256d sq =
        _mm256_fmadd_pd(vr, _mm256_max_pd(abs_pd(_mm256_loadu_pd(q0 + l)), abs_pd(_mm256_loadu_pd(q1 + l))), va);
    const __m256d sp =
        _mm256_fmadd_pd(vr, _mm256_max_pd(abs_pd(_mm256_loadu_pd(p0 + l)), abs_pd(_mm256_loadu_pd(p1 + l))), va);
    const __m256d a = _mm256_div_pd(_mm256_loadu_pd(eq + l), sq);
    const __m256d b = _mm256_div_pd(_mm256_loadu_pd(ep + l), sp);
    const __m256d s = _mm256_mul_pd(_mm256_set1_pd(0.5), _mm256_fmadd_pd(a, a, _mm256_mul_pd(b, b)));
    worst = _mm256_max_pd(worst, s);
  }
  alignas(32) double lanes[kWidth];
  _mm256_store_pd(lanes, worst);
  double result = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; l < n; ++l) {
    const double sq = atol + rtol * std::max(std::abs(q0[l]), std::abs(q1[l]));
    const double sp = atol + rtol * std::max(std::abs(p0[l]), std::abs(p1[l]));
    const double a = eq[l] / sq;
    const double b = ep[l] / sp;
    result = std::max(result, 0.5 * (a * a + b * b));
  }
  return std::sqrt(result);
}

void residual(std::size_t n, const double* model, double obs_root, double inv_sigma, double* acc) {
  const __m256d vo = _mm256_set1_pd(obs_root);
  const __m256d vs = _mm256_set1_pd(inv_sigma);
  const __m256d vhalf = _mm256_set1_pd(-0.5);
  std::size_t l = 0;
  for (; l + kWidth <= n; l += kWidth) {
    const __m256d root = _mm256_sqrt_pd(_mm256_sqrt_pd(_mm256_loadu_pd(model + l)));
    const __m256d z = _mm256_mul_pd(_mm256_sub_pd(vo, root), vs);
    _mm256_storeu_pd(acc + l, _mm256_fmadd_pd(vhalf, _mm256_mul_pd(z, z), _mm256_loadu_pd(acc + l)));
  }
  for (; l < n; ++l) {
    const double z = (obs_root - std::sqrt(std::sqrt(model[l]))) * inv_sigma;
    acc[l] += -0.5 * z * z;
  }
}

void sum(std::size_t n, const double* q, const double* p, double* out) {
  std::size_t l = 0;
  for (; l + kWidth <= n; l += kWidth)
    _mm256_storeu_pd(out + l, _mm256_add_pd(_mm256_loadu_pd(q + l), _mm256_loadu_pd(p + l)));
  for (; l < n; ++l) out[l] = q[l] + p[l];
}

}  // namespace

const KernelTable& avx2_kernels() noexcept {
  static const KernelTable table{Isa::Avx2, derivs, combine, error_norm, residual, sum, feedback_weight_avx2};
  return table;
}

}  // namespace il7::simd
