// Feedback weight for the AVX2 table. Compiled with -ffast-math and
// -fopenmp-simd so the loop maps onto the C library's 4-lane exp/log; nothing
// else lives in this translation unit.

#include <cmath>
#include <cstddef>

namespace il7::simd {

void feedback_weight_avx2(std::size_t n, const double* q, const double* p, double nu, double* w) {
#pragma omp simd
  for (std::size_t l = 0; l < n; ++l) w[l] = std::exp(-nu * std::log(q[l] + p[l]));
}

}  // namespace il7::simd
