#include <cstdlib>
#include <string>

#include "il7/error.hpp"
#include "il7/simd/kernels.hpp"

namespace il7::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(IL7_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* forced = std::getenv("IL7_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return scalar_kernels();
    if (name == "avx2") return kernels_for(Isa::Avx2);
    throw ValidationError("IL7_SIMD must be 'scalar' or 'avx2', got '" + name + "'");
  }
  return kernels_for(available_isas().back());
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::Scalar};
  if (cpu_has_avx2()) out.push_back(Isa::Avx2);
  return out;
}

const KernelTable& kernels_for(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return scalar_kernels();
    case Isa::Avx2:
#if defined(IL7_HAVE_AVX2)
      if (cpu_has_avx2()) return avx2_kernels();
#endif
      break;
  }
  throw ValidationError(std::string("SIMD variant not available on this machine: ") + std::string(isa_name(isa)));
}

const KernelTable& active_kernels() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace il7::simd
