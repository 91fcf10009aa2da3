#include "gfn/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace gfn::kernels {

// Defined in kernels_avx2.cpp; null when that variant was not built.
const Ops* avx2_ops_build();

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops& select() {
  const char* force = std::getenv("GFN_KERNELS");
  if (force && std::strcmp(force, "scalar") == 0) return scalar_ops();
  if (force && std::strcmp(force, "avx2") == 0) {
    const Ops* v = avx2_ops();
    if (!v) throw std::runtime_error("GFN_KERNELS=avx2 but the AVX2 variant is unavailable");
    return *v;
  }
  if (force && *force) throw std::runtime_error("GFN_KERNELS must be 'scalar' or 'avx2'");
  const Ops* v = avx2_ops();
  return v ? *v : scalar_ops();
}

}  // namespace

const Ops* avx2_ops() {
  static const Ops* ops = cpu_has_avx2_fma() ? avx2_ops_build() : nullptr;
  return ops;
}

bool avx2_available() { return avx2_ops() != nullptr; }

const Ops& active_ops() {
  static const Ops& ops = select();
  return ops;
}

}  // namespace gfn::kernels
