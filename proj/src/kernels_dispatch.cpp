#include <cstdlib>
#include <cstring>

#include "depthformer/error.hpp"
#include "depthformer/kernels.hpp"

namespace df::kern {

#if DF_BUILD_AVX2
const Kernels* avx2_table_impl();
#endif

namespace {

bool cpu_has_avx2() {
#if DF_BUILD_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels* g_forced = nullptr;

const Kernels* pick() {
  if (const char* env = std::getenv("DEPTHFORMER_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_table();
    if (std::strcmp(env, "avx2") == 0 && avx2_table()) return avx2_table();
    // Unknown or unsupported request falls through to auto selection.
  }
  if (const Kernels* t = avx2_table()) return t;
  return &scalar_table();
}

}  // namespace

const Kernels* avx2_table() {
#if DF_BUILD_AVX2
  return cpu_has_avx2() ? avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& active() {
  if (g_forced) return *g_forced;
  static const Kernels* chosen = pick();
  return *chosen;
}

void force(const char* name) {
  if (name == nullptr) {
    g_forced = nullptr;
    return;
  }
  if (std::strcmp(name, "scalar") == 0) {
    g_forced = &scalar_table();
    return;
  }
  if (std::strcmp(name, "avx2") == 0) {
    if (const Kernels* t = avx2_table()) {
      g_forced = t;
      return;
    }
    throw ConfigError("avx2 kernels are not available on this machine");
  }
  throw ConfigError(std::string("unknown kernel table: ") + name);
}

}  // namespace df::kern
