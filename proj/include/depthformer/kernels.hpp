#pragma once

#include <cstdint>

namespace df::kern {

// Dense arithmetic kernels behind everything hot in this codebase. There is a
// scalar reference table and (on x86-64) an AVX2+FMA table; the active table
// is chosen once at runtime from cpuid, or forced via DEPTHFORMER_KERNELS=
// scalar|avx2. All variants partition work so that every output element is
// produced by exactly one thread with a fixed accumulation order, making
// results bitwise independent of the thread count within one table.
//
// gemm_nn: C[m,n] = A[m,k] * B[k,n]
// gemm_nt: C[m,n] = A[m,k] * B[n,k]^T
// gemm_tn: C[m,n] = A[k,m]^T * B[k,n]
// accumulate=false overwrites C, true adds into it.
struct Kernels {
  const char* name;

  void (*sgemm_nn)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool accumulate);
  void (*sgemm_nt)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool accumulate);
  void (*sgemm_tn)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool accumulate);

  void (*dgemm_nn)(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool accumulate);
  void (*dgemm_nt)(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool accumulate);
  void (*dgemm_tn)(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool accumulate);

  // out = a + b
  void (*sadd)(int64_t n, const float* a, const float* b, float* out);
  // y += alpha * x
  void (*saxpy)(int64_t n, float alpha, const float* x, float* y);
  // out = alpha * x
  void (*sscale)(int64_t n, float alpha, const float* x, float* out);
  // out = max(x, 0)
  void (*srelu)(int64_t n, const float* x, float* out);
  // out = x > 0 ? x : slope * x
  void (*sleaky)(int64_t n, float slope, const float* x, float* out);
  float (*sdot)(int64_t n, const float* a, const float* b);
  float (*ssum)(int64_t n, const float* x);
};

const Kernels& active();
const Kernels& scalar_table();
// nullptr when AVX2 is unavailable (not compiled in or not supported by cpu).
const Kernels* avx2_table();
// Force a table by name for tests; throws ConfigError on unknown/unsupported.
void force(const char* name);

// Type-dispatched helpers used by templated code.
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
             T* c, int64_t ldc, bool accumulate);
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
             T* c, int64_t ldc, bool accumulate);
template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
             T* c, int64_t ldc, bool accumulate);

template <>
inline void gemm_nn<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc, bool acc) {
  active().sgemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <>
inline void gemm_nn<double>(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
                            const double* b, int64_t ldb, double* c, int64_t ldc, bool acc) {
  active().dgemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <>
inline void gemm_nt<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc, bool acc) {
  active().sgemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <>
inline void gemm_nt<double>(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
                            const double* b, int64_t ldb, double* c, int64_t ldc, bool acc) {
  active().dgemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <>
inline void gemm_tn<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc, bool acc) {
  active().sgemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <>
inline void gemm_tn<double>(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
                            const double* b, int64_t ldb, double* c, int64_t ldc, bool acc) {
  active().dgemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}

}  // namespace df::kern
