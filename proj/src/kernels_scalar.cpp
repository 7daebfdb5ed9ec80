#include <cstring>

#include "depthformer/kernels.hpp"
#include "depthformer/threading.hpp"

namespace df::kern {

namespace {

constexpr int64_t kGemmGrain = 8;

// Reference kernels. nn/tn accumulate row-wise with an axpy inner loop, nt is
// a dot product per output element; each output row is owned by one thread.

template <typename T>
void gemm_nn_ref(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
                 T* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * ldc;
      if (!acc)
        for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
      const T* arow = a + i * lda;
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

template <typename T>
void gemm_nt_ref(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
                 T* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* arow = a + i * lda;
      T* crow = c + i * ldc;
      for (int64_t j = 0; j < n; ++j) {
        const T* brow = b + j * ldb;
        T s = T(0);
        for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = acc ? crow[j] + s : s;
      }
    }
  });
}

template <typename T>
void gemm_tn_ref(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb,
                 T* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * ldc;
      if (!acc)
        for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
      for (int64_t p = 0; p < k; ++p) {
        const T av = a[p * lda + i];
        const T* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void sadd_ref(int64_t n, const float* a, const float* b, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void saxpy_ref(int64_t n, float alpha, const float* x, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_ref(int64_t n, float alpha, const float* x, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void srelu_ref(int64_t n, const float* x, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void sleaky_ref(int64_t n, float slope, const float* x, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

float sdot_ref(int64_t n, const float* a, const float* b) {
  float s = 0.0f;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

float ssum_ref(int64_t n, const float* x) {
  float s = 0.0f;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

const Kernels& scalar_table() {
  static const Kernels table = {
      "scalar",
      &gemm_nn_ref<float>,
      &gemm_nt_ref<float>,
      &gemm_tn_ref<float>,
      &gemm_nn_ref<double>,
      &gemm_nt_ref<double>,
      &gemm_tn_ref<double>,
      &sadd_ref,
      &saxpy_ref,
      &sscale_ref,
      &srelu_ref,
      &sleaky_ref,
      &sdot_ref,
      &ssum_ref,
  };
  return table;
}

}  // namespace df::kern
