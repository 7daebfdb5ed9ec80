#include <immintrin.h>

#include "depthformer/kernels.hpp"
#include "depthformer/threading.hpp"

namespace df::kern {

namespace {

constexpr int64_t kGemmGrain = 8;

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline double hsum4d(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// One row of C: c[0..n) (+)= sum_p a_row[p] * b[p*ldb + 0..n), 16 cols a time.
inline void snn_row(int64_t n, int64_t k, const float* arow, const float* b, int64_t ldb,
                    float* crow, bool acc) {
  int64_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 c0 = acc ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
    __m256 c1 = acc ? _mm256_loadu_ps(crow + j + 8) : _mm256_setzero_ps();
    for (int64_t p = 0; p < k; ++p) {
      const __m256 av = _mm256_set1_ps(arow[p]);
      const float* brow = b + p * ldb + j;
      c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), c0);
      c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), c1);
    }
    _mm256_storeu_ps(crow + j, c0);
    _mm256_storeu_ps(crow + j + 8, c1);
  }
  for (; j + 8 <= n; j += 8) {
    __m256 c0 = acc ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
    for (int64_t p = 0; p < k; ++p)
      c0 = _mm256_fmadd_ps(_mm256_set1_ps(arow[p]), _mm256_loadu_ps(b + p * ldb + j), c0);
    _mm256_storeu_ps(crow + j, c0);
  }
  for (; j < n; ++j) {
    float s = acc ? crow[j] : 0.0f;
    for (int64_t p = 0; p < k; ++p) s += arow[p] * b[p * ldb + j];
    crow[j] = s;
  }
}

void sgemm_nn_avx2(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    int64_t i = i0;
    // 2-row blocks reuse each loaded B row once more.
    for (; i + 2 <= i1; i += 2) {
      const float* a0 = a + i * lda;
      const float* a1 = a0 + lda;
      float* c0r = c + i * ldc;
      float* c1r = c0r + ldc;
      int64_t j = 0;
      for (; j + 16 <= n; j += 16) {
        __m256 c00 = acc ? _mm256_loadu_ps(c0r + j) : _mm256_setzero_ps();
        __m256 c01 = acc ? _mm256_loadu_ps(c0r + j + 8) : _mm256_setzero_ps();
        __m256 c10 = acc ? _mm256_loadu_ps(c1r + j) : _mm256_setzero_ps();
        __m256 c11 = acc ? _mm256_loadu_ps(c1r + j + 8) : _mm256_setzero_ps();
        for (int64_t p = 0; p < k; ++p) {
          const float* brow = b + p * ldb + j;
          const __m256 b0 = _mm256_loadu_ps(brow);
          const __m256 b1 = _mm256_loadu_ps(brow + 8);
          const __m256 av0 = _mm256_set1_ps(a0[p]);
          const __m256 av1 = _mm256_set1_ps(a1[p]);
          c00 = _mm256_fmadd_ps(av0, b0, c00);
          c01 = _mm256_fmadd_ps(av0, b1, c01);
          c10 = _mm256_fmadd_ps(av1, b0, c10);
          c11 = _mm256_fmadd_ps(av1, b1, c11);
        }
        _mm256_storeu_ps(c0r + j, c00);
        _mm256_storeu_ps(c0r + j + 8, c01);
        _mm256_storeu_ps(c1r + j, c10);
        _mm256_storeu_ps(c1r + j + 8, c11);
      }
      if (j < n) {
        snn_row(n - j, k, a0, b + j, ldb, c0r + j, acc);
        snn_row(n - j, k, a1, b + j, ldb, c1r + j, acc);
      }
    }
    for (; i < i1; ++i) snn_row(n, k, a + i * lda, b, ldb, c + i * ldc, acc);
  });
}

void sgemm_nt_avx2(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const float* arow = a + i * lda;
      float* crow = c + i * ldc;
      for (int64_t j = 0; j < n; ++j) {
        const float* brow = b + j * ldb;
        __m256 s0 = _mm256_setzero_ps();
        __m256 s1 = _mm256_setzero_ps();
        int64_t p = 0;
        for (; p + 16 <= k; p += 16) {
          s0 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), s0);
          s1 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p + 8), _mm256_loadu_ps(brow + p + 8), s1);
        }
        for (; p + 8 <= k; p += 8)
          s0 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), s0);
        float s = hsum8(_mm256_add_ps(s0, s1));
        for (; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = acc ? crow[j] + s : s;
      }
    }
  });
}

void sgemm_tn_avx2(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                   int64_t ldb, float* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      float* crow = c + i * ldc;
      if (!acc)
        for (int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
      for (int64_t p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(a[p * lda + i]);
        const float avs = a[p * lda + i];
        const float* brow = b + p * ldb;
        int64_t j = 0;
        for (; j + 8 <= n; j += 8)
          _mm256_storeu_ps(crow + j,
                           _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
        for (; j < n; ++j) crow[j] += avs * brow[j];
      }
    }
  });
}

// Double-precision variants, 4 lanes wide. Used by the 64-bit verification
// paths, so throughput matters less than in f32 but the layout is the same.

inline void dnn_row(int64_t n, int64_t k, const double* arow, const double* b, int64_t ldb,
                    double* crow, bool acc) {
  int64_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = acc ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
    for (int64_t p = 0; p < k; ++p)
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(arow[p]), _mm256_loadu_pd(b + p * ldb + j), c0);
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) {
    double s = acc ? crow[j] : 0.0;
    for (int64_t p = 0; p < k; ++p) s += arow[p] * b[p * ldb + j];
    crow[j] = s;
  }
}

void dgemm_nn_avx2(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dnn_row(n, k, a + i * lda, b, ldb, c + i * ldc, acc);
  });
}

void dgemm_nt_avx2(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const double* arow = a + i * lda;
      double* crow = c + i * ldc;
      for (int64_t j = 0; j < n; ++j) {
        const double* brow = b + j * ldb;
        __m256d s0 = _mm256_setzero_pd();
        int64_t p = 0;
        for (; p + 4 <= k; p += 4)
          s0 = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p), s0);
        double s = hsum4d(s0);
        for (; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = acc ? crow[j] + s : s;
      }
    }
  });
}

void dgemm_tn_avx2(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b,
                   int64_t ldb, double* c, int64_t ldc, bool acc) {
  parallel_for(m, kGemmGrain, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      double* crow = c + i * ldc;
      if (!acc)
        for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const double avs = a[p * lda + i];
        const __m256d av = _mm256_set1_pd(avs);
        const double* brow = b + p * ldb;
        int64_t j = 0;
        for (; j + 4 <= n; j += 4)
          _mm256_storeu_pd(crow + j,
                           _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
        for (; j < n; ++j) crow[j] += avs * brow[j];
      }
    }
  });
}

void sadd_avx2(int64_t n, const float* a, const float* b, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void saxpy_avx2(int64_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_avx2(int64_t n, float alpha, const float* x, float* out) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void srelu_avx2(int64_t n, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void sleaky_avx2(int64_t n, float slope, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 sv = _mm256_set1_ps(slope);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 neg = _mm256_mul_ps(sv, v);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(v, neg, _mm256_cmp_ps(v, zero, _CMP_LE_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

float sdot_avx2(int64_t n, const float* a, const float* b) {
  __m256 s = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    s = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s);
  float r = hsum8(s);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

float ssum_avx2(int64_t n, const float* x) {
  __m256 s = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) s = _mm256_add_ps(s, _mm256_loadu_ps(x + i));
  float r = hsum8(s);
  for (; i < n; ++i) r += x[i];
  return r;
}

}  // namespace

const Kernels* avx2_table_impl() {
  static const Kernels table = {
      "avx2",
      &sgemm_nn_avx2,
      &sgemm_nt_avx2,
      &sgemm_tn_avx2,
      &dgemm_nn_avx2,
      &dgemm_nt_avx2,
      &dgemm_tn_avx2,
      &sadd_avx2,
      &saxpy_avx2,
      &sscale_avx2,
      &srelu_avx2,
      &sleaky_avx2,
      &sdot_avx2,
      &ssum_avx2,
  };
  return &table;
}

}  // namespace df::kern
