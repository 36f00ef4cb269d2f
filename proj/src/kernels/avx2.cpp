// Compiled with -mavx2 -mfma. Only reached when CPUID reports both.
#include <immintrin.h>

#include "rfer/kernels.hpp"

namespace rfer::kernels::avx2 {
namespace {

inline double hsum(__m256d v) noexcept {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// C[m x n] += A * B[k x n], where A(i, p) = a[i * ars + p * acs].
// Register block: 4 rows x 8 columns of C held in eight ymm accumulators.
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
                  std::size_t acs, const double* b, double* c) noexcept {
  const std::size_t n8 = n & ~std::size_t{7};
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const double* ap = a + i * ars + p * acs;
        __m256d av = _mm256_broadcast_sd(ap);
        r00 = _mm256_fmadd_pd(av, b0, r00);
        r01 = _mm256_fmadd_pd(av, b1, r01);
        av = _mm256_broadcast_sd(ap + ars);
        r10 = _mm256_fmadd_pd(av, b0, r10);
        r11 = _mm256_fmadd_pd(av, b1, r11);
        av = _mm256_broadcast_sd(ap + 2 * ars);
        r20 = _mm256_fmadd_pd(av, b0, r20);
        r21 = _mm256_fmadd_pd(av, b1, r21);
        av = _mm256_broadcast_sd(ap + 3 * ars);
        r30 = _mm256_fmadd_pd(av, b0, r30);
        r31 = _mm256_fmadd_pd(av, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    for (std::size_t r = 0; r < 4; ++r) {
      double* cr = c + (i + r) * n;
      for (std::size_t j = n8; j < n; ++j) {
        double s = cr[j];
        for (std::size_t p = 0; p < k; ++p) s += a[(i + r) * ars + p * acs] * b[p * n + j];
        cr[j] = s;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d r0 = _mm256_loadu_pd(ci + j), r1 = _mm256_loadu_pd(ci + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(a + i * ars + p * acs);
        r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j), r0);
        r1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4), r1);
      }
      _mm256_storeu_pd(ci + j, r0), _mm256_storeu_pd(ci + j + 4, r1);
    }
    for (std::size_t j = n8; j < n; ++j) {
      double s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * ars + p * acs] * b[p * n + j];
      ci[j] = s;
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  gemm_strided(m, n, k, a, k, 1, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  gemm_strided(m, n, k, a, 1, m, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  const std::size_t k4 = k & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (std::size_t p = k4; p < k; ++p) {
        t0 += ai[p] * b0[p];
        t1 += ai[p] * b1[p];
        t2 += ai[p] * b2[p];
        t3 += ai[p] * b3[p];
      }
      double* ci = c + i * n + j;
      ci[0] += t0, ci[1] += t1, ci[2] += t2, ci[3] += t3;
    }
    for (; j < n; ++j) c[i * n + j] += dot(k, ai, b + j * k);
  }
}

double dot(std::size_t n, const double* x, const double* y) noexcept {
  const std::size_t n8 = n & ~std::size_t{7};
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  for (std::size_t i = 0; i < n8; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (std::size_t i = n8; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) noexcept {
  const std::size_t n4 = n & ~std::size_t{3};
  const __m256d av = _mm256_set1_pd(alpha);
  for (std::size_t i = 0; i < n4; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (std::size_t i = n4; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace rfer::kernels::avx2
