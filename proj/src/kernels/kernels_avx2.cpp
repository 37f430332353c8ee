// AVX2 + FMA variants (4 doubles per register). Compiled with -mavx2 -mfma and
// only ever called after a runtime CPU check.

#include <immintrin.h>

#include "cirl/kernels.hpp"

namespace cirl::kernels::avx2 {

namespace {

constexpr std::size_t kLane = 4;
constexpr std::size_t kBlock = 4 * kLane;

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// c_row[0:n] += sum_p coef(p) * b[p * b_stride + 0:n], with coef(p) = a[p * a_stride]
inline void row_accumulate(std::size_t n, std::size_t k, const double* a, std::size_t a_stride,
                           const double* b, double* c_row, std::size_t b_stride) {
  std::size_t j = 0;
  for (; j + kBlock <= n; j += kBlock) {
    __m256d c0 = _mm256_loadu_pd(c_row + j);
    __m256d c1 = _mm256_loadu_pd(c_row + j + 4);
    __m256d c2 = _mm256_loadu_pd(c_row + j + 8);
    __m256d c3 = _mm256_loadu_pd(c_row + j + 12);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(a[p * a_stride]);
      const double* bp = b + p * b_stride + j;
      c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), c0);
      c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), c1);
      c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 8), c2);
      c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 12), c3);
    }
    _mm256_storeu_pd(c_row + j, c0);
    _mm256_storeu_pd(c_row + j + 4, c1);
    _mm256_storeu_pd(c_row + j + 8, c2);
    _mm256_storeu_pd(c_row + j + 12, c3);
  }
  for (; j + kLane <= n; j += kLane) {
    __m256d c0 = _mm256_loadu_pd(c_row + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(a[p * a_stride]), _mm256_loadu_pd(b + p * b_stride + j), c0);
    }
    _mm256_storeu_pd(c_row + j, c0);
  }
  for (; j < n; ++j) {
    double acc = c_row[j];
    for (std::size_t p = 0; p < k; ++p) acc += a[p * a_stride] * b[p * b_stride + j];
    c_row[j] = acc;
  }
}

// Two rows share each load of B. Every output element still accumulates its
// products in the same order as row_accumulate, so rows stay independent.
inline void row_pair_accumulate(std::size_t n, std::size_t k, const double* a0, const double* a1,
                                std::size_t a_stride, const double* b, double* c0_row,
                                double* c1_row) {
  std::size_t j = 0;
  for (; j + kBlock <= n; j += kBlock) {
    __m256d x0 = _mm256_loadu_pd(c0_row + j), x1 = _mm256_loadu_pd(c0_row + j + 4);
    __m256d x2 = _mm256_loadu_pd(c0_row + j + 8), x3 = _mm256_loadu_pd(c0_row + j + 12);
    __m256d y0 = _mm256_loadu_pd(c1_row + j), y1 = _mm256_loadu_pd(c1_row + j + 4);
    __m256d y2 = _mm256_loadu_pd(c1_row + j + 8), y3 = _mm256_loadu_pd(c1_row + j + 12);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d u = _mm256_set1_pd(a0[p * a_stride]);
      const __m256d v = _mm256_set1_pd(a1[p * a_stride]);
      const double* bp = b + p * n + j;
      const __m256d b0 = _mm256_loadu_pd(bp), b1 = _mm256_loadu_pd(bp + 4);
      const __m256d b2 = _mm256_loadu_pd(bp + 8), b3 = _mm256_loadu_pd(bp + 12);
      x0 = _mm256_fmadd_pd(u, b0, x0);
      x1 = _mm256_fmadd_pd(u, b1, x1);
      x2 = _mm256_fmadd_pd(u, b2, x2);
      x3 = _mm256_fmadd_pd(u, b3, x3);
      y0 = _mm256_fmadd_pd(v, b0, y0);
      y1 = _mm256_fmadd_pd(v, b1, y1);
      y2 = _mm256_fmadd_pd(v, b2, y2);
      y3 = _mm256_fmadd_pd(v, b3, y3);
    }
    _mm256_storeu_pd(c0_row + j, x0);
    _mm256_storeu_pd(c0_row + j + 4, x1);
    _mm256_storeu_pd(c0_row + j + 8, x2);
    _mm256_storeu_pd(c0_row + j + 12, x3);
    _mm256_storeu_pd(c1_row + j, y0);
    _mm256_storeu_pd(c1_row + j + 4, y1);
    _mm256_storeu_pd(c1_row + j + 8, y2);
    _mm256_storeu_pd(c1_row + j + 12, y3);
  }
  if (j < n) {
    row_accumulate(n - j, k, a0, a_stride, b + j, c0_row + j, n);
    row_accumulate(n - j, k, a1, a_stride, b + j, c1_row + j, n);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    row_pair_accumulate(n, k, a + i * k, a + (i + 1) * k, 1, b, c + i * n, c + (i + 1) * n);
  }
  for (; i < m; ++i) row_accumulate(n, k, a + i * k, 1, b, c + i * n, n);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    row_pair_accumulate(n, k, a + i, a + i + 1, m, b, c + i * n, c + (i + 1) * n);
  }
  for (; i < m; ++i) row_accumulate(n, k, a + i, m, b, c + i * n, n);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 2 * kLane <= n; i += 2 * kLane) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + kLane <= n; i += kLane) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// One gemm_nt output, reduced in exactly the order the four-column block uses,
// so a column's value does not depend on whether it lands in a block.
double nt_column(const double* ar, const double* br, std::size_t k, std::size_t kv) {
  __m256d s = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kv; p += kLane) {
    s = _mm256_fmadd_pd(_mm256_loadu_pd(ar + p), _mm256_loadu_pd(br + p), s);
  }
  alignas(32) double l[4];
  _mm256_store_pd(l, s);
  double sum = (l[0] + l[1]) + (l[2] + l[3]);
  if (kv < k) {
    double tail = 0.0;
    for (std::size_t p = kv; p < k; ++p) tail += ar[p] * br[p];
    sum += tail;
  }
  return sum;
}

// Four output columns at a time.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  const std::size_t kv = k - k % kLane;
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < kv; p += kLane) {
        const __m256d av = _mm256_loadu_pd(ar + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      const __m256d h01 = _mm256_hadd_pd(s0, s1);
      const __m256d h23 = _mm256_hadd_pd(s2, s3);
      __m256d sum = _mm256_add_pd(_mm256_permute2f128_pd(h01, h23, 0x20),
                                  _mm256_permute2f128_pd(h01, h23, 0x31));
      if (kv < k) {
        alignas(32) double tail[4] = {0.0, 0.0, 0.0, 0.0};
        for (std::size_t p = kv; p < k; ++p) {
          tail[0] += ar[p] * b0[p];
          tail[1] += ar[p] * b1[p];
          tail[2] += ar[p] * b2[p];
          tail[3] += ar[p] * b3[p];
        }
        sum = _mm256_add_pd(sum, _mm256_load_pd(tail));
      }
      _mm256_storeu_pd(cr + j, _mm256_add_pd(_mm256_loadu_pd(cr + j), sum));
    }
    for (; j < n; ++j) cr[j] += nt_column(ar, b + j * k, k, kv);
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLane <= n; i += kLane) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable kTable{gemm_nn, gemm_nt, gemm_tn, dot, axpy};

}  // namespace cirl::kernels::avx2
