// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "judgeaudit/kernels.hpp"

#include <immintrin.h>

namespace judgeaudit::kernels {
namespace {

// Four 4-lane accumulators: 16 doubles per iteration hide the FMA latency.
inline double hsum(__m256d a, __m256d b, __m256d c, __m256d d) {
  const __m256d s = _mm256_add_pd(_mm256_add_pd(a, b), _mm256_add_pd(c, d));
  const __m128d lo = _mm256_castpd256_pd128(s);
  const __m128d hi = _mm256_extractf128_pd(s, 1);
  const __m128d v = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(v, _mm_unpackhi_pd(v, v)));
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
    a1 = _mm256_add_pd(a1, _mm256_loadu_pd(x + i + 4));
    a2 = _mm256_add_pd(a2, _mm256_loadu_pd(x + i + 8));
    a3 = _mm256_add_pd(a3, _mm256_loadu_pd(x + i + 12));
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
  double s = hsum(a0, a1, a2, a3);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
    a2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), a2);
    a3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), a3);
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double s = hsum(a0, a1, a2, a3);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_sq_dev_avx2(const double* x, double mx, std::size_t n) {
  const __m256d m = _mm256_set1_pd(mx);
  __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), m);
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), m);
    const __m256d d2 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 8), m);
    const __m256d d3 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 12), m);
    a0 = _mm256_fmadd_pd(d0, d0, a0);
    a1 = _mm256_fmadd_pd(d1, d1, a1);
    a2 = _mm256_fmadd_pd(d2, d2, a2);
    a3 = _mm256_fmadd_pd(d3, d3, a3);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), m);
    a0 = _mm256_fmadd_pd(d, d, a0);
  }
  double s = hsum(a0, a1, a2, a3);
  for (; i < n; ++i) {
    const double d = x[i] - mx;
    s += d * d;
  }
  return s;
}

double cross_dev_avx2(const double* x, double mx, const double* y, double my, std::size_t n) {
  const __m256d vx = _mm256_set1_pd(mx);
  const __m256d vy = _mm256_set1_pd(my);
  __m256d a0 = _mm256_setzero_pd(), a1 = a0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vx),
                         _mm256_sub_pd(_mm256_loadu_pd(y + i), vy), a0);
    a1 = _mm256_fmadd_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i + 4), vx),
                         _mm256_sub_pd(_mm256_loadu_pd(y + i + 4), vy), a1);
  }
  for (; i + 4 <= n; i += 4) {
    a0 = _mm256_fmadd_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vx),
                         _mm256_sub_pd(_mm256_loadu_pd(y + i), vy), a0);
  }
  const __m256d z = _mm256_setzero_pd();
  double s = hsum(a0, a1, z, z);
  for (; i < n; ++i) s += (x[i] - mx) * (y[i] - my);
  return s;
}

double sum_sq_diff_avx2(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = a0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    a0 = _mm256_fmadd_pd(d0, d0, a0);
    a1 = _mm256_fmadd_pd(d1, d1, a1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    a0 = _mm256_fmadd_pd(d, d, a0);
  }
  const __m256d z = _mm256_setzero_pd();
  double s = hsum(a0, a1, z, z);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& avx2_table() noexcept {
  static const KernelTable t{sum_avx2, dot_avx2, sum_sq_dev_avx2, cross_dev_avx2, sum_sq_diff_avx2};
  return t;
}

}  // namespace judgeaudit::kernels
