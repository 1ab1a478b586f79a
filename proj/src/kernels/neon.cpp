#include "judgeaudit/kernels.hpp"

#include <arm_neon.h>

namespace judgeaudit::kernels {
namespace {

double sum_neon(const double* x, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 = vaddq_f64(a0, vld1q_f64(x + i));
    a1 = vaddq_f64(a1, vld1q_f64(x + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(a0, a1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 = vfmaq_f64(a0, vld1q_f64(x + i), vld1q_f64(y + i));
    a1 = vfmaq_f64(a1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(a0, a1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_sq_dev_neon(const double* x, double mx, std::size_t n) {
  const float64x2_t m = vdupq_n_f64(mx);
  float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t d0 = vsubq_f64(vld1q_f64(x + i), m);
    const float64x2_t d1 = vsubq_f64(vld1q_f64(x + i + 2), m);
    a0 = vfmaq_f64(a0, d0, d0);
    a1 = vfmaq_f64(a1, d1, d1);
  }
  double s = vaddvq_f64(vaddq_f64(a0, a1));
  for (; i < n; ++i) {
    const double d = x[i] - mx;
    s += d * d;
  }
  return s;
}

double cross_dev_neon(const double* x, double mx, const double* y, double my, std::size_t n) {
  const float64x2_t vx = vdupq_n_f64(mx);
  const float64x2_t vy = vdupq_n_f64(my);
  float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 = vfmaq_f64(a0, vsubq_f64(vld1q_f64(x + i), vx), vsubq_f64(vld1q_f64(y + i), vy));
    a1 = vfmaq_f64(a1, vsubq_f64(vld1q_f64(x + i + 2), vx), vsubq_f64(vld1q_f64(y + i + 2), vy));
  }
  double s = vaddvq_f64(vaddq_f64(a0, a1));
  for (; i < n; ++i) s += (x[i] - mx) * (y[i] - my);
  return s;
}

double sum_sq_diff_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t d0 = vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
    const float64x2_t d1 = vsubq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    a0 = vfmaq_f64(a0, d0, d0);
    a1 = vfmaq_f64(a1, d1, d1);
  }
  double s = vaddvq_f64(vaddq_f64(a0, a1));
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& neon_table() noexcept {
  static const KernelTable t{sum_neon, dot_neon, sum_sq_dev_neon, cross_dev_neon, sum_sq_diff_neon};
  return t;
}

}  // namespace judgeaudit::kernels
