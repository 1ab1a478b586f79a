#pragma once
// Reduction kernels behind every variance, correlation and residual sum in
// the library. Each kernel has a scalar reference implementation and SIMD
// variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is picked once
// at first use from the CPU feature bits; JUDGEAUDIT_SIMD=scalar|avx2|neon
// overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace judgeaudit::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i (x_i - mx)^2
  double (*sum_sq_dev)(const double* x, double mx, std::size_t n);
  // sum_i (x_i - mx)(y_i - my)
  double (*cross_dev)(const double* x, double mx, const double* y, double my, std::size_t n);
  // sum_i (x_i - y_i)^2
  double (*sum_sq_diff)(const double* x, const double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(__aarch64__)
const KernelTable& neon_table() noexcept;
#endif

/// True when the running CPU can execute the given backend.
bool backend_supported(Backend b) noexcept;
/// Selected backend; resolved lazily on first call.
Backend active_backend() noexcept;
/// Forces a backend (tests and benchmarking). Returns false if unsupported.
bool set_backend(Backend b) noexcept;
std::string_view backend_name(Backend b) noexcept;

const KernelTable& table() noexcept;

inline double sum(std::span<const double> x) { return table().sum(x.data(), x.size()); }

inline double dot(std::span<const double> x, std::span<const double> y) {
  return table().dot(x.data(), y.data(), x.size());
}

inline double sum_sq_dev(std::span<const double> x, double mx) {
  return table().sum_sq_dev(x.data(), mx, x.size());
}

inline double cross_dev(std::span<const double> x, double mx, std::span<const double> y, double my) {
  return table().cross_dev(x.data(), mx, y.data(), my, x.size());
}

inline double sum_sq_diff(std::span<const double> x, std::span<const double> y) {
  return table().sum_sq_diff(x.data(), y.data(), x.size());
}

inline double mean(std::span<const double> x) {
  return x.empty() ? 0.0 : sum(x) / static_cast<double>(x.size());
}

}  // namespace judgeaudit::kernels
