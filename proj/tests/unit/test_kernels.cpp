#include <doctest.h>

#include "judgeaudit/kernels.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace judgeaudit::kernels;

namespace {

std::vector<const KernelTable*> simd_tables() {
  std::vector<const KernelTable*> out;
#if defined(__x86_64__) || defined(_M_X64)
  if (backend_supported(Backend::Avx2)) out.push_back(&avx2_table());
#endif
#if defined(__aarch64__)
  if (backend_supported(Backend::Neon)) out.push_back(&neon_table());
#endif
  return out;
}

// Reassociation changes rounding, so compare against the scale of the terms.
void check_close(double a, double b, double scale) { CHECK(std::abs(a - b) <= 1e-12 * (scale + 1.0)); }

}  // namespace

TEST_CASE("scalar kernels against naive loops") {
  const auto& s = scalar_table();
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
  const std::vector<double> y{2, 0, -1, 3, 1, 1, 2};
  CHECK(s.sum(x.data(), x.size()) == 28.0);
  CHECK(s.dot(x.data(), y.data(), x.size()) == 2 + 0 - 3 + 12 + 5 + 6 + 14);
  CHECK(s.sum_sq_dev(x.data(), 4.0, x.size()) == 28.0);
  CHECK(s.sum_sq_diff(x.data(), y.data(), x.size()) == 1 + 4 + 16 + 1 + 16 + 25 + 25);
  CHECK(s.cross_dev(x.data(), 4.0, y.data(), 1.0, x.size()) == doctest::Approx(-3 * 1 + -2 * -1 + -1 * -2 + 0 + 0 + 0 + 3 * 1));
  CHECK(s.sum(x.data(), 0) == 0.0);
}

TEST_CASE("SIMD kernels match the scalar reference for every length and alignment") {
  const auto& ref = scalar_table();
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (const auto* t : simd_tables()) {
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 100u, 1001u}) {
      for (std::size_t offset : {0u, 1u}) {
        std::vector<double> bx(n + 1), by(n + 1);
        for (auto& v : bx) v = nd(rng) + 2.0;
        for (auto& v : by) v = nd(rng) - 1.0;
        const double* x = bx.data() + offset;
        const double* y = by.data() + offset;
        double scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) scale += std::abs(x[i]) * (1.0 + std::abs(y[i]));
        check_close(t->sum(x, n), ref.sum(x, n), scale);
        check_close(t->dot(x, y, n), ref.dot(x, y, n), scale * 10);
        check_close(t->sum_sq_dev(x, 0.7, n), ref.sum_sq_dev(x, 0.7, n), scale * 10);
        check_close(t->cross_dev(x, 0.7, y, -0.3, n), ref.cross_dev(x, 0.7, y, -0.3, n), scale * 10);
        check_close(t->sum_sq_diff(x, y, n), ref.sum_sq_diff(x, y, n), scale * 10);
      }
    }
  }
}

TEST_CASE("backend selection") {
  CHECK(backend_supported(Backend::Scalar));
  const Backend before = active_backend();
  REQUIRE(set_backend(Backend::Scalar));
  CHECK(active_backend() == Backend::Scalar);
  CHECK(&table() == &scalar_table());
  CHECK(backend_name(Backend::Scalar) == "scalar");
#if defined(__x86_64__) || defined(_M_X64)
  CHECK_FALSE(set_backend(Backend::Neon));
#endif
  CHECK(set_backend(before));
}
