#include "judgeaudit/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace judgeaudit::kernels {
namespace {

Backend detect() noexcept {
  if (const char* forced = std::getenv("JUDGEAUDIT_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2" && backend_supported(Backend::Avx2)) return Backend::Avx2;
    if (name == "neon" && backend_supported(Backend::Neon)) return Backend::Neon;
  }
  if (backend_supported(Backend::Avx2)) return Backend::Avx2;
  if (backend_supported(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

std::atomic<const KernelTable*> g_table{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

const KernelTable& table_for(Backend b) noexcept {
  switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::Avx2:
      return avx2_table();
#endif
#if defined(__aarch64__)
    case Backend::Neon:
      return neon_table();
#endif
    default:
      return scalar_table();
  }
}

}  // namespace

bool backend_supported(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() noexcept {
  table();
  return g_backend.load(std::memory_order_acquire);
}

bool set_backend(Backend b) noexcept {
  if (!backend_supported(b)) return false;
  g_backend.store(b, std::memory_order_release);
  g_table.store(&table_for(b), std::memory_order_release);
  return true;
}

std::string_view backend_name(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& table() noexcept {
  const KernelTable* t = g_table.load(std::memory_order_acquire);
  if (t == nullptr) {
    const Backend b = detect();
    g_backend.store(b, std::memory_order_release);
    t = &table_for(b);
    g_table.store(t, std::memory_order_release);
  }
  return *t;
}

}  // namespace judgeaudit::kernels
