#include "rfer/kernels.hpp"

#include <atomic>

namespace rfer::kernels {
namespace {

struct Table {
  decltype(&scalar::gemm_nn) gemm_nn;
  decltype(&scalar::gemm_nt) gemm_nt;
  decltype(&scalar::gemm_tn) gemm_tn;
  decltype(&scalar::dot) dot;
  decltype(&scalar::axpy) axpy;
};

constexpr Table kScalar{scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn, scalar::dot,
                        scalar::axpy};
#if defined(RFER_HAVE_AVX2)
constexpr Table kAvx2{avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn, avx2::dot, avx2::axpy};
#endif

const Table* table_for(Isa isa) noexcept {
#if defined(RFER_HAVE_AVX2)
  if (isa == Isa::avx2) return &kAvx2;
#endif
  (void)isa;
  return &kScalar;
}

std::atomic<const Table*>& current() noexcept {
  static std::atomic<const Table*> t{table_for(detect_isa())};
  return t;
}

std::atomic<Isa>& current_isa() noexcept {
  static std::atomic<Isa> isa{detect_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::scalar) return true;
#if defined(RFER_HAVE_AVX2)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect_isa() noexcept { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() noexcept { return current_isa().load(std::memory_order_relaxed); }

bool use_isa(Isa isa) noexcept {
  if (!isa_supported(isa)) return false;
  current().store(table_for(isa), std::memory_order_relaxed);
  current_isa().store(isa, std::memory_order_relaxed);
  return true;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  current().load(std::memory_order_relaxed)->gemm_nn(m, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  current().load(std::memory_order_relaxed)->gemm_nt(m, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept {
  current().load(std::memory_order_relaxed)->gemm_tn(m, n, k, a, b, c);
}

double dot(std::size_t n, const double* x, const double* y) noexcept {
  return current().load(std::memory_order_relaxed)->dot(n, x, y);
}

void axpy(std::size_t n, double alpha, const double* x, double* y) noexcept {
  current().load(std::memory_order_relaxed)->axpy(n, alpha, x, y);
}

}  // namespace rfer::kernels
