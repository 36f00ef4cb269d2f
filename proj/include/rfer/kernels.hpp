#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision kernels behind the convolution and head layers.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The variant is chosen once at startup from CPUID; tests can pin
// either one with use_isa(). Results of the two variants agree to rounding
// (summation order differs), so bit-exact reproducibility holds per ISA.
namespace rfer::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

// Best ISA supported by this CPU and build.
Isa detect_isa() noexcept;
Isa active_isa() noexcept;
// Returns false (and leaves the selection alone) if `isa` is unsupported.
bool use_isa(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;

// C[M x N] += A[M x K] * B[K x N]. All row-major, contiguous.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept;

// C[M x N] += A[M x K] * B[N x K]^T.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept;

// C[M x N] += A[K x M]^T * B[K x N].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) noexcept;

double dot(std::size_t n, const double* x, const double* y) noexcept;

// y += alpha * x
void axpy(std::size_t n, double alpha, const double* x, double* y) noexcept;

// Per-ISA entry points, exposed for equivalence tests.
namespace scalar {
void gemm_nn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
void gemm_nt(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
void gemm_tn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
double dot(std::size_t, const double*, const double*) noexcept;
void axpy(std::size_t, double, const double*, double*) noexcept;
}  // namespace scalar

#if defined(RFER_HAVE_AVX2)
namespace avx2 {
void gemm_nn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
void gemm_nt(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
void gemm_tn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*) noexcept;
double dot(std::size_t, const double*, const double*) noexcept;
void axpy(std::size_t, double, const double*, double*) noexcept;
}  // namespace avx2
#endif

}  // namespace rfer::kernels
