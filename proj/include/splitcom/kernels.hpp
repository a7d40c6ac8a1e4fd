#pragma once

#include <cstddef>
#include <string>

namespace splitcom::kern {

/// Flat fp32 inner loops. Every entry has a scalar reference implementation
/// and (on x86-64 with AVX2) a vectorized variant selected at runtime.
///
/// matmul / add / mul / scale / axpy vectorize across independent output
/// elements in the same accumulation order as the scalar reference, so the
/// two backends are bit-identical (the whole project compiles with
/// -ffp-contract=off). dot uses lane accumulators in the AVX2 variant and is
/// equivalence-tested at 1e-6 relative instead.
struct Ops {
    const char* name;
    // c[m,n] = a[m,k] * b[k,n]
    void (*matmul)(const float* a, const float* b, float* c, int m, int k, int n);
    // c[m,n] += a[m,k] * b[k,n]
    void (*matmul_acc)(const float* a, const float* b, float* c, int m, int k, int n);
    void (*add)(const float* x, const float* y, float* out, std::size_t n);
    void (*sub)(const float* x, const float* y, float* out, std::size_t n);
    void (*mul)(const float* x, const float* y, float* out, std::size_t n);
    void (*scale)(const float* x, float a, float* out, std::size_t n);
    // y += a * x
    void (*axpy)(float a, const float* x, float* y, std::size_t n);
    float (*dot)(const float* x, const float* y, std::size_t n);
};

const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif

enum class Backend { Auto, Scalar, Avx2 };

/// Currently active backend. Selected once at startup (AVX2 when the CPU
/// supports it, honoring SPLITCOM_KERNELS=scalar|avx2|auto), overridable for
/// tests via force_backend.
const Ops& active();
void force_backend(Backend b);
std::string active_name();

}  // namespace splitcom::kern
