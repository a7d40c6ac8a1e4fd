#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "splitcom/kernels.hpp"

// Vectorization is across output columns / elements; each output element sees
// the same mul-then-add rounding sequence as the scalar reference, so results
// match it bit for bit. No FMA here for the same reason.

namespace splitcom::kern {
namespace {

void matmul_avx2(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        int j = 0;
        for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, _mm256_setzero_ps());
        for (; j < n; ++j) crow[j] = 0.0f;
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const __m256 av = _mm256_set1_ps(arow[p]);
            const float* brow = b + static_cast<std::size_t>(p) * n;
            j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 acc = _mm256_loadu_ps(crow + j);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(av, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(crow + j, acc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * brow[j];
        }
    }
}

void matmul_acc_avx2(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const __m256 av = _mm256_set1_ps(arow[p]);
            const float* brow = b + static_cast<std::size_t>(p) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 acc = _mm256_loadu_ps(crow + j);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(av, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(crow + j, acc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * brow[j];
        }
    }
}

void add_avx2(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(const float* x, float a, float* out, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void axpy_avx2(float a, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 acc = _mm256_loadu_ps(y + i);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, acc);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float total = 0.0f;
    for (float v : lanes) total += v;
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops ops = {
        "avx2",   matmul_avx2, matmul_acc_avx2, add_avx2, sub_avx2,
        mul_avx2, scale_avx2,  axpy_avx2,       dot_avx2,
    };
    return ops;
}

}  // namespace splitcom::kern

#endif
