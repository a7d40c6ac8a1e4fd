#pragma once

#include <cstdint>
#include <vector>

#include "splitcom/rng.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::ops {

/// c[m,n] = a[m,k] * b[k,n], fp32 accumulation.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Normalize the last axis to zero mean / unit variance, then scale by gain
/// and shift by bias (both of length d = last dim).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

/// Mean over rows of -log softmax(logits)[target]. logits is [n, V].
float cross_entropy(const Tensor& logits, const std::vector<int>& targets);

/// i.i.d. standard normal entries from the counter stream of rng.
Tensor gaussian(Rng& rng, std::vector<int> dims);

Tensor transpose2d(const Tensor& x);

float l2_norm(const Tensor& x);

bool all_finite(const Tensor& x);

}  // namespace splitcom::ops
