#include "splitcom/ops.hpp"

#include <cmath>

#include "splitcom/kernels.hpp"

namespace splitcom::ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dims.size() != 2 || b.dims.size() != 2) throw ShapeError("matmul expects 2-d tensors");
    if (a.dims[1] != b.dims[0])
        throw ShapeError("matmul inner dims " + a.shape_str() + " x " + b.shape_str());
    const int m = a.dims[0], k = a.dims[1], n = b.dims[1];
    Tensor c({m, n});
    kern::active().matmul(a.data.data(), b.data.data(), c.data.data(), m, k, n);
    return c;
}

Tensor softmax_rows(const Tensor& x) {
    if (x.dims.size() != 2) throw ShapeError("softmax_rows expects 2-d tensor");
    const int m = x.dims[0], n = x.dims[1];
    Tensor y({m, n});
    for (int i = 0; i < m; ++i) {
        const float* row = x.data.data() + static_cast<std::size_t>(i) * n;
        float* out = y.data.data() + static_cast<std::size_t>(i) * n;
        float mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        float sum = 0.0f;
        for (int j = 0; j < n; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < n; ++j) out[j] *= inv;
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (x.dims.empty()) throw ShapeError("layer_norm expects at least 1-d tensor");
    const int d = x.dims.back();
    if (gain.numel() != d || bias.numel() != d) throw ShapeError("layer_norm gain/bias length mismatch");
    if (eps <= 0.0f) throw ConfigError("layer_norm eps must be positive");
    Tensor y(x.dims);
    const std::int64_t rows = x.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = x.data.data() + r * d;
        float* out = y.data.data() + r * d;
        float mean = 0.0f;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int j = 0; j < d; ++j) {
            float c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) out[j] = (row[j] - mean) * inv * gain.data[j] + bias.data[j];
    }
    return y;
}

float cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.dims.size() != 2) throw ShapeError("cross_entropy expects 2-d logits");
    const int n = logits.dims[0], v = logits.dims[1];
    if (static_cast<int>(targets.size()) != n) throw ShapeError("cross_entropy target count mismatch");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t < 0 || t >= v) throw IndexError("cross_entropy target " + std::to_string(t) + " out of range");
        const float* row = logits.data.data() + static_cast<std::size_t>(i) * v;
        float mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        total += std::log(sum) - (static_cast<double>(row[t]) - mx);
    }
    return static_cast<float>(total / n);
}

Tensor gaussian(Rng& rng, std::vector<int> dims) {
    Tensor t(std::move(dims));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

Tensor transpose2d(const Tensor& x) {
    if (x.dims.size() != 2) throw ShapeError("transpose2d expects 2-d tensor");
    const int m = x.dims[0], n = x.dims[1];
    Tensor y({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y.data[static_cast<std::size_t>(j) * m + i] = x.at2(i, j);
    return y;
}

float l2_norm(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data) acc += static_cast<double>(v) * v;
    return static_cast<float>(std::sqrt(acc));
}

bool all_finite(const Tensor& x) {
    for (float v : x.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace splitcom::ops
