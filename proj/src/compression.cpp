#include "splitcom/compression.hpp"

#include <cfenv>
#include <cmath>

#include "splitcom/kernels.hpp"
#include "splitcom/ops.hpp"

namespace splitcom::comp {

float cosine(const Tensor& x, const Tensor& y) {
    if (x.numel() != y.numel()) throw ShapeError("cosine length mismatch");
    const auto& k = kern::active();
    const std::size_t n = x.data.size();
    const float dot = k.dot(x.data.data(), y.data.data(), n);
    const float nx = std::sqrt(k.dot(x.data.data(), x.data.data(), n));
    const float ny = std::sqrt(k.dot(y.data.data(), y.data.data(), n));
    if (nx == 0.0f || ny == 0.0f) return 0.0f;
    float s = dot / (nx * ny);
    if (s > 1.0f) s = 1.0f;
    if (s < -1.0f) s = -1.0f;
    return s;
}

ProjectionMatrix ProjectionMatrix::generate(int d_in, int d_out, std::uint64_t seed) {
    if (d_in < 1 || d_out < 1) throw ConfigError("projection dims must be positive");
    ProjectionMatrix pm;
    pm.d_in = d_in;
    pm.d_out = d_out;
    pm.seed = seed;
    Rng rng(Rng::derive(seed, 0x72706d61ull));
    pm.p = ops::gaussian(rng, {d_in, d_out});
    if (d_out <= d_in) {
        // Orthonormalize the columns (modified Gram-Schmidt in double);
        // cuts the cosine distortion of plain Gaussian projections.
        std::vector<double> col(static_cast<std::size_t>(d_in));
        std::vector<std::vector<double>> basis;
        basis.reserve(static_cast<std::size_t>(d_out));
        for (int j = 0; j < d_out; ++j) {
            for (int i = 0; i < d_in; ++i) col[i] = pm.p.data[static_cast<std::size_t>(i) * d_out + j];
            for (const auto& b : basis) {
                double proj = 0.0;
                for (int i = 0; i < d_in; ++i) proj += col[i] * b[i];
                for (int i = 0; i < d_in; ++i) col[i] -= proj * b[i];
            }
            double norm = 0.0;
            for (int i = 0; i < d_in; ++i) norm += col[i] * col[i];
            norm = std::sqrt(norm);
            if (norm < 1e-12) throw ConfigError("degenerate projection matrix draw");
            for (int i = 0; i < d_in; ++i) col[i] /= norm;
            for (int i = 0; i < d_in; ++i)
                pm.p.data[static_cast<std::size_t>(i) * d_out + j] = static_cast<float>(col[i]);
            basis.push_back(col);
        }
    } else {
        const float s = 1.0f / std::sqrt(static_cast<float>(d_out));
        for (auto& v : pm.p.data) v *= s;
    }
    return pm;
}

int default_projection_width(int d_in) { return std::max(16, d_in / 4); }

Tensor project(const ProjectionMatrix& pm, const Tensor& x) {
    if (x.numel() != pm.d_in)
        throw ShapeError("project: flattened length " + std::to_string(x.numel()) + " != d_in " +
                         std::to_string(pm.d_in));
    Tensor flat({1, pm.d_in}, x.data);
    Tensor out = ops::matmul(flat, pm.p);
    return Tensor({pm.d_out}, std::move(out.data));
}

const char* interface_name(Interface i) {
    switch (i) {
        case Interface::F2S: return "f2s";
        case Interface::S2T: return "s2t";
        case Interface::T2S: return "t2s";
        case Interface::S2F: return "s2f";
    }
    return "?";
}

GateResult gate(const ComparisonCache& sender, const CacheKey& key, const Tensor& current_compressed, float theta) {
    auto it = sender.entries.find(key);
    if (it == sender.entries.end()) return {GateDecision::Send, 0.0f};
    const float s = cosine(current_compressed, it->second);
    return {s < theta ? GateDecision::Send : GateDecision::Reuse, s};
}

void commit_transmission(ComparisonCache& sender, ReuseCache& receiver, const CacheKey& key,
                         const Tensor& full_tensor, const Tensor& compressed) {
    sender.entries[key] = compressed;
    receiver.entries[key] = full_tensor;
}

QuantizedTensor quantize_int8(const Tensor& x) {
    QuantizedTensor q;
    q.dims = x.dims;
    float maxabs = 0.0f;
    for (float v : x.data) maxabs = std::max(maxabs, std::abs(v));
    q.scale = maxabs > 0.0f ? maxabs / 127.0f : 1.0f;
    q.codes.resize(x.data.size());
    const float inv = 1.0f / q.scale;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        // nearbyint under the default rounding mode is round-half-to-even
        float r = std::nearbyint(x.data[i] * inv);
        if (r > 127.0f) r = 127.0f;
        if (r < -127.0f) r = -127.0f;
        q.codes[i] = static_cast<std::int8_t>(r);
    }
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    Tensor t(q.dims);
    for (std::size_t i = 0; i < q.codes.size(); ++i) t.data[i] = static_cast<float>(q.codes[i]) * q.scale;
    return t;
}

CacheMemoryReport cache_memory_report(const ComparisonCache& sender, const ReuseCache& receiver) {
    CacheMemoryReport r;
    for (const auto& [k, t] : sender.entries) r.sender_bytes += static_cast<std::uint64_t>(t.numel()) * 4;
    for (const auto& [k, t] : receiver.entries) r.receiver_bytes += static_cast<std::uint64_t>(t.numel()) * 4;
    return r;
}

}  // namespace splitcom::comp
