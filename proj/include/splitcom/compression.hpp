#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splitcom/rng.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::comp {

/// Cosine similarity clamped to [-1, 1]. If either vector has zero norm the
/// similarity is defined as 0, which forces a transmission.
float cosine(const Tensor& x, const Tensor& y);

/// Random projection used to shrink comparison-cache entries. Columns are an
/// orthonormalized Gaussian draw; one matrix per interface per run.
struct ProjectionMatrix {
    int d_in = 0;
    int d_out = 0;
    std::uint64_t seed = 0;
    Tensor p;  // [d_in, d_out]

    static ProjectionMatrix generate(int d_in, int d_out, std::uint64_t seed);
};

/// Default compressed width: max(16, d_in / 4).
int default_projection_width(int d_in);

/// Projects the flattened tensor (length must equal d_in).
Tensor project(const ProjectionMatrix& pm, const Tensor& x);

enum class Interface : std::uint8_t { F2S = 0, S2T = 1, T2S = 2, S2F = 3 };
const char* interface_name(Interface i);

struct CacheKey {
    int client_id = 0;
    int sample_id = 0;
    Interface interface_id = Interface::F2S;

    bool operator<(const CacheKey& o) const {
        if (client_id != o.client_id) return client_id < o.client_id;
        if (sample_id != o.sample_id) return sample_id < o.sample_id;
        return interface_id < o.interface_id;
    }
    bool operator==(const CacheKey& o) const {
        return client_id == o.client_id && sample_id == o.sample_id && interface_id == o.interface_id;
    }
};

/// Sender side: RP-compressed comparison vectors.
struct ComparisonCache {
    std::map<CacheKey, Tensor> entries;
};

/// Receiver side: full tensors for actual reuse.
struct ReuseCache {
    std::map<CacheKey, Tensor> entries;
};

enum class GateDecision { Send, Reuse };

struct GateResult {
    GateDecision decision;
    float similarity;  // 0 when no cache entry exists (cold start)
};

/// Send iff no cached entry exists or similarity < theta; ties reuse.
/// Caches are not touched here; commit_transmission does that.
GateResult gate(const ComparisonCache& sender, const CacheKey& key, const Tensor& current_compressed, float theta);

/// Atomically records one transmission on both sides of the link. full_tensor
/// is what the receiver will reuse (the dequantized payload when INT8 is on);
/// compressed is its projection.
void commit_transmission(ComparisonCache& sender, ReuseCache& receiver, const CacheKey& key,
                         const Tensor& full_tensor, const Tensor& compressed);

/// Symmetric INT8, zero-point 0, scale = max|x|/127 (1 for an all-zero
/// tensor), round-half-to-even.
struct QuantizedTensor {
    std::vector<int> dims;
    float scale = 1.0f;
    std::vector<std::int8_t> codes;
};

QuantizedTensor quantize_int8(const Tensor& x);
Tensor dequantize(const QuantizedTensor& q);

struct CacheMemoryReport {
    std::uint64_t sender_bytes = 0;
    std::uint64_t receiver_bytes = 0;
};

/// Exact fp32 byte totals of the two cache types.
CacheMemoryReport cache_memory_report(const ComparisonCache& sender, const ReuseCache& receiver);

}  // namespace splitcom::comp
