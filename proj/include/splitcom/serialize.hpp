#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "splitcom/compression.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::ser {

using Bytes = std::vector<std::uint8_t>;

// little-endian append
void put_u8(Bytes& out, std::uint8_t v);
void put_u16(Bytes& out, std::uint16_t v);
void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
void put_f32(Bytes& out, float v);

/// Bounds-checked little-endian cursor; truncation is a ProtocolError.
class Reader {
   public:
    Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
    explicit Reader(const Bytes& b) : Reader(b.data(), b.size()) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    const std::uint8_t* bytes(std::size_t len);
    std::size_t remaining() const { return n_ - off_; }
    std::size_t offset() const { return off_; }

   private:
    void need(std::size_t len) const;
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t off_ = 0;
};

// Tensor payload: dtype byte (0 = f32, 2 = i8 with leading f32 scale) |
// ndim u8 | dims u32 LE each | raw LE data.
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeI8 = 2;

void encode_tensor(Bytes& out, const Tensor& t);
void encode_tensor(Bytes& out, const comp::QuantizedTensor& q);

/// Decodes either dtype; INT8 payloads come back dequantized. dtype_out, when
/// non-null, reports which encoding was on the wire.
Tensor decode_tensor(Reader& r, std::uint8_t* dtype_out = nullptr);

/// Exact wire size of a tensor payload without encoding it.
std::size_t tensor_wire_size(const Tensor& t);
std::size_t tensor_wire_size(const comp::QuantizedTensor& q);

/// Versioned checkpoint container: magic "SCMD", u32 version, config blob,
/// then named tensors. Used for model, adapter, and agent checkpoints.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config;
    std::vector<std::pair<std::string, Tensor>> tensors;  // order preserved
};

Bytes encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const Bytes& b);

void write_file(const std::string& path, const Bytes& data);
Bytes read_file(const std::string& path);

/// FNV-1a 64-bit over a string; pins the resolved config in SessionHello.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace splitcom::ser
