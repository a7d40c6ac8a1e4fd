#include "splitcom/serialize.hpp"

#include <cstring>
#include <fstream>

namespace splitcom::ser {

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(Bytes& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void Reader::need(std::size_t len) const {
    if (off_ + len > n_) throw ProtocolError("truncated payload");
}

std::uint8_t Reader::u8() {
    need(1);
    return p_[off_++];
}

std::uint16_t Reader::u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p_[off_] | (p_[off_ + 1] << 8));
    off_ += 2;
    return v;
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[off_ + static_cast<std::size_t>(i)]) << (8 * i);
    off_ += 4;
    return v;
}

std::uint64_t Reader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[off_ + static_cast<std::size_t>(i)]) << (8 * i);
    off_ += 8;
    return v;
}

float Reader::f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

const std::uint8_t* Reader::bytes(std::size_t len) {
    need(len);
    const std::uint8_t* p = p_ + off_;
    off_ += len;
    return p;
}

namespace {

void put_dims(Bytes& out, const std::vector<int>& dims) {
    put_u8(out, static_cast<std::uint8_t>(dims.size()));
    for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
}

std::vector<int> read_dims(Reader& r) {
    const int ndim = r.u8();
    std::vector<int> dims;
    dims.reserve(static_cast<std::size_t>(ndim));
    for (int i = 0; i < ndim; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0 || d > (1u << 24)) throw ProtocolError("implausible tensor dimension");
        dims.push_back(static_cast<int>(d));
    }
    return dims;
}

}  // namespace

void encode_tensor(Bytes& out, const Tensor& t) {
    put_u8(out, kDtypeF32);
    put_dims(out, t.dims);
    for (float v : t.data) put_f32(out, v);
}

void encode_tensor(Bytes& out, const comp::QuantizedTensor& q) {
    put_u8(out, kDtypeI8);
    put_f32(out, q.scale);
    put_dims(out, q.dims);
    for (std::int8_t c : q.codes) put_u8(out, static_cast<std::uint8_t>(c));
}

Tensor decode_tensor(Reader& r, std::uint8_t* dtype_out) {
    const std::uint8_t dtype = r.u8();
    if (dtype_out) *dtype_out = dtype;
    if (dtype == kDtypeF32) {
        Tensor t(read_dims(r));
        for (auto& v : t.data) v = r.f32();
        return t;
    }
    if (dtype == kDtypeI8) {
        comp::QuantizedTensor q;
        q.scale = r.f32();
        q.dims = read_dims(r);
        Tensor shape(q.dims);  // validates count
        q.codes.resize(shape.data.size());
        const std::uint8_t* raw = r.bytes(q.codes.size());
        std::memcpy(q.codes.data(), raw, q.codes.size());
        return comp::dequantize(q);
    }
    throw ProtocolError("unknown tensor dtype " + std::to_string(dtype));
}

std::size_t tensor_wire_size(const Tensor& t) { return 1 + 1 + 4 * t.dims.size() + 4 * t.data.size(); }

std::size_t tensor_wire_size(const comp::QuantizedTensor& q) { return 1 + 4 + 1 + 4 * q.dims.size() + q.codes.size(); }

Bytes encode_checkpoint(const Checkpoint& c) {
    Bytes out;
    out.insert(out.end(), {'S', 'C', 'M', 'D'});
    put_u32(out, c.version);
    put_u32(out, static_cast<std::uint32_t>(c.config.size()));
    out.insert(out.end(), c.config.begin(), c.config.end());
    put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        encode_tensor(out, t);
    }
    return out;
}

Checkpoint decode_checkpoint(const Bytes& b) {
    Reader r(b);
    const std::uint8_t* magic = r.bytes(4);
    if (std::memcmp(magic, "SCMD", 4) != 0) throw ProtocolError("bad checkpoint magic");
    Checkpoint c;
    c.version = r.u32();
    const std::uint32_t clen = r.u32();
    const std::uint8_t* cfg = r.bytes(clen);
    c.config.assign(reinterpret_cast<const char*>(cfg), clen);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = r.u32();
        const std::uint8_t* np = r.bytes(nlen);
        std::string name(reinterpret_cast<const char*>(np), nlen);
        c.tensors.emplace_back(std::move(name), decode_tensor(r));
    }
    if (r.remaining() != 0) throw ProtocolError("trailing bytes after checkpoint");
    return c;
}

void write_file(const std::string& path, const Bytes& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw StateError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw StateError("short write to " + path);
}

Bytes read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw StateError("cannot open " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    Bytes data(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(data.data()), n);
    if (!f) throw StateError("short read from " + path);
    return data;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace splitcom::ser
