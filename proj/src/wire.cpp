#include "splitcom/wire.hpp"

#include <cstring>

namespace splitcom::wire {

const char* type_name(MsgType t) {
    switch (t) {
        case MsgType::ActivationUpload: return "activation_upload";
        case MsgType::SkipNotice: return "skip_notice";
        case MsgType::GradientDown: return "gradient_down";
        case MsgType::GradientSkip: return "gradient_skip";
        case MsgType::AdapterUpload: return "adapter_upload";
        case MsgType::AdapterBroadcast: return "adapter_broadcast";
        case MsgType::TrunkActivationDown: return "trunk_activation_down";
        case MsgType::TailGradientUp: return "tail_gradient_up";
        case MsgType::FrontGradientDown: return "front_gradient_down";
        case MsgType::LabelBlock: return "label_block";
        case MsgType::Eval: return "eval";
        case MsgType::SessionHello: return "session_hello";
    }
    return "unknown";
}

ser::Bytes frame(const Message& m) {
    ser::Bytes out;
    out.reserve(kFrameHeaderBytes + m.payload.size());
    out.insert(out.end(), {'S', 'F', 'C', '1'});
    ser::put_u8(out, static_cast<std::uint8_t>(m.type));
    ser::put_u16(out, m.client_id);
    ser::put_u32(out, m.epoch);
    ser::put_u32(out, m.step);
    ser::put_u64(out, m.payload.size());
    out.insert(out.end(), m.payload.begin(), m.payload.end());
    return out;
}

Message parse_frame(ser::Reader& r) {
    const std::uint8_t* magic = r.bytes(4);
    if (std::memcmp(magic, "SFC1", 4) != 0) throw ProtocolError("bad frame magic");
    Message m;
    const std::uint8_t t = r.u8();
    if (t < 0x01 || t > 0x0C) throw ProtocolError("unknown message type " + std::to_string(t));
    m.type = static_cast<MsgType>(t);
    m.client_id = r.u16();
    m.epoch = r.u32();
    m.step = r.u32();
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw ProtocolError("frame length exceeds buffer");
    const std::uint8_t* p = r.bytes(static_cast<std::size_t>(len));
    m.payload.assign(p, p + len);
    return m;
}

Message parse_frame(const ser::Bytes& b) {
    ser::Reader r(b);
    Message m = parse_frame(r);
    if (r.remaining() != 0) throw ProtocolError("trailing bytes after frame");
    return m;
}

ser::Bytes encode_skip_notice(const SkipNotice& n) {
    ser::Bytes out;
    ser::put_u32(out, n.interface_id);
    ser::put_u32(out, static_cast<std::uint32_t>(n.reused.size()));
    ser::put_u64(out, n.base_sample_id);
    const std::size_t nbytes = (n.reused.size() + 7) / 8;
    for (std::size_t i = 0; i < nbytes; ++i) {
        std::uint8_t b = 0;
        for (std::size_t j = 0; j < 8 && i * 8 + j < n.reused.size(); ++j)
            if (n.reused[i * 8 + j]) b |= static_cast<std::uint8_t>(1u << j);
        ser::put_u8(out, b);
    }
    return out;
}

SkipNotice decode_skip_notice(const ser::Bytes& payload) {
    ser::Reader r(payload);
    SkipNotice n;
    n.interface_id = r.u32();
    const std::uint32_t batch = r.u32();
    n.base_sample_id = r.u64();
    const std::size_t nbytes = (batch + 7) / 8;
    const std::uint8_t* bits = r.bytes(nbytes);
    n.reused.resize(batch);
    for (std::uint32_t i = 0; i < batch; ++i) n.reused[i] = (bits[i / 8] >> (i % 8)) & 1u;
    if (r.remaining() != 0) throw ProtocolError("trailing bytes after skip notice");
    return n;
}

ser::Bytes encode_session_hello(const SessionHello& h) {
    ser::Bytes out;
    ser::put_u64(out, h.config_hash);
    ser::put_u32(out, static_cast<std::uint32_t>(h.projection_seeds.size()));
    for (std::uint64_t s : h.projection_seeds) ser::put_u64(out, s);
    return out;
}

SessionHello decode_session_hello(const ser::Bytes& payload) {
    ser::Reader r(payload);
    SessionHello h;
    h.config_hash = r.u64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) h.projection_seeds.push_back(r.u64());
    if (r.remaining() != 0) throw ProtocolError("trailing bytes after session hello");
    return h;
}

}  // namespace splitcom::wire
