#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitcom/serialize.hpp"

namespace splitcom::wire {

enum class MsgType : std::uint8_t {
    ActivationUpload = 0x01,
    SkipNotice = 0x02,
    GradientDown = 0x03,
    GradientSkip = 0x04,
    AdapterUpload = 0x05,
    AdapterBroadcast = 0x06,
    TrunkActivationDown = 0x07,  // s2t
    TailGradientUp = 0x08,       // t2s
    FrontGradientDown = 0x09,    // s2f
    LabelBlock = 0x0A,
    Eval = 0x0B,
    SessionHello = 0x0C,
};

const char* type_name(MsgType t);

struct Message {
    MsgType type = MsgType::ActivationUpload;
    std::uint16_t client_id = 0;
    std::uint32_t epoch = 0;
    std::uint32_t step = 0;
    ser::Bytes payload;
};

/// magic "SFC1" | type u8 | client_id u16 LE | epoch u32 LE | step u32 LE |
/// payload length u64 LE | payload
inline constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 2 + 4 + 4 + 8;

ser::Bytes frame(const Message& m);
Message parse_frame(ser::Reader& r);
Message parse_frame(const ser::Bytes& b);  // whole buffer must be one frame

/// Per-batch reuse notice: u32 interface id | u32 batch size | u64 base
/// sample id | bitmap of reused rows — 16 bytes + ceil(batch/8).
struct SkipNotice {
    std::uint32_t interface_id = 0;
    std::uint64_t base_sample_id = 0;
    std::vector<bool> reused;  // size = batch size
};

ser::Bytes encode_skip_notice(const SkipNotice& n);
SkipNotice decode_skip_notice(const ser::Bytes& payload);

/// Session opener: config hash plus the per-interface projection seeds, so
/// both ends build identical comparison caches.
struct SessionHello {
    std::uint64_t config_hash = 0;
    std::vector<std::uint64_t> projection_seeds;  // one per gated interface
};

ser::Bytes encode_session_hello(const SessionHello& h);
SessionHello decode_session_hello(const ser::Bytes& payload);

}  // namespace splitcom::wire
