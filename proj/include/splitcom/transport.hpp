#pragma once

#include <deque>
#include <map>
#include <string>

#include "splitcom/wire.hpp"

namespace splitcom::net {

enum class Direction : std::uint8_t { Uplink = 0, Downlink = 1 };
const char* direction_name(Direction d);

struct LedgerEntry {
    std::uint64_t messages = 0;
    std::uint64_t framed_bytes = 0;   // payload + frame header
    std::uint64_t payload_bytes = 0;  // tensor/notice content only

    bool operator==(const LedgerEntry&) const = default;
};

/// Exact byte accounting per (direction, message type). Everything on the
/// wire lands here; latency derives from framed bytes.
struct CommLedger {
    std::map<std::pair<Direction, wire::MsgType>, LedgerEntry> entries;

    void record(Direction d, wire::MsgType t, std::uint64_t framed_bytes, std::uint64_t payload_bytes);
    void merge(const CommLedger& other);

    std::uint64_t framed_bytes(Direction d) const;
    std::uint64_t payload_bytes(Direction d) const;
    std::uint64_t framed_bytes(Direction d, wire::MsgType t) const;
    std::uint64_t payload_bytes(Direction d, wire::MsgType t) const;
    std::uint64_t messages(Direction d, wire::MsgType t) const;
    std::uint64_t total_framed_bytes() const;

    /// Stable text dump (one line per entry) for golden comparisons.
    std::string dump() const;

    bool operator==(const CommLedger&) const = default;
};

/// 5G averages from the latency model: 30.6 Mbps up, 166.8 Mbps down.
struct RateModel {
    double uplink_bps = 30.6e6;
    double downlink_bps = 166.8e6;
};

struct LatencyBreakdown {
    double uplink_s = 0.0;
    double downlink_s = 0.0;
    double total_s = 0.0;
};

/// bytes * 8 / rate per direction.
LatencyBreakdown estimate_latency(const CommLedger& ledger, const RateModel& rates);

/// One-direction in-process channel. send() frames the message and records it
/// in the sender ledger; recv() parses and records in the receiver ledger, so
/// conservation (sender == receiver per type) is checkable after a run.
class Link {
   public:
    explicit Link(Direction d) : dir_(d) {}

    void send(const wire::Message& m);
    wire::Message recv();
    bool empty() const { return queue_.empty(); }
    std::size_t pending() const { return queue_.size(); }
    Direction direction() const { return dir_; }

    const CommLedger& tx_ledger() const { return tx_; }
    const CommLedger& rx_ledger() const { return rx_; }

   private:
    Direction dir_;
    std::deque<ser::Bytes> queue_;
    CommLedger tx_, rx_;
};

}  // namespace splitcom::net
