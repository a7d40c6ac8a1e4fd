#include "splitcom/transport.hpp"

#include <sstream>

namespace splitcom::net {

const char* direction_name(Direction d) { return d == Direction::Uplink ? "uplink" : "downlink"; }

void CommLedger::record(Direction d, wire::MsgType t, std::uint64_t framed, std::uint64_t payload) {
    LedgerEntry& e = entries[{d, t}];
    ++e.messages;
    e.framed_bytes += framed;
    e.payload_bytes += payload;
}

void CommLedger::merge(const CommLedger& other) {
    for (const auto& [key, e] : other.entries) {
        LedgerEntry& mine = entries[key];
        mine.messages += e.messages;
        mine.framed_bytes += e.framed_bytes;
        mine.payload_bytes += e.payload_bytes;
    }
}

std::uint64_t CommLedger::framed_bytes(Direction d) const {
    std::uint64_t total = 0;
    for (const auto& [key, e] : entries)
        if (key.first == d) total += e.framed_bytes;
    return total;
}

std::uint64_t CommLedger::payload_bytes(Direction d) const {
    std::uint64_t total = 0;
    for (const auto& [key, e] : entries)
        if (key.first == d) total += e.payload_bytes;
    return total;
}

std::uint64_t CommLedger::framed_bytes(Direction d, wire::MsgType t) const {
    auto it = entries.find({d, t});
    return it == entries.end() ? 0 : it->second.framed_bytes;
}

std::uint64_t CommLedger::payload_bytes(Direction d, wire::MsgType t) const {
    auto it = entries.find({d, t});
    return it == entries.end() ? 0 : it->second.payload_bytes;
}

std::uint64_t CommLedger::messages(Direction d, wire::MsgType t) const {
    auto it = entries.find({d, t});
    return it == entries.end() ? 0 : it->second.messages;
}

std::uint64_t CommLedger::total_framed_bytes() const {
    std::uint64_t total = 0;
    for (const auto& [key, e] : entries) total += e.framed_bytes;
    return total;
}

std::string CommLedger::dump() const {
    std::ostringstream os;
    for (const auto& [key, e] : entries)
        os << direction_name(key.first) << ' ' << wire::type_name(key.second) << " messages=" << e.messages
           << " framed_bytes=" << e.framed_bytes << " payload_bytes=" << e.payload_bytes << '\n';
    return os.str();
}

LatencyBreakdown estimate_latency(const CommLedger& ledger, const RateModel& rates) {
    if (rates.uplink_bps <= 0.0 || rates.downlink_bps <= 0.0) throw ConfigError("link rates must be positive");
    LatencyBreakdown lb;
    lb.uplink_s = static_cast<double>(ledger.framed_bytes(Direction::Uplink)) * 8.0 / rates.uplink_bps;
    lb.downlink_s = static_cast<double>(ledger.framed_bytes(Direction::Downlink)) * 8.0 / rates.downlink_bps;
    lb.total_s = lb.uplink_s + lb.downlink_s;
    return lb;
}

void Link::send(const wire::Message& m) {
    ser::Bytes framed = wire::frame(m);
    tx_.record(dir_, m.type, framed.size(), m.payload.size());
    queue_.push_back(std::move(framed));
}

wire::Message Link::recv() {
    if (queue_.empty()) throw ProtocolError("recv on empty link");
    ser::Bytes framed = std::move(queue_.front());
    queue_.pop_front();
    wire::Message m = wire::parse_frame(framed);
    rx_.record(dir_, m.type, framed.size(), m.payload.size());
    return m;
}

}  // namespace splitcom::net
