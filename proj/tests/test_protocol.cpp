#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "splitcom/engine.hpp"
#include "splitcom/ops.hpp"

using namespace splitcom;
using namespace splitcom::eng;

namespace {

Shard random_shard(std::uint64_t seed, int n, int seq, int vocab) {
    Rng rng(seed);
    Shard shard;
    for (int i = 0; i < n; ++i) {
        Sample s;
        for (int j = 0; j < seq + 1; ++j)
            s.tokens.push_back(static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(vocab))));
        s.targets.assign(s.tokens.begin() + 1, s.tokens.end());
        s.tokens.pop_back();
        shard.push_back(std::move(s));
    }
    return shard;
}

struct World {
    EngineConfig cfg;
    model::SplitModel pretrained;
    std::vector<Shard> shards;
    Shard val;
};

World make_world(Topology topo = Topology::Standard, int clients = 2, int shard_size = 8, int epochs = 3) {
    World w;
    w.cfg.topology = topo;
    if (topo == Topology::UShape) w.cfg.model.tail_layers = 1;
    w.cfg.epochs = epochs;
    w.cfg.batch_size = 4;
    w.cfg.seed = 99;
    w.pretrained = model::build_model(w.cfg.model, 7);
    for (int i = 0; i < clients; ++i)
        w.shards.push_back(random_shard(100 + static_cast<std::uint64_t>(i), shard_size, w.cfg.model.seq_len,
                                        w.cfg.model.vocab_size));
    w.val = random_shard(999, 8, w.cfg.model.seq_len, w.cfg.model.vocab_size);
    return w;
}

bool adapters_equal(const model::SplitModel& a, const model::SplitModel& b) {
    for (std::size_t l = 0; l < a.adapters.q.size(); ++l) {
        if (!(a.adapters.q[l].a == b.adapters.q[l].a && a.adapters.q[l].b == b.adapters.q[l].b)) return false;
        if (!(a.adapters.v[l].a == b.adapters.v[l].a && a.adapters.v[l].b == b.adapters.v[l].b)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("assemble_server_batch ordering and errors") {
    comp::ReuseCache cache;
    cache.entries[{0, 1, comp::Interface::F2S}] = Tensor({2}, {10, 10});
    cache.entries[{0, 3, comp::Interface::F2S}] = Tensor({2}, {30, 30});
    std::map<int, Tensor> uploads;
    uploads.emplace(0, Tensor({2}, {0, 0}));
    uploads.emplace(2, Tensor({2}, {20, 20}));

    // mixed 2 uploaded + 2 reused, interleaved by id
    auto batch = assemble_server_batch(uploads, cache, 0, comp::Interface::F2S, {0, 1, 2, 3},
                                       {false, true, false, true});
    REQUIRE(batch.size() == 4);
    CHECK(batch[0].data[0] == 0);
    CHECK(batch[1].data[0] == 10);
    CHECK(batch[2].data[0] == 20);
    CHECK(batch[3].data[0] == 30);

    // all uploaded / all reused verbatim
    auto all_up = assemble_server_batch(uploads, cache, 0, comp::Interface::F2S, {0, 2}, {false, false});
    CHECK(all_up[1].data[1] == 20);
    auto all_re = assemble_server_batch(uploads, cache, 0, comp::Interface::F2S, {1, 3}, {true, true});
    CHECK(all_re[0].data[0] == 10);

    CHECK_THROWS_AS(
        assemble_server_batch(uploads, cache, 0, comp::Interface::F2S, {5}, {std::vector<bool>{true}[0]}),
        ProtocolError);
    CHECK_THROWS_AS(assemble_server_batch(uploads, cache, 0, comp::Interface::F2S, {5}, {false}), ProtocolError);
}

TEST_CASE("latency arithmetic") {
    net::CommLedger l;
    net::RateModel rates;
    CHECK(net::estimate_latency(l, rates).total_s == 0.0);

    l.record(net::Direction::Uplink, wire::MsgType::ActivationUpload, 10000000, 10000000);
    auto lb = net::estimate_latency(l, rates);
    CHECK(lb.uplink_s == doctest::Approx(8e7 / 3.06e7).epsilon(1e-9));
    CHECK(lb.uplink_s == doctest::Approx(2.614).epsilon(1e-3));

    l.record(net::Direction::Uplink, wire::MsgType::ActivationUpload, 10000000, 10000000);
    CHECK(net::estimate_latency(l, rates).uplink_s == doctest::Approx(2.0 * lb.uplink_s));

    net::CommLedger d;
    d.record(net::Direction::Downlink, wire::MsgType::GradientDown, 10000000, 10000000);
    CHECK(net::estimate_latency(d, rates).downlink_s == doctest::Approx(8e7 / 1.668e8));
}

TEST_CASE("frame and link round trip with conservation") {
    wire::Message m;
    m.type = wire::MsgType::ActivationUpload;
    m.client_id = 3;
    m.epoch = 7;
    m.step = 2;
    m.payload = {1, 2, 3, 4, 5};
    ser::Bytes framed = wire::frame(m);
    CHECK(framed.size() == wire::kFrameHeaderBytes + 5);
    wire::Message back = wire::parse_frame(framed);
    CHECK(back.client_id == 3);
    CHECK(back.epoch == 7);
    CHECK(back.payload == m.payload);

    framed[0] = 'X';
    CHECK_THROWS_AS(wire::parse_frame(framed), ProtocolError);

    net::Link link(net::Direction::Uplink);
    link.send(m);
    link.send(m);
    CHECK(link.pending() == 2);
    (void)link.recv();
    (void)link.recv();
    CHECK(link.tx_ledger() == link.rx_ledger());
    CHECK(link.tx_ledger().messages(net::Direction::Uplink, wire::MsgType::ActivationUpload) == 2);
    CHECK_THROWS_AS(link.recv(), ProtocolError);
}

TEST_CASE("label flow audit including forged fixture") {
    net::CommLedger clean;
    clean.record(net::Direction::Uplink, wire::MsgType::ActivationUpload, 100, 80);
    CHECK(label_flow_audit(clean, Topology::UShape).pass);
    CHECK(label_flow_audit(clean, Topology::UShape).label_bytes_uplink == 0);

    net::CommLedger std_run = clean;
    std_run.record(net::Direction::Uplink, wire::MsgType::LabelBlock, 40, 20);
    auto std_audit = label_flow_audit(std_run, Topology::Standard);
    CHECK(std_audit.pass);
    CHECK(std_audit.label_bytes_uplink == 40);

    // forged label message slipped into a U-shape run must fail the audit
    net::Link up(net::Direction::Uplink);
    wire::Message forged;
    forged.type = wire::MsgType::LabelBlock;
    forged.payload = {9, 9, 9};
    up.send(forged);
    net::CommLedger forged_ledger = clean;
    forged_ledger.merge(up.tx_ledger());
    CHECK_FALSE(label_flow_audit(forged_ledger, Topology::UShape).pass);
}

TEST_CASE("baseline (theta > 1) is bit-identical to the no-protocol oracle") {
    World w = make_world(Topology::Standard);
    w.cfg.theta0 = 1.01f;  // force send everywhere

    Engine live(w.cfg, w.pretrained, w.shards, w.val);
    auto oracle = make_oracle(w.cfg, w.pretrained, w.shards, w.val);
    for (int e = 0; e < w.cfg.epochs; ++e) {
        EpochReport a = live.run_epoch();
        EpochReport b = oracle->run_epoch();
        CHECK(a.train_loss == b.train_loss);
        CHECK(a.val_ppl == b.val_ppl);
        // cold start / force-send: every sample transmits
        CHECK(a.interfaces.at(comp::Interface::F2S).sends == 16);
        CHECK(a.interfaces.at(comp::Interface::F2S).reuses == 0);
        CHECK(b.bytes_up == 0);  // the oracle never touches the wire
    }
    CHECK(adapters_equal(live.global_model(), oracle->global_model()));
    CHECK(live.audit_conservation());
    CHECK_THROWS_AS(live.run_epoch(), StateError);
}

TEST_CASE("force-reuse sentinel: only notices after epoch 1") {
    World w = make_world(Topology::Standard);
    w.cfg.theta0 = -1.01f;
    Engine e(w.cfg, w.pretrained, w.shards, w.val);

    EpochReport r1 = e.run_epoch();
    CHECK(r1.interfaces.at(comp::Interface::F2S).sends == 16);
    const std::uint64_t upload_payload_e1 =
        e.ledger().payload_bytes(net::Direction::Uplink, wire::MsgType::ActivationUpload);
    CHECK(upload_payload_e1 > 0);

    EpochReport r2 = e.run_epoch();
    CHECK(r2.interfaces.at(comp::Interface::F2S).sends == 0);
    CHECK(r2.interfaces.at(comp::Interface::F2S).reuses == 16);
    // zero new activation payload; skip notices only
    CHECK(e.ledger().payload_bytes(net::Direction::Uplink, wire::MsgType::ActivationUpload) == upload_payload_e1);
    CHECK(e.ledger().messages(net::Direction::Uplink, wire::MsgType::SkipNotice) == 4);  // 2 clients x 2 steps
    // notice cost: 16-byte header + ceil(4/8) bitmap
    CHECK(e.ledger().payload_bytes(net::Direction::Uplink, wire::MsgType::SkipNotice) == 4 * (16 + 1));
    // reuse-rate identity: sends + reuses = samples per epoch
    CHECK(r2.interfaces.at(comp::Interface::F2S).sends + r2.interfaces.at(comp::Interface::F2S).reuses == 16);
    CHECK(e.audit_cache_coherence());
}

TEST_CASE("fixed theta compresses against baseline") {
    World base_w = make_world(Topology::Standard);
    base_w.cfg.theta0 = 1.01f;
    Engine base(base_w.cfg, base_w.pretrained, base_w.shards, base_w.val);
    auto base_reports = base.run_all();

    World w = make_world(Topology::Standard);
    w.cfg.theta0 = 0.98f;
    Engine e(w.cfg, w.pretrained, w.shards, w.val);
    auto reports = e.run_all();

    // epoch 1 is cold start: identical uplink bytes
    CHECK(reports[0].bytes_up == base_reports[0].bytes_up);
    std::uint64_t total = 0, base_total = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        total += reports[i].payload_up;
        base_total += base_reports[i].payload_up;
    }
    CHECK(total < base_total);
    CHECK(e.audit_cache_coherence());
    CHECK(e.audit_conservation());
}

TEST_CASE("deterministic replay and concurrent == sequential") {
    World w = make_world(Topology::Standard);
    w.cfg.theta0 = 0.98f;

    Engine a(w.cfg, w.pretrained, w.shards, w.val);
    Engine b(w.cfg, w.pretrained, w.shards, w.val);
    EngineConfig conc = w.cfg;
    conc.schedule = Schedule::Concurrent;
    Engine c(conc, w.pretrained, w.shards, w.val);

    auto ra = a.run_all();
    auto rb = b.run_all();
    auto rc = c.run_all();
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].train_loss == rb[i].train_loss);
        CHECK(ra[i].val_ppl == rb[i].val_ppl);
        CHECK(ra[i].bytes_up == rb[i].bytes_up);
        CHECK(ra[i].train_loss == rc[i].train_loss);
        CHECK(ra[i].val_ppl == rc[i].val_ppl);
        CHECK(ra[i].bytes_up == rc[i].bytes_up);
        CHECK(ra[i].bytes_down == rc[i].bytes_down);
    }
    CHECK(a.ledger() == b.ledger());
    CHECK(a.ledger() == c.ledger());
    CHECK(a.ledger().dump() == c.ledger().dump());
    CHECK(adapters_equal(a.global_model(), c.global_model()));
}

TEST_CASE("bidirectional topology gates the downlink gradients") {
    World w = make_world(Topology::Bidirectional);
    w.cfg.theta0 = -1.01f;  // force reuse both ways after epoch 1
    Engine e(w.cfg, w.pretrained, w.shards, w.val);
    (void)e.run_epoch();
    CHECK(e.ledger().messages(net::Direction::Downlink, wire::MsgType::GradientDown) == 16);
    (void)e.run_epoch();
    // epoch 2: no fresh gradients, GradientSkip notices instead
    CHECK(e.ledger().messages(net::Direction::Downlink, wire::MsgType::GradientDown) == 16);
    CHECK(e.ledger().messages(net::Direction::Downlink, wire::MsgType::GradientSkip) == 4);
    CHECK(e.audit_cache_coherence());
    CHECK(e.audit_conservation());
}

TEST_CASE("ushape: four gated interfaces, labels never uplink") {
    World w = make_world(Topology::UShape, 2, 8, 2);
    w.cfg.theta0 = 0.98f;
    Engine e(w.cfg, w.pretrained, w.shards, w.val);
    auto reports = e.run_all();

    for (auto iface : {comp::Interface::F2S, comp::Interface::S2T, comp::Interface::T2S, comp::Interface::S2F}) {
        const auto& st = reports[0].interfaces.at(iface);
        CHECK(st.sends == 16);  // cold start sends everywhere
        const auto& st2 = reports[1].interfaces.at(iface);
        CHECK(st2.sends + st2.reuses == 16);
    }
    CHECK(e.ledger().messages(net::Direction::Uplink, wire::MsgType::LabelBlock) == 0);
    CHECK(e.audit_labels().pass);
    CHECK(e.audit_labels().label_bytes_uplink == 0);
    CHECK(e.audit_cache_coherence());
    CHECK(e.audit_conservation());

    // ushape concurrent matches sequential
    EngineConfig conc = w.cfg;
    conc.schedule = Schedule::Concurrent;
    Engine c(conc, w.pretrained, w.shards, w.val);
    auto rc = c.run_all();
    CHECK(rc[0].train_loss == reports[0].train_loss);
    CHECK(rc[1].val_ppl == reports[1].val_ppl);
    CHECK(c.ledger() == e.ledger());
}

TEST_CASE("standard run reports label traffic truthfully") {
    World w = make_world(Topology::Standard, 2, 8, 2);
    Engine e(w.cfg, w.pretrained, w.shards, w.val);
    (void)e.run_all();
    auto audit = e.audit_labels();
    CHECK(audit.pass);
    CHECK(audit.label_bytes_uplink > 0);
    // labels travel once per run: epoch 1 only
    CHECK(e.ledger().messages(net::Direction::Uplink, wire::MsgType::LabelBlock) == 4);  // 2 clients x 2 steps
}

TEST_CASE("int8 wire mode shrinks payloads and keeps caches coherent") {
    World w = make_world(Topology::Standard, 2, 8, 2);
    w.cfg.theta0 = 0.98f;
    Engine fp(w.cfg, w.pretrained, w.shards, w.val);
    auto rf = fp.run_all();

    EngineConfig qc = w.cfg;
    qc.quantize_int8 = true;
    Engine q(qc, w.pretrained, w.shards, w.val);
    auto rq = q.run_all();

    CHECK(rq[0].payload_up < rf[0].payload_up);
    CHECK(q.audit_cache_coherence());
    CHECK(q.audit_conservation());
    // training still finite and sane
    for (const auto& r : rq) {
        CHECK(std::isfinite(r.train_loss));
        CHECK(r.val_ppl > 0.0);
        CHECK(r.val_ppl < 100.0);
    }
}

TEST_CASE("adaptive policies emit valid thresholds") {
    World w = make_world(Topology::Standard, 2, 8, 3);
    w.cfg.policy = Policy::Bbc;
    Engine b(w.cfg, w.pretrained, w.shards, w.val);
    (void)b.run_all();
    for (float t : b.theta_trace(comp::Interface::F2S))
        CHECK((t == w.cfg.bbc.theta_low || t == w.cfg.bbc.theta_high));

    World w2 = make_world(Topology::Standard, 2, 8, 3);
    w2.cfg.policy = Policy::Ddpg;
    Engine d(w2.cfg, w2.pretrained, w2.shards, w2.val);
    (void)d.run_all();
    const auto& trace = d.theta_trace(comp::Interface::F2S);
    CHECK(trace.size() == 3);
    for (float t : trace) {
        CHECK(t >= 0.0f);
        CHECK(t <= 1.0f);
    }
}

TEST_CASE("engine config validation") {
    World w = make_world();
    w.cfg.batch_size = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(Engine(w.cfg, w.pretrained, w.shards, w.val), ConfigError);

    World w2 = make_world();
    w2.cfg.topology = Topology::UShape;  // tail_layers still 0
    CHECK_THROWS_AS(Engine(w2.cfg, w2.pretrained, w2.shards, w2.val), ConfigError);

    World w3 = make_world();
    w3.shards.push_back(random_shard(5, 4, w3.cfg.model.seq_len, w3.cfg.model.vocab_size));
    CHECK_THROWS_AS(Engine(w3.cfg, w3.pretrained, w3.shards, w3.val), ConfigError);
}
