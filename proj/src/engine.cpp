#include "splitcom/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include "splitcom/kernels.hpp"
#include "splitcom/serialize.hpp"

namespace splitcom::eng {

const char* topology_name(Topology t) {
    switch (t) {
        case Topology::Standard: return "standard";
        case Topology::Bidirectional: return "bidirectional";
        case Topology::UShape: return "ushape";
    }
    return "?";
}

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::Fixed: return "fixed";
        case Policy::Bbc: return "bbc";
        case Policy::Ddpg: return "ddpg";
    }
    return "?";
}

std::uint64_t EpochReport::sends_up() const {
    std::uint64_t n = 0;
    for (const auto& [iface, s] : interfaces)
        if (iface == comp::Interface::F2S || iface == comp::Interface::T2S) n += s.sends;
    return n;
}

std::uint64_t EpochReport::reuses_up() const {
    std::uint64_t n = 0;
    for (const auto& [iface, s] : interfaces)
        if (iface == comp::Interface::F2S || iface == comp::Interface::T2S) n += s.reuses;
    return n;
}

void EngineConfig::validate(int n_clients, int shard_size) const {
    model.validate();
    if (n_clients < 1) throw ConfigError("need at least one client");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (shard_size % batch_size != 0) throw ConfigError("shard size must be divisible by batch size");
    if (model.vocab_size > 256) throw ConfigError("label blocks encode tokens as u8; vocab must be <= 256");
    if (topology == Topology::UShape) {
        if (model.tail_layers < 1) throw ConfigError("ushape needs tail_layers >= 1");
    } else if (model.tail_layers != 0) {
        throw ConfigError("standard/bidirectional topologies need tail_layers == 0");
    }
    if (aggregate_every < 0) throw ConfigError("aggregate_every must be >= 0");
}

std::string config_summary(const EngineConfig& cfg, int n_clients, int shard_size) {
    std::ostringstream os;
    os << "topology=" << topology_name(cfg.topology) << "\npolicy=" << policy_name(cfg.policy)
       << "\ntheta0=" << cfg.theta0 << "\nquantize_int8=" << (cfg.quantize_int8 ? 1 : 0)
       << "\nsimilarity_on_compressed=" << (cfg.similarity_on_compressed ? 1 : 0)
       << "\nreuse_backward=" << (cfg.reuse_backward == ReuseBackward::ThroughCurrent ? "through_current" : "freeze")
       << "\nepochs=" << cfg.epochs << "\nbatch_size=" << cfg.batch_size << "\npeak_lr=" << cfg.peak_lr
       << "\naggregate_every=" << cfg.aggregate_every << "\nseed=" << cfg.seed << "\nclients=" << n_clients
       << "\nshard_size=" << shard_size << "\nvocab_size=" << cfg.model.vocab_size << "\nd_model=" << cfg.model.d_model
       << "\nn_layers=" << cfg.model.n_layers << "\nseq_len=" << cfg.model.seq_len
       << "\nlora_rank=" << cfg.model.lora_rank << "\nfrontend_layers=" << cfg.model.frontend_layers
       << "\ntail_layers=" << cfg.model.tail_layers << "\n";
    return os.str();
}

std::vector<Tensor> assemble_server_batch(const std::map<int, Tensor>& uploads, const comp::ReuseCache& cache,
                                          int client_id, comp::Interface iface, const std::vector<int>& sample_ids,
                                          const std::vector<bool>& reused) {
    if (sample_ids.size() != reused.size()) throw ConfigError("assemble: id/flag length mismatch");
    std::vector<Tensor> rows;
    rows.reserve(sample_ids.size());
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        const int id = sample_ids[i];
        if (reused[i]) {
            auto it = cache.entries.find({client_id, id, iface});
            if (it == cache.entries.end())
                throw ProtocolError("reuse requested for sample " + std::to_string(id) + " but cache is empty");
            rows.push_back(it->second);
        } else {
            auto it = uploads.find(id);
            if (it == uploads.end()) throw ProtocolError("missing upload for sample " + std::to_string(id));
            rows.push_back(it->second);
        }
    }
    return rows;
}

LabelAudit label_flow_audit(const net::CommLedger& ledger, Topology topology) {
    LabelAudit a;
    a.label_bytes_uplink = ledger.framed_bytes(net::Direction::Uplink, wire::MsgType::LabelBlock);
    a.pass = topology == Topology::UShape ? a.label_bytes_uplink == 0 : true;
    return a;
}

namespace {

ser::Bytes tensor_payload(std::uint64_t sample_id, const Tensor& t, bool int8, Tensor& cache_copy) {
    ser::Bytes p;
    ser::put_u64(p, sample_id);
    if (int8) {
        const comp::QuantizedTensor q = comp::quantize_int8(t);
        cache_copy = comp::dequantize(q);
        ser::encode_tensor(p, q);
    } else {
        cache_copy = t;
        ser::encode_tensor(p, t);
    }
    return p;
}

std::pair<int, Tensor> decode_tensor_payload(const ser::Bytes& payload) {
    ser::Reader r(payload);
    const std::uint64_t id = r.u64();
    Tensor t = ser::decode_tensor(r);
    if (r.remaining() != 0) throw ProtocolError("trailing bytes after tensor payload");
    return {static_cast<int>(id), std::move(t)};
}

void ckpt_add_set(ser::Checkpoint& ck, const std::string& prefix, const model::LoraAdapterSet& s) {
    for (std::size_t l = 0; l < s.q.size(); ++l) {
        const std::string base = prefix + "." + std::to_string(l) + ".";
        ck.tensors.emplace_back(base + "q.a", s.q[l].a);
        ck.tensors.emplace_back(base + "q.b", s.q[l].b);
        ck.tensors.emplace_back(base + "v.a", s.v[l].a);
        ck.tensors.emplace_back(base + "v.b", s.v[l].b);
    }
}

model::LoraAdapterSet ckpt_read_set(const ser::Checkpoint& ck, const std::string& prefix,
                                    const model::LoraAdapterSet& shape) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
    model::LoraAdapterSet out = shape;
    auto fetch = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ProtocolError("adapter payload missing tensor " + name);
        return *it->second;
    };
    for (std::size_t l = 0; l < out.q.size(); ++l) {
        const std::string base = prefix + "." + std::to_string(l) + ".";
        out.q[l].a = fetch(base + "q.a");
        out.q[l].b = fetch(base + "q.b");
        out.v[l].a = fetch(base + "v.a");
        out.v[l].b = fetch(base + "v.b");
    }
    return out;
}

bool carries_gradient(comp::Interface iface) {
    return iface == comp::Interface::T2S || iface == comp::Interface::S2F;
}

}  // namespace

Engine::Engine(EngineConfig cfg, const model::SplitModel& pretrained, std::vector<Shard> shards, Shard val_set)
    : cfg_(std::move(cfg)), shards_(std::move(shards)), val_set_(std::move(val_set)),
      server_(pretrained), global_(pretrained) {
    if (shards_.empty()) throw ConfigError("no client shards");
    const int shard_size = static_cast<int>(shards_.front().size());
    for (const auto& s : shards_)
        if (static_cast<int>(s.size()) != shard_size) throw ConfigError("all shards must be equal-sized");
    cfg_.validate(n_clients(), shard_size);
    if (cfg_.model.vocab_size != pretrained.cfg.vocab_size || cfg_.model.tail_layers != pretrained.cfg.tail_layers)
        throw ConfigError("engine config does not match the pretrained model");
    steps_per_epoch_ = shard_size / cfg_.batch_size;

    const int K = n_clients();
    opt::OptimizerConfig client_oc;
    client_oc.peak_lr = cfg_.peak_lr;
    client_oc.total_steps = cfg_.epochs * steps_per_epoch_;
    opt::OptimizerConfig server_oc = client_oc;
    server_oc.total_steps = cfg_.epochs * steps_per_epoch_ * K;
    for (int i = 0; i < K; ++i) {
        clients_.emplace_back();
        clients_.back().model = pretrained;
        clients_.back().optimizer = std::make_unique<opt::AdamW>(client_oc);
    }
    server_opt_ = std::make_unique<opt::AdamW>(server_oc);
    scratch_.resize(static_cast<std::size_t>(K));

    init_interfaces();

    // initial thresholds
    ctrl_state_.sim_ema.assign(static_cast<std::size_t>(cfg_.state_slots), 0.0f);
    ctrl_state_.current_theta = cfg_.theta0;
    for (comp::Interface iface : gated_interfaces()) {
        float theta = cfg_.theta0;
        if (cfg_.policy == Policy::Bbc) theta = cfg_.bbc.theta_low;
        if (cfg_.policy == Policy::Ddpg) {
            ctrl::DdpgConfig dc = cfg_.ddpg;
            dc.state_dim = cfg_.state_slots + 4;
            agents_[iface] = std::make_unique<ctrl::DdpgAgent>(
                dc, Rng::derive(cfg_.seed, 0x64647067ull, static_cast<std::uint64_t>(iface)));
            replays_.emplace(iface, ctrl::ReplayBuffer(dc.replay_capacity));
            pending_transition_[iface] = std::nullopt;
            theta = agents_[iface]->act(ctrl::build_state_vector(ctrl_state_, cfg_.state_slots), true);
        }
        theta_[iface] = theta;
    }

    if (cfg_.use_transport)
        for (auto& c : clients_) send_hello(c);
}

std::vector<comp::Interface> Engine::gated_interfaces() const {
    switch (cfg_.topology) {
        case Topology::Standard: return {comp::Interface::F2S};
        case Topology::Bidirectional: return {comp::Interface::F2S, comp::Interface::S2F};
        case Topology::UShape:
            return {comp::Interface::F2S, comp::Interface::S2T, comp::Interface::T2S, comp::Interface::S2F};
    }
    return {};
}

void Engine::init_interfaces() {
    const int d_in = cfg_.model.seq_len * cfg_.model.d_model;
    for (comp::Interface iface : gated_interfaces()) {
        GatedInterface gi;
        gi.id = iface;
        if (cfg_.similarity_on_compressed) {
            const std::uint64_t seed = Rng::derive(cfg_.seed, 0x70726f6aull, static_cast<std::uint64_t>(iface));
            gi.projection = comp::ProjectionMatrix::generate(d_in, comp::default_projection_width(d_in), seed);
        }
        interfaces_.emplace(iface, std::move(gi));
    }
}

void Engine::send_hello(ClientState& c) {
    wire::SessionHello hello;
    hello.config_hash =
        ser::fnv1a64(config_summary(cfg_, n_clients(), static_cast<int>(shards_.front().size())));
    for (comp::Interface iface : gated_interfaces())
        hello.projection_seeds.push_back(cfg_.similarity_on_compressed ? interfaces_.at(iface).projection.seed : 0);
    wire::Message m;
    m.type = wire::MsgType::SessionHello;
    m.client_id = static_cast<std::uint16_t>(&c - clients_.data());
    m.payload = wire::encode_session_hello(hello);
    c.up.send(m);
    // server side validates the hash on receipt
    wire::Message got = c.up.recv();
    wire::SessionHello seen = wire::decode_session_hello(got.payload);
    if (seen.config_hash != hello.config_hash) throw ProtocolError("session hello config-hash mismatch");
}

float Engine::theta_for(comp::Interface iface) const {
    auto it = theta_.find(iface);
    return it == theta_.end() ? 1.01f : it->second;
}

model::ForwardCtx Engine::make_ctx(int epoch, int step, int client, int sample) const {
    model::ForwardCtx ctx;
    ctx.run_seed = cfg_.seed;
    ctx.epoch = epoch;
    ctx.step = step;
    ctx.client_id = client;
    ctx.sample_id = sample;
    ctx.training = true;
    ctx.mode = model::TrainMode::AdaptersOnly;
    return ctx;
}

const std::vector<float>& Engine::theta_trace(comp::Interface iface) const {
    static const std::vector<float> empty;
    auto it = theta_trace_.find(iface);
    return it == theta_trace_.end() ? empty : it->second;
}

Engine::GateOutcome Engine::gate_one(comp::Interface iface, int client, int sample, const Tensor& full,
                                     wire::MsgType msg_type, std::vector<wire::Message>* out,
                                     std::map<int, Tensor>* direct_out, std::vector<int>* epoch_step) {
    if (!cfg_.use_transport) {
        (*direct_out)[sample] = full;
        return {false, 0.0f};
    }
    GatedInterface& gi = interfaces_.at(iface);
    const comp::CacheKey key{client, sample, iface};
    const Tensor compressed = cfg_.similarity_on_compressed ? comp::project(gi.projection, full) : full;
    comp::GateResult res;
    bool had_entry = false;
    {
        std::lock_guard<std::mutex> lock(gate_mu_);
        had_entry = gi.sender.entries.count(key) > 0;
        res = comp::gate(gi.sender, key, compressed, theta_for(iface));
    }
    const int epoch = epoch_step->at(0);
    const int step = epoch_step->at(1);
    GateOutcome outcome;
    outcome.similarity = res.similarity;
    if (res.decision == comp::GateDecision::Reuse) {
        outcome.reused = true;
    } else {
        Tensor cache_copy;
        wire::Message m;
        m.type = msg_type;
        m.client_id = static_cast<std::uint16_t>(client);
        m.epoch = static_cast<std::uint32_t>(epoch);
        m.step = static_cast<std::uint32_t>(step);
        m.payload = tensor_payload(static_cast<std::uint64_t>(sample), full, cfg_.quantize_int8, cache_copy);
        const Tensor cache_compressed =
            cfg_.similarity_on_compressed && cfg_.quantize_int8 ? comp::project(gi.projection, cache_copy)
            : cfg_.similarity_on_compressed                     ? compressed
                                                                : cache_copy;
        {
            std::lock_guard<std::mutex> lock(gate_mu_);
            comp::commit_transmission(gi.sender, gi.receiver, key, cache_copy, cache_compressed);
            gated_payload_epoch_ += m.payload.size();
        }
        out->push_back(std::move(m));
    }
    {
        std::lock_guard<std::mutex> lock(gate_mu_);
        InterfaceStats& st = epoch_stats_[iface];
        if (outcome.reused)
            ++st.reuses;
        else
            ++st.sends;
        if (iface == comp::Interface::F2S && had_entry) {
            clients_[static_cast<std::size_t>(client)].sim_sum += res.similarity;
            ++clients_[static_cast<std::size_t>(client)].sim_count;
        }
    }
    return outcome;
}

void Engine::send_gated_batch(net::Link& link, comp::Interface iface, int client, int epoch, int step, int base_id,
                              const std::vector<bool>& reused, std::vector<wire::Message>& msgs) {
    if (!cfg_.use_transport) return;
    const bool any_reused = std::any_of(reused.begin(), reused.end(), [](bool b) { return b; });
    if (any_reused) {
        wire::SkipNotice notice;
        notice.interface_id = static_cast<std::uint32_t>(iface);
        notice.base_sample_id = static_cast<std::uint64_t>(base_id);
        notice.reused = reused;
        wire::Message m;
        m.type = carries_gradient(iface) ? wire::MsgType::GradientSkip : wire::MsgType::SkipNotice;
        m.client_id = static_cast<std::uint16_t>(client);
        m.epoch = static_cast<std::uint32_t>(epoch);
        m.step = static_cast<std::uint32_t>(step);
        m.payload = wire::encode_skip_notice(notice);
        link.send(m);
    }
    for (auto& m : msgs) link.send(m);
    msgs.clear();
}

// ---- standard / bidirectional phases ----

void Engine::client_upload_phase(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    sc = BatchScratch{};
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    const int epoch = epoch_done_ + 1;
    const int base = step * cfg_.batch_size;
    std::vector<int> es{epoch, step};
    std::vector<wire::Message> msgs;
    for (int b = 0; b < cfg_.batch_size; ++b) {
        const int id = base + b;
        const Sample& s = shards_[static_cast<std::size_t>(client)][static_cast<std::size_t>(id)];
        model::ForwardCtx ctx = make_ctx(epoch, step, client, id);
        sc.front_runs.push_back(model::forward_frontend(c.model, s.tokens, ctx));
        sc.sample_ids.push_back(id);
        GateOutcome g = gate_one(comp::Interface::F2S, client, id, sc.front_runs.back().output->value,
                                 wire::MsgType::ActivationUpload, &msgs, &sc.direct_up, &es);
        sc.reused_up.push_back(g.reused);
    }
    if (cfg_.use_transport && cfg_.topology != Topology::UShape && epoch == 1) {
        // labels travel once per run, with the first (cold-start) uploads
        ser::Bytes p;
        ser::put_u64(p, static_cast<std::uint64_t>(base));
        ser::put_u32(p, static_cast<std::uint32_t>(cfg_.batch_size));
        ser::put_u32(p, static_cast<std::uint32_t>(cfg_.model.seq_len));
        for (int b = 0; b < cfg_.batch_size; ++b)
            for (int tok : shards_[static_cast<std::size_t>(client)][static_cast<std::size_t>(base + b)].targets)
                ser::put_u8(p, static_cast<std::uint8_t>(tok));
        wire::Message m;
        m.type = wire::MsgType::LabelBlock;
        m.client_id = static_cast<std::uint16_t>(client);
        m.epoch = static_cast<std::uint32_t>(epoch);
        m.step = static_cast<std::uint32_t>(step);
        m.payload = std::move(p);
        c.up.send(m);
    }
    send_gated_batch(c.up, comp::Interface::F2S, client, epoch, step, base, sc.reused_up, msgs);
}

void Engine::drain_uplink(int client, std::map<int, Tensor>& uploads, std::vector<bool>& reused) {
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    reused.assign(static_cast<std::size_t>(cfg_.batch_size), false);
    while (!c.up.empty()) {
        wire::Message m = c.up.recv();
        switch (m.type) {
            case wire::MsgType::ActivationUpload:
            case wire::MsgType::TailGradientUp: {
                auto [id, t] = decode_tensor_payload(m.payload);
                uploads.emplace(id, std::move(t));
                break;
            }
            case wire::MsgType::SkipNotice:
            case wire::MsgType::GradientSkip: {
                wire::SkipNotice n = wire::decode_skip_notice(m.payload);
                if (n.reused.size() != reused.size()) throw ProtocolError("skip notice batch-size mismatch");
                reused = n.reused;
                break;
            }
            case wire::MsgType::LabelBlock: {
                ser::Reader r(m.payload);
                const int base = static_cast<int>(r.u64());
                const int count = static_cast<int>(r.u32());
                const int seq = static_cast<int>(r.u32());
                for (int i = 0; i < count; ++i) {
                    std::vector<int> targets(static_cast<std::size_t>(seq));
                    for (int j = 0; j < seq; ++j) targets[static_cast<std::size_t>(j)] = r.u8();
                    server_labels_[m.client_id][base + i] = std::move(targets);
                }
                break;
            }
            default:
                throw ProtocolError(std::string("unexpected uplink message ") + wire::type_name(m.type));
        }
    }
}

Engine::StepOutcome Engine::server_phase_standard(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    const int epoch = epoch_done_ + 1;
    StepOutcome out;

    std::vector<Tensor> batch;
    if (cfg_.use_transport) {
        std::map<int, Tensor> uploads;
        drain_uplink(client, uploads, sc.reused_up);
        batch = assemble_server_batch(uploads, interfaces_.at(comp::Interface::F2S).receiver, client,
                                      comp::Interface::F2S, sc.sample_ids, sc.reused_up);
    } else {
        for (int id : sc.sample_ids) batch.push_back(sc.direct_up.at(id));
    }

    model::GradMap server_grads;
    std::vector<wire::Message> msgs;
    std::vector<int> es{epoch, step};
    sc.grad_reused.assign(sc.sample_ids.size(), false);
    const float inv_b = 1.0f / static_cast<float>(cfg_.batch_size);
    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        const int id = sc.sample_ids[i];
        const std::vector<int>& targets = cfg_.use_transport
                                              ? server_labels_.at(client).at(id)
                                              : shards_[static_cast<std::size_t>(client)][static_cast<std::size_t>(id)].targets;
        model::ForwardCtx ctx = make_ctx(epoch, step, client, id);
        auto run = model::forward_trunk_with_loss(server_, batch[i], targets, ctx);
        out.loss_sum += run.output->value.data[0];
        ++out.loss_count;
        Tensor g = model::backward_segment(run, nullptr, server_grads);
        kern::active().scale(g.data.data(), inv_b, g.data.data(), g.data.size());
        if (cfg_.topology == Topology::Bidirectional) {
            GateOutcome go = gate_one(comp::Interface::S2F, client, id, g, wire::MsgType::GradientDown, &msgs,
                                      &sc.grads_down, &es);
            sc.grad_reused[i] = go.reused;
        } else {
            if (cfg_.use_transport) {
                Tensor cache_copy;
                wire::Message m;
                m.type = wire::MsgType::GradientDown;
                m.client_id = static_cast<std::uint16_t>(client);
                m.epoch = static_cast<std::uint32_t>(epoch);
                m.step = static_cast<std::uint32_t>(step);
                m.payload = tensor_payload(static_cast<std::uint64_t>(id), g, cfg_.quantize_int8, cache_copy);
                gated_payload_epoch_ += m.payload.size();
                msgs.push_back(std::move(m));
            } else {
                sc.grads_down[id] = std::move(g);
            }
        }
    }
    for (auto& [name, g] : server_grads)
        kern::active().scale(g.data.data(), inv_b, g.data.data(), g.data.size());
    auto sp = server_.adapter_params(model::Segment::Trunk);
    server_opt_->step(sp, server_grads);

    if (cfg_.use_transport)
        send_gated_batch(c.down, comp::Interface::S2F, client, epoch, step, step * cfg_.batch_size, sc.grad_reused,
                         msgs);
    return out;
}

void Engine::drain_downlink(int client, std::map<int, Tensor>& tensors, std::vector<bool>& reused) {
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    reused.assign(static_cast<std::size_t>(cfg_.batch_size), false);
    while (!c.down.empty()) {
        wire::Message m = c.down.recv();
        switch (m.type) {
            case wire::MsgType::GradientDown:
            case wire::MsgType::TrunkActivationDown:
            case wire::MsgType::FrontGradientDown: {
                auto [id, t] = decode_tensor_payload(m.payload);
                tensors.emplace(id, std::move(t));
                break;
            }
            case wire::MsgType::SkipNotice:
            case wire::MsgType::GradientSkip: {
                wire::SkipNotice n = wire::decode_skip_notice(m.payload);
                if (n.reused.size() != reused.size()) throw ProtocolError("skip notice batch-size mismatch");
                reused = n.reused;
                break;
            }
            default:
                throw ProtocolError(std::string("unexpected downlink message ") + wire::type_name(m.type));
        }
    }
}

void Engine::client_backward_phase_standard(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    (void)step;

    std::vector<Tensor> grads;
    if (cfg_.use_transport) {
        std::map<int, Tensor> received;
        std::vector<bool> reused;
        drain_downlink(client, received, reused);
        if (cfg_.topology == Topology::Bidirectional) {
            grads = assemble_server_batch(received, interfaces_.at(comp::Interface::S2F).receiver, client,
                                          comp::Interface::S2F, sc.sample_ids, reused);
        } else {
            for (int id : sc.sample_ids) {
                auto it = received.find(id);
                if (it == received.end()) throw ProtocolError("missing gradient for sample " + std::to_string(id));
                grads.push_back(std::move(it->second));
            }
        }
    } else {
        for (int id : sc.sample_ids) grads.push_back(sc.grads_down.at(id));
    }

    model::GradMap client_grads;
    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        if (cfg_.reuse_backward == ReuseBackward::Freeze && sc.reused_up[i]) continue;
        model::backward_segment(sc.front_runs[i], &grads[i], client_grads);
    }
    auto cp = c.model.adapter_params(model::Segment::Frontend);
    c.optimizer->step(cp, client_grads);
}

// ---- U-shape phases ----

void Engine::ushape_server_forward(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    const int epoch = epoch_done_ + 1;

    std::vector<Tensor> batch;
    if (cfg_.use_transport) {
        std::map<int, Tensor> uploads;
        drain_uplink(client, uploads, sc.reused_up);
        batch = assemble_server_batch(uploads, interfaces_.at(comp::Interface::F2S).receiver, client,
                                      comp::Interface::F2S, sc.sample_ids, sc.reused_up);
    } else {
        for (int id : sc.sample_ids) batch.push_back(sc.direct_up.at(id));
    }

    std::vector<wire::Message> msgs;
    std::vector<int> es{epoch, step};
    std::vector<bool> trunk_reused;
    std::map<int, Tensor> direct;
    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        const int id = sc.sample_ids[i];
        model::ForwardCtx ctx = make_ctx(epoch, step, client, id);
        sc.trunk_runs.push_back(model::forward_trunk(server_, batch[i], ctx));
        GateOutcome g = gate_one(comp::Interface::S2T, client, id, sc.trunk_runs.back().output->value,
                                 wire::MsgType::TrunkActivationDown, &msgs, &direct, &es);
        trunk_reused.push_back(g.reused);
    }
    sc.direct_down = std::move(direct);
    send_gated_batch(c.down, comp::Interface::S2T, client, epoch, step, step * cfg_.batch_size, trunk_reused, msgs);
}

void Engine::ushape_client_loss(int client, int step, StepOutcome& out) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    const int epoch = epoch_done_ + 1;

    std::vector<Tensor> trunk_out;
    if (cfg_.use_transport) {
        std::map<int, Tensor> received;
        std::vector<bool> reused;
        drain_downlink(client, received, reused);
        trunk_out = assemble_server_batch(received, interfaces_.at(comp::Interface::S2T).receiver, client,
                                          comp::Interface::S2T, sc.sample_ids, reused);
    } else {
        for (int id : sc.sample_ids) trunk_out.push_back(sc.direct_down.at(id));
    }

    std::vector<wire::Message> msgs;
    std::vector<int> es{epoch, step};
    std::vector<bool> grad_reused;
    std::map<int, Tensor> direct;
    const float inv_b = 1.0f / static_cast<float>(cfg_.batch_size);
    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        const int id = sc.sample_ids[i];
        const Sample& s = shards_[static_cast<std::size_t>(client)][static_cast<std::size_t>(id)];
        model::ForwardCtx ctx = make_ctx(epoch, step, client, id);
        auto run = model::forward_tail_with_loss(c.model, trunk_out[i], s.targets, ctx);
        out.loss_sum += run.output->value.data[0];
        ++out.loss_count;
        Tensor g = model::backward_segment(run, nullptr, sc.client_grads);
        kern::active().scale(g.data.data(), inv_b, g.data.data(), g.data.size());
        GateOutcome go =
            gate_one(comp::Interface::T2S, client, id, g, wire::MsgType::TailGradientUp, &msgs, &direct, &es);
        grad_reused.push_back(go.reused);
    }
    sc.direct_up = std::move(direct);
    send_gated_batch(c.up, comp::Interface::T2S, client, epoch, step, step * cfg_.batch_size, grad_reused, msgs);
}

void Engine::ushape_server_backward(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    const int epoch = epoch_done_ + 1;

    std::vector<Tensor> tail_grads;
    if (cfg_.use_transport) {
        std::map<int, Tensor> uploads;
        std::vector<bool> reused;
        drain_uplink(client, uploads, reused);
        tail_grads = assemble_server_batch(uploads, interfaces_.at(comp::Interface::T2S).receiver, client,
                                           comp::Interface::T2S, sc.sample_ids, reused);
    } else {
        for (int id : sc.sample_ids) tail_grads.push_back(sc.direct_up.at(id));
    }

    model::GradMap server_grads;
    std::vector<wire::Message> msgs;
    std::vector<int> es{epoch, step};
    std::vector<bool> front_reused;
    std::map<int, Tensor> direct;
    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        const int id = sc.sample_ids[i];
        Tensor g = model::backward_segment(sc.trunk_runs[i], &tail_grads[i], server_grads);
        GateOutcome go =
            gate_one(comp::Interface::S2F, client, id, g, wire::MsgType::FrontGradientDown, &msgs, &direct, &es);
        front_reused.push_back(go.reused);
    }
    sc.direct_down = std::move(direct);
    auto sp = server_.adapter_params(model::Segment::Trunk);
    server_opt_->step(sp, server_grads);
    send_gated_batch(c.down, comp::Interface::S2F, client, epoch, step, step * cfg_.batch_size, front_reused, msgs);
}

void Engine::ushape_client_backward(int client, int step) {
    BatchScratch& sc = scratch_[static_cast<std::size_t>(client)];
    ClientState& c = clients_[static_cast<std::size_t>(client)];
    (void)step;

    std::vector<Tensor> grads;
    if (cfg_.use_transport) {
        std::map<int, Tensor> received;
        std::vector<bool> reused;
        drain_downlink(client, received, reused);
        grads = assemble_server_batch(received, interfaces_.at(comp::Interface::S2F).receiver, client,
                                      comp::Interface::S2F, sc.sample_ids, reused);
    } else {
        for (int id : sc.sample_ids) grads.push_back(sc.direct_down.at(id));
    }

    for (std::size_t i = 0; i < sc.sample_ids.size(); ++i) {
        if (cfg_.reuse_backward == ReuseBackward::Freeze && sc.reused_up[i]) continue;
        model::backward_segment(sc.front_runs[i], &grads[i], sc.client_grads);
    }
    auto cp = c.model.adapter_params(model::Segment::Frontend);
    auto tp = c.model.adapter_params(model::Segment::Tail);
    cp.insert(tp.begin(), tp.end());
    c.optimizer->step(cp, sc.client_grads);
}

// ---- epoch driver ----

void Engine::for_each_client(const std::function<void(int)>& fn) {
    const int K = n_clients();
    if (cfg_.schedule == Schedule::Sequential || K == 1) {
        for (int i = 0; i < K; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int i = 0; i < K; ++i)
        workers.emplace_back([&, i] {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    for (auto& w : workers) w.join();
    if (err) std::rethrow_exception(err);
}

net::CommLedger Engine::merged_ledger() const {
    net::CommLedger l;
    for (const auto& c : clients_) {
        l.merge(c.up.tx_ledger());
        l.merge(c.down.tx_ledger());
    }
    return l;
}

bool Engine::audit_conservation() const {
    for (const auto& c : clients_) {
        if (!(c.up.tx_ledger() == c.up.rx_ledger())) return false;
        if (!(c.down.tx_ledger() == c.down.rx_ledger())) return false;
    }
    return true;
}

EpochReport Engine::run_epoch() {
    const int epoch = epoch_done_ + 1;
    if (epoch > cfg_.epochs) throw StateError("all configured epochs already ran");
    epoch_stats_.clear();
    gated_payload_epoch_ = 0;
    for (auto& c : clients_) {
        c.sim_sum = 0.0;
        c.sim_count = 0;
    }
    const net::CommLedger before = merged_ledger();

    double loss_sum = 0.0;
    int loss_count = 0;
    for (int step = 0; step < steps_per_epoch_; ++step) {
        if (cfg_.topology == Topology::UShape) {
            StepOutcome so;
            std::mutex so_mu;
            for_each_client([&](int i) { client_upload_phase(i, step); });
            for (int i = 0; i < n_clients(); ++i) ushape_server_forward(i, step);
            for_each_client([&](int i) {
                StepOutcome local;
                ushape_client_loss(i, step, local);
                std::lock_guard<std::mutex> lock(so_mu);
                so.loss_sum += local.loss_sum;
                so.loss_count += local.loss_count;
            });
            for (int i = 0; i < n_clients(); ++i) ushape_server_backward(i, step);
            for_each_client([&](int i) { ushape_client_backward(i, step); });
            loss_sum += so.loss_sum;
            loss_count += so.loss_count;
        } else {
            for_each_client([&](int i) { client_upload_phase(i, step); });
            for (int i = 0; i < n_clients(); ++i) {
                StepOutcome so = server_phase_standard(i, step);
                loss_sum += so.loss_sum;
                loss_count += so.loss_count;
            }
            for_each_client([&](int i) { client_backward_phase_standard(i, step); });
        }
        if (cfg_.aggregate_every > 0 && (step + 1) % cfg_.aggregate_every == 0 && step + 1 < steps_per_epoch_)
            aggregate_and_broadcast(epoch);
    }

    aggregate_and_broadcast(epoch);
    const double val_ppl = validation_ppl();
    if (cfg_.use_transport) {
        for (std::size_t i = 0; i < clients_.size(); ++i) {
            wire::Message m;
            m.type = wire::MsgType::Eval;
            m.client_id = static_cast<std::uint16_t>(i);
            m.epoch = static_cast<std::uint32_t>(epoch);
            ser::put_f32(m.payload, static_cast<float>(val_ppl));
            clients_[i].down.send(m);
            clients_[i].down.recv();  // client acknowledges by reading
        }
    }

    ledger_ = merged_ledger();
    EpochReport report;
    report.epoch = epoch;
    report.train_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    report.val_ppl = val_ppl;
    for (comp::Interface iface : gated_interfaces())
        report.theta[static_cast<std::size_t>(iface)] = theta_.at(iface);
    report.interfaces = epoch_stats_;
    report.bytes_up = ledger_.framed_bytes(net::Direction::Uplink) - before.framed_bytes(net::Direction::Uplink);
    report.bytes_down = ledger_.framed_bytes(net::Direction::Downlink) - before.framed_bytes(net::Direction::Downlink);
    report.payload_up = ledger_.payload_bytes(net::Direction::Uplink) - before.payload_bytes(net::Direction::Uplink);
    report.payload_down =
        ledger_.payload_bytes(net::Direction::Downlink) - before.payload_bytes(net::Direction::Downlink);
    report.latency_s = static_cast<double>(report.bytes_up) * 8.0 / cfg_.rates.uplink_bps +
                       static_cast<double>(report.bytes_down) * 8.0 / cfg_.rates.downlink_bps;

    for (comp::Interface iface : gated_interfaces()) theta_trace_[iface].push_back(theta_.at(iface));
    update_controllers(epoch, std::log(val_ppl), report);
    ++epoch_done_;
    return report;
}

std::vector<EpochReport> Engine::run_all() {
    std::vector<EpochReport> reports;
    while (epoch_done_ < cfg_.epochs) reports.push_back(run_epoch());
    return reports;
}

void Engine::aggregate_and_broadcast(int epoch) {
    const bool has_tail = cfg_.topology == Topology::UShape;
    std::vector<model::LoraAdapterSet> fronts, tails;
    if (cfg_.use_transport) {
        for (std::size_t i = 0; i < clients_.size(); ++i) {
            ser::Checkpoint ck;
            ck.config = "adapters";
            ckpt_add_set(ck, "front", clients_[i].model.adapters_for(model::Segment::Frontend));
            if (has_tail) ckpt_add_set(ck, "tail", clients_[i].model.adapters_for(model::Segment::Tail));
            wire::Message m;
            m.type = wire::MsgType::AdapterUpload;
            m.client_id = static_cast<std::uint16_t>(i);
            m.epoch = static_cast<std::uint32_t>(epoch);
            m.payload = ser::encode_checkpoint(ck);
            clients_[i].up.send(m);
        }
        for (std::size_t i = 0; i < clients_.size(); ++i) {
            wire::Message m = clients_[i].up.recv();
            if (m.type != wire::MsgType::AdapterUpload) throw ProtocolError("expected adapter upload");
            ser::Checkpoint ck = ser::decode_checkpoint(m.payload);
            fronts.push_back(ckpt_read_set(ck, "front", global_.adapters_for(model::Segment::Frontend)));
            if (has_tail) tails.push_back(ckpt_read_set(ck, "tail", global_.adapters_for(model::Segment::Tail)));
        }
    } else {
        for (auto& c : clients_) {
            fronts.push_back(c.model.adapters_for(model::Segment::Frontend));
            if (has_tail) tails.push_back(c.model.adapters_for(model::Segment::Tail));
        }
    }

    std::vector<int> sizes;
    for (const auto& s : shards_) sizes.push_back(static_cast<int>(s.size()));
    const std::vector<double> weights = fed::client_weights(sizes);
    model::LoraAdapterSet gf = fed::fedavg(fronts, weights);
    model::LoraAdapterSet gt;
    if (has_tail) gt = fed::fedavg(tails, weights);

    if (cfg_.use_transport) {
        ser::Checkpoint ck;
        ck.config = "adapters";
        ckpt_add_set(ck, "front", gf);
        if (has_tail) ckpt_add_set(ck, "tail", gt);
        const ser::Bytes payload = ser::encode_checkpoint(ck);
        for (std::size_t i = 0; i < clients_.size(); ++i) {
            wire::Message m;
            m.type = wire::MsgType::AdapterBroadcast;
            m.client_id = static_cast<std::uint16_t>(i);
            m.epoch = static_cast<std::uint32_t>(epoch);
            m.payload = payload;
            clients_[i].down.send(m);
            wire::Message got = clients_[i].down.recv();
            ser::Checkpoint seen = ser::decode_checkpoint(got.payload);
            clients_[i].model.set_adapters_for(model::Segment::Frontend,
                                               ckpt_read_set(seen, "front", gf));
            if (has_tail)
                clients_[i].model.set_adapters_for(model::Segment::Tail, ckpt_read_set(seen, "tail", gt));
        }
    } else {
        for (auto& c : clients_) {
            c.model.set_adapters_for(model::Segment::Frontend, gf);
            if (has_tail) c.model.set_adapters_for(model::Segment::Tail, gt);
        }
    }

    global_.set_adapters_for(model::Segment::Frontend, gf);
    if (has_tail) global_.set_adapters_for(model::Segment::Tail, gt);
    global_.set_adapters_for(model::Segment::Trunk, server_.adapters_for(model::Segment::Trunk));
}

double Engine::validation_ppl() {
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    pairs.reserve(val_set_.size());
    for (const Sample& s : val_set_) pairs.emplace_back(s.tokens, s.targets);
    return std::exp(model::mean_nll(global_, pairs));
}

void Engine::update_controllers(int epoch, double val_nll, const EpochReport& report) {
    ctrl_state_.ppl_history.push_back(report.val_ppl);
    if (epoch == 1) {
        ell0_ = val_nll;
        c0_ = gated_payload_epoch_;
    }
    const double comm_ratio = c0_ > 0 ? static_cast<double>(gated_payload_epoch_) / static_cast<double>(c0_) : 1.0;
    ctrl_state_.comm_ratio_history.push_back(comm_ratio);
    for (std::size_t i = 0; i < clients_.size() && i < ctrl_state_.sim_ema.size(); ++i)
        if (clients_[i].sim_count > 0)
            ctrl::update_ema(ctrl_state_.sim_ema[i],
                             static_cast<float>(clients_[i].sim_sum / static_cast<double>(clients_[i].sim_count)));
    ctrl_state_.progress = static_cast<float>(epoch) / static_cast<float>(cfg_.epochs);

    switch (cfg_.policy) {
        case Policy::Fixed:
            break;  // theta never moves
        case Policy::Bbc:
            for (comp::Interface iface : gated_interfaces())
                theta_[iface] = ctrl::bbc_next(cfg_.bbc, ctrl_state_.ppl_history, theta_.at(iface));
            break;
        case Policy::Ddpg: {
            const bool zero_flag = comm_ratio < cfg_.ddpg.zero_ratio;
            const bool full_flag = comm_ratio > cfg_.ddpg.full_ratio;
            for (comp::Interface iface : gated_interfaces()) {
                ctrl_state_.current_theta = theta_.at(iface);
                auto state_now = ctrl::build_state_vector(ctrl_state_, cfg_.state_slots);
                auto& pending = pending_transition_.at(iface);
                if (pending.has_value()) {
                    const float r = ctrl::reward(static_cast<float>(val_nll), static_cast<float>(ell0_),
                                                 static_cast<float>(gated_payload_epoch_),
                                                 static_cast<float>(c0_ > 0 ? c0_ : 1), zero_flag, full_flag,
                                                 cfg_.ddpg.alpha, cfg_.ddpg.beta, cfg_.ddpg.p_zero, cfg_.ddpg.p_full);
                    replays_.at(iface).push({pending->first, pending->second, r, state_now});
                    for (int u = 0; u < cfg_.ddpg_updates_per_epoch; ++u) agents_.at(iface)->update(replays_.at(iface));
                }
                agents_.at(iface)->decay_noise();
                const float next = agents_.at(iface)->act(state_now, true);
                pending = std::make_pair(state_now, next);
                theta_[iface] = next;
            }
            break;
        }
    }
}

bool Engine::audit_cache_coherence() const {
    for (const auto& [iface, gi] : interfaces_) {
        for (const auto& [key, full] : gi.receiver.entries) {
            auto it = gi.sender.entries.find(key);
            if (it == gi.sender.entries.end()) return false;
            const Tensor expect = cfg_.similarity_on_compressed ? comp::project(gi.projection, full) : full;
            if (!(expect == it->second)) return false;
        }
        if (gi.sender.entries.size() != gi.receiver.entries.size()) return false;
    }
    return true;
}

std::unique_ptr<Engine> make_oracle(EngineConfig cfg, const model::SplitModel& pretrained, std::vector<Shard> shards,
                                    Shard val_set) {
    cfg.use_transport = false;
    return std::make_unique<Engine>(std::move(cfg), pretrained, std::move(shards), std::move(val_set));
}

}  // namespace splitcom::eng
