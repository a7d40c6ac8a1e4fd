#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "splitcom/compression.hpp"
#include "splitcom/control.hpp"
#include "splitcom/federation.hpp"
#include "splitcom/model.hpp"
#include "splitcom/optimizer.hpp"
#include "splitcom/transport.hpp"

namespace splitcom::eng {

enum class Topology { Standard, Bidirectional, UShape };
enum class Policy { Fixed, Bbc, Ddpg };
enum class ReuseBackward { ThroughCurrent, Freeze };
enum class Schedule { Sequential, Concurrent };

const char* topology_name(Topology t);
const char* policy_name(Policy p);

struct Sample {
    std::vector<int> tokens;
    std::vector<int> targets;
};
using Shard = std::vector<Sample>;

struct EngineConfig {
    model::ModelConfig model;
    Topology topology = Topology::Standard;
    Policy policy = Policy::Fixed;
    /// Initial / fixed threshold. Values above 1 force Send on every gate
    /// (the no-compression baseline); below −1 force Reuse once a cache
    /// entry exists. Within [-1, 1] this is the fixed θ or the adaptive
    /// policies' starting point.
    float theta0 = 0.98f;
    bool quantize_int8 = false;
    bool similarity_on_compressed = true;  // false: compare full tensors
    ReuseBackward reuse_backward = ReuseBackward::ThroughCurrent;
    Schedule schedule = Schedule::Sequential;
    int epochs = 20;
    int batch_size = 4;
    float peak_lr = 1e-3f;
    int aggregate_every = 0;  // M in local steps; 0 = once per epoch
    int ddpg_updates_per_epoch = 1;
    int state_slots = 10;  // client EMA slots in the DDPG state vector
    net::RateModel rates;
    ctrl::BbcConfig bbc;
    ctrl::DdpgConfig ddpg;
    std::uint64_t seed = 1;
    /// Oracle switch: false runs the identical math with direct tensor
    /// hand-off (no framing, no gating, no ledger) for bit-identity checks.
    bool use_transport = true;

    void validate(int n_clients, int shard_size) const;
};

struct InterfaceStats {
    std::uint64_t sends = 0;
    std::uint64_t reuses = 0;
};

struct EpochReport {
    int epoch = 0;
    double train_loss = 0.0;
    double val_ppl = 0.0;
    // θ in interface order f2s, s2t, t2s, s2f; ungated slots report the
    // force-send sentinel 1.01
    std::array<float, 4> theta{1.01f, 1.01f, 1.01f, 1.01f};
    std::map<comp::Interface, InterfaceStats> interfaces;
    std::uint64_t bytes_up = 0;  // framed, this epoch only
    std::uint64_t bytes_down = 0;
    std::uint64_t payload_up = 0;
    std::uint64_t payload_down = 0;
    double latency_s = 0.0;

    std::uint64_t sends_up() const;
    std::uint64_t reuses_up() const;
};

/// Rows in original sample order, each taken from uploads (reused[i] false)
/// or the reuse cache (reused[i] true). Unresolvable ids are protocol errors.
std::vector<Tensor> assemble_server_batch(const std::map<int, Tensor>& uploads, const comp::ReuseCache& cache,
                                          int client_id, comp::Interface iface, const std::vector<int>& sample_ids,
                                          const std::vector<bool>& reused);

struct LabelAudit {
    bool pass = false;
    std::uint64_t label_bytes_uplink = 0;
};

/// U-shape fails on any uplink label byte; standard/bidirectional report the
/// (by-design) label traffic truthfully and pass.
LabelAudit label_flow_audit(const net::CommLedger& ledger, Topology topology);

/// One gated link endpoint pair: the sender's comparison cache and the
/// receiver's reuse cache, plus the shared projection.
struct GatedInterface {
    comp::Interface id = comp::Interface::F2S;
    comp::ProjectionMatrix projection;
    comp::ComparisonCache sender;
    comp::ReuseCache receiver;
};

class Engine {
   public:
    Engine(EngineConfig cfg, const model::SplitModel& pretrained, std::vector<Shard> shards, Shard val_set);

    EpochReport run_epoch();
    std::vector<EpochReport> run_all();

    const net::CommLedger& ledger() const { return ledger_; }
    const EngineConfig& config() const { return cfg_; }
    int n_clients() const { return static_cast<int>(shards_.size()); }
    int epochs_done() const { return epoch_done_; }

    /// Sender comparison entries must equal the projection of the receiver's
    /// cached tensors on every gated interface (bit-exact in compressed
    /// mode; direct equality otherwise).
    bool audit_cache_coherence() const;
    LabelAudit audit_labels() const { return label_flow_audit(ledger_, cfg_.topology); }
    net::LatencyBreakdown latency() const { return net::estimate_latency(ledger_, cfg_.rates); }

    /// Global (post-aggregation) model: shared base + aggregated client
    /// adapters + server trunk adapters.
    const model::SplitModel& global_model() const { return global_; }
    const std::vector<float>& theta_trace(comp::Interface iface) const;

    std::vector<comp::Interface> gated_interfaces() const;

    /// Sender/receiver byte accounting agrees per message type on every link.
    bool audit_conservation() const;

   private:
    struct ClientState {
        model::SplitModel model;
        std::unique_ptr<opt::AdamW> optimizer;
        net::Link up{net::Direction::Uplink};
        net::Link down{net::Direction::Downlink};
        double sim_sum = 0.0;
        std::uint64_t sim_count = 0;
    };

    struct StepOutcome {
        double loss_sum = 0.0;
        int loss_count = 0;
    };

    struct GateOutcome {
        bool reused = false;
        float similarity = 0.0f;
    };

    void init_interfaces();
    void send_hello(ClientState& c);
    float theta_for(comp::Interface iface) const;
    model::ForwardCtx make_ctx(int epoch, int step, int client, int sample) const;

    /// Gate one tensor: Send stashes the wire message in `out` (or hands the
    /// tensor over via `direct_out` in oracle mode) and commits both caches.
    GateOutcome gate_one(comp::Interface iface, int client, int sample, const Tensor& full, wire::MsgType msg_type,
                         std::vector<wire::Message>* out, std::map<int, Tensor>* direct_out,
                         std::vector<int>* epoch_step);
    /// Emits the batch's SkipNotice (when any row reused) followed by the
    /// stashed payload messages.
    void send_gated_batch(net::Link& link, comp::Interface iface, int client, int epoch, int step, int base_id,
                          const std::vector<bool>& reused, std::vector<wire::Message>& msgs);
    void drain_uplink(int client, std::map<int, Tensor>& uploads, std::vector<bool>& reused);
    void drain_downlink(int client, std::map<int, Tensor>& tensors, std::vector<bool>& reused);

    // per-batch phases; `step` is the 0-based batch index within the epoch
    void client_upload_phase(int client, int step);
    StepOutcome server_phase_standard(int client, int step);
    void client_backward_phase_standard(int client, int step);
    void ushape_server_forward(int client, int step);
    void ushape_client_loss(int client, int step, StepOutcome& out);
    void ushape_server_backward(int client, int step);
    void ushape_client_backward(int client, int step);

    void aggregate_and_broadcast(int epoch);
    double validation_ppl();
    void update_controllers(int epoch, double val_nll, const EpochReport& report);
    void for_each_client(const std::function<void(int)>& fn);
    net::CommLedger merged_ledger() const;

    EngineConfig cfg_;
    std::vector<Shard> shards_;
    Shard val_set_;
    std::vector<ClientState> clients_;
    model::SplitModel server_;  // trunk adapters live here
    std::unique_ptr<opt::AdamW> server_opt_;
    model::SplitModel global_;
    std::map<comp::Interface, GatedInterface> interfaces_;
    std::map<comp::Interface, float> theta_;
    std::map<comp::Interface, std::vector<float>> theta_trace_;
    std::map<comp::Interface, InterfaceStats> epoch_stats_;
    std::map<comp::Interface, std::unique_ptr<ctrl::DdpgAgent>> agents_;
    std::map<comp::Interface, ctrl::ReplayBuffer> replays_;
    std::map<comp::Interface, std::optional<std::pair<std::vector<float>, float>>> pending_transition_;
    ctrl::ControllerState ctrl_state_;
    net::CommLedger ledger_;
    std::map<int, std::map<int, std::vector<int>>> server_labels_;  // client -> sample -> targets
    std::mutex gate_mu_;  // guards caches + counters during parallel phases
    double ell0_ = 0.0;           // epoch-1 validation NLL (reward anchor)
    std::uint64_t c0_ = 0;        // epoch-1 gated payload bytes
    std::uint64_t gated_payload_epoch_ = 0;
    int epoch_done_ = 0;
    int steps_per_epoch_ = 0;

    // scratch shared between phases of one step (indexed by client)
    struct BatchScratch {
        std::vector<model::SegmentRun> front_runs;
        std::vector<int> sample_ids;
        std::vector<bool> reused_up;
        std::map<int, Tensor> direct_up;    // oracle-mode hand-off (uplink)
        std::map<int, Tensor> direct_down;  // oracle-mode hand-off (downlink)
        std::vector<model::SegmentRun> trunk_runs;
        std::map<int, Tensor> grads_down;  // sample -> cut gradient
        std::vector<bool> grad_reused;
        model::GradMap client_grads;  // U-shape: tail (C1) + frontend (C2)
    };
    std::vector<BatchScratch> scratch_;
};

/// Stable flat key=value rendering of the fully resolved run configuration;
/// hashed into SessionHello and written alongside run artifacts.
std::string config_summary(const EngineConfig& cfg, int n_clients, int shard_size);

/// Reference trajectory without the protocol: identical segment math, direct
/// tensor hand-off, no gating, no wire. Returns per-epoch reports (bytes and
/// latency zero) and leaves the trained global model in the engine.
std::unique_ptr<Engine> make_oracle(EngineConfig cfg, const model::SplitModel& pretrained, std::vector<Shard> shards,
                                    Shard val_set);

}  // namespace splitcom::eng
