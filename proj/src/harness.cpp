#include "splitcom/harness.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "splitcom/kernels.hpp"
#include "splitcom/optimizer.hpp"
#include "splitcom/serialize.hpp"

namespace splitcom::run {

namespace fs = std::filesystem;
using nlohmann::json;

const char* kCsvHeader =
    "epoch,train_loss,val_ppl,theta_f2s,theta_s2t,theta_t2s,theta_s2f,"
    "sends_up,reuses_up,bytes_up,bytes_down,latency_s";

model::SplitModel pretrain_base(const model::ModelConfig& mc, const eng::Shard& pretrain_set,
                                const PretrainConfig& pc) {
    if (pretrain_set.empty()) throw ConfigError("pretraining set is empty");
    model::SplitModel m = model::build_model(mc, pc.seed);
    auto params = m.base_params();

    const int steps = static_cast<int>((pretrain_set.size() + pc.batch_size - 1) / pc.batch_size);
    opt::OptimizerConfig oc;
    oc.peak_lr = pc.peak_lr;
    oc.total_steps = pc.epochs * steps;
    opt::AdamW optimizer(oc);

    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        for (int step = 0; step < steps; ++step) {
            model::GradMap grads;
            int count = 0;
            for (int i = step * pc.batch_size;
                 i < std::min<int>((step + 1) * pc.batch_size, static_cast<int>(pretrain_set.size())); ++i) {
                model::ForwardCtx ctx;
                ctx.run_seed = pc.seed;
                ctx.epoch = epoch;
                ctx.step = step;
                ctx.sample_id = i;
                ctx.mode = model::TrainMode::FullBase;
                auto fwd = model::forward_full_with_loss(m, pretrain_set[i].tokens, pretrain_set[i].targets, ctx);
                (void)model::backward_segment(fwd, nullptr, grads);
                ++count;
            }
            const float inv = 1.0f / static_cast<float>(count);
            for (auto& [name, g] : grads)
                kern::active().scale(g.data.data(), inv, g.data.data(), g.data.size());
            optimizer.step(params, grads);
        }
    }
    return m;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names{"baseline"};
    for (const char* p : {"fixed", "bbc", "ddpg"})
        for (const char* t : {"standard", "bidirectional", "ushape"}) {
            names.push_back(std::string(p) + "_" + t);
            names.push_back(std::string(p) + "_" + t + "Q");
        }
    return names;
}

eng::EngineConfig preset_config(const std::string& name, const eng::EngineConfig& base) {
    eng::EngineConfig cfg = base;
    std::string key = name;
    if (!key.empty() && key.back() == 'Q') {
        cfg.quantize_int8 = true;
        key.pop_back();
    }
    if (key == "baseline") {
        cfg.topology = eng::Topology::Standard;
        cfg.policy = eng::Policy::Fixed;
        cfg.theta0 = 1.01f;  // force-send sentinel: no compression
        return cfg;
    }
    auto us = key.find('_');
    if (us == std::string::npos) throw ConfigError("unknown preset: " + name);
    const std::string policy = key.substr(0, us);
    const std::string topo = key.substr(us + 1);
    if (policy == "fixed")
        cfg.policy = eng::Policy::Fixed;
    else if (policy == "bbc")
        cfg.policy = eng::Policy::Bbc;
    else if (policy == "ddpg")
        cfg.policy = eng::Policy::Ddpg;
    else
        throw ConfigError("unknown preset: " + name);
    if (topo == "standard")
        cfg.topology = eng::Topology::Standard;
    else if (topo == "bidirectional")
        cfg.topology = eng::Topology::Bidirectional;
    else if (topo == "ushape")
        cfg.topology = eng::Topology::UShape;
    else
        throw ConfigError("unknown preset: " + name);

    if (cfg.topology == eng::Topology::UShape) {
        if (cfg.model.tail_layers == 0) cfg.model.tail_layers = 1;
        // reward profile for the four-interface topology
        cfg.ddpg.alpha = 1.5f;
        cfg.ddpg.beta = 2.0f;
        cfg.ddpg.ou_sigma0 = 0.005f;
    }
    return cfg;
}

namespace {

struct GatedTypes {
    std::vector<wire::MsgType> up;
    std::vector<wire::MsgType> down;
};

GatedTypes gated_types(eng::Topology t) {
    GatedTypes g;
    g.up = {wire::MsgType::ActivationUpload};
    if (t == eng::Topology::Bidirectional) g.down = {wire::MsgType::GradientDown};
    if (t == eng::Topology::UShape) {
        g.up.push_back(wire::MsgType::TailGradientUp);
        g.down = {wire::MsgType::TrunkActivationDown, wire::MsgType::FrontGradientDown};
    }
    return g;
}

std::uint64_t per_sample_payload(const eng::EngineConfig& cfg) {
    Tensor probe({cfg.model.seq_len, cfg.model.d_model});
    const std::size_t tensor_bytes =
        cfg.quantize_int8 ? ser::tensor_wire_size(comp::quantize_int8(probe)) : ser::tensor_wire_size(probe);
    return 8 + tensor_bytes;  // u64 sample id precedes the tensor
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

std::string csv_for(const RunResult& r) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& rep : r.reports) {
        os << rep.epoch << ',' << format_double(rep.train_loss) << ',' << format_double(rep.val_ppl);
        for (float t : rep.theta) os << ',' << format_double(t);
        os << ',' << rep.sends_up() << ',' << rep.reuses_up() << ',' << rep.bytes_up << ',' << rep.bytes_down << ','
           << format_double(rep.latency_s) << '\n';
    }
    return os.str();
}

std::string summary_json_for(const RunResult& r, std::uint64_t seed) {
    json j;
    j["preset"] = r.preset;
    j["seed"] = seed;
    j["comm_ratio_up"] = r.comm_ratio_up;
    j["comm_ratio_total"] = r.comm_ratio_total;
    j["final_val_ppl"] = r.final_val_ppl;
    j["wall_clock_s"] = r.wall_clock_s;
    return j.dump(2) + "\n";
}

RunResult run_preset(const std::string& preset, const HarnessConfig& hc, const model::SplitModel* pretrained) {
    eng::EngineConfig cfg = preset_config(preset, hc.engine);
    cfg.seed = hc.seed;

    data::CorpusConfig cc = hc.corpus;
    cc.seed = hc.seed;
    cc.vocab_size = cfg.model.vocab_size;
    cc.seq_len = cfg.model.seq_len;
    data::Corpus corpus = data::generate_corpus(cc);

    model::SplitModel local;
    if (pretrained == nullptr) {
        local = pretrain_base(cfg.model, corpus.pretrain, hc.pretrain);
        pretrained = &local;
    }

    const auto t0 = std::chrono::steady_clock::now();
    eng::Engine engine(cfg, *pretrained, corpus.train_shards, corpus.val);
    RunResult r;
    r.preset = preset;
    r.reports = engine.run_all();
    r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.final_val_ppl = r.reports.empty() ? 0.0 : r.reports.back().val_ppl;

    // communication ratio: gated payload actually sent vs. sending every
    // sample at every gate (what the force-send baseline does)
    const GatedTypes gt = gated_types(cfg.topology);
    const std::uint64_t per_sample = per_sample_payload(cfg);
    const std::uint64_t samples = static_cast<std::uint64_t>(cc.train_size) * cfg.epochs;
    std::uint64_t actual_up = 0, actual_down = 0;
    for (auto t : gt.up) actual_up += engine.ledger().payload_bytes(net::Direction::Uplink, t);
    for (auto t : gt.down) actual_down += engine.ledger().payload_bytes(net::Direction::Downlink, t);
    const std::uint64_t full_up = samples * per_sample * gt.up.size();
    const std::uint64_t full_down = samples * per_sample * gt.down.size();
    r.comm_ratio_up = full_up ? static_cast<double>(actual_up) / static_cast<double>(full_up) : 0.0;
    r.comm_ratio_total = (full_up + full_down)
                             ? static_cast<double>(actual_up + actual_down) / static_cast<double>(full_up + full_down)
                             : 0.0;

    // artifacts
    r.run_dir = (fs::path(hc.out_dir) / preset).string();
    fs::create_directories(r.run_dir);
    auto write_text = [&](const char* file, const std::string& text) {
        std::ofstream os(fs::path(r.run_dir) / file, std::ios::binary);
        os << text;
        if (!os) throw StateError(std::string("cannot write ") + file);
    };
    write_text("metrics.csv", csv_for(r));
    write_text("summary.json", summary_json_for(r, hc.seed));
    write_text("ledger.txt", engine.ledger().dump());
    write_text("config.txt", eng::config_summary(cfg, cc.n_clients, cc.train_size / cc.n_clients));

    ser::Checkpoint ck;
    ck.config = eng::config_summary(cfg, cc.n_clients, cc.train_size / cc.n_clients);
    for (const auto& [name, t] : engine.global_model().adapters.params()) ck.tensors.emplace_back(name, *t);
    ser::write_file((fs::path(r.run_dir) / "adapters.scmd").string(), ser::encode_checkpoint(ck));
    return r;
}

std::string compare_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("no run directories given");
    std::vector<json> summaries;
    for (const auto& dir : run_dirs) {
        std::ifstream is(fs::path(dir) / "summary.json");
        if (!is) throw StateError("missing summary.json in " + dir);
        summaries.push_back(json::parse(is));
    }
    const std::uint64_t seed0 = summaries.front().at("seed").get<std::uint64_t>();
    for (const auto& s : summaries)
        if (s.at("seed").get<std::uint64_t>() != seed0)
            throw ConfigError("cannot compare runs from different seeds");

    const double ppl0 = summaries.front().at("final_val_ppl").get<double>();
    std::ostringstream os;
    os << "preset final_val_ppl ppl_vs_first comm_ratio_up comm_ratio_total\n";
    for (const auto& s : summaries) {
        const double ppl = s.at("final_val_ppl").get<double>();
        os << s.at("preset").get<std::string>() << ' ' << format_double(ppl) << ' '
           << format_double(ppl0 != 0.0 ? ppl / ppl0 : 0.0) << ' '
           << format_double(s.at("comm_ratio_up").get<double>()) << ' '
           << format_double(s.at("comm_ratio_total").get<double>()) << '\n';
    }
    return os.str();
}

}  // namespace splitcom::run
