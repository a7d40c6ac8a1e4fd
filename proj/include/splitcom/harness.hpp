#pragma once

#include <string>
#include <vector>

#include "splitcom/corpus.hpp"
#include "splitcom/engine.hpp"

namespace splitcom::run {

/// Full-base pretraining pass; the result is frozen and shared by every
/// protocol run (only adapters train afterwards).
struct PretrainConfig {
    int epochs = 8;
    int batch_size = 8;
    float peak_lr = 3e-3f;
    std::uint64_t seed = 5;
};

model::SplitModel pretrain_base(const model::ModelConfig& mc, const eng::Shard& pretrain_set,
                                const PretrainConfig& pc);

/// Pinned CSV schema for per-epoch metrics; golden-tested downstream.
extern const char* kCsvHeader;

struct HarnessConfig {
    std::string out_dir = "runs";
    std::uint64_t seed = 2024;  // drives corpus, pretraining, and the run
    data::CorpusConfig corpus;
    eng::EngineConfig engine;  // base settings; the preset overrides
    PretrainConfig pretrain;
};

/// Preset names: "baseline", or policy_topology with an optional trailing Q
/// for the INT8 wire (fixed|bbc|ddpg x standard|bidirectional|ushape, e.g.
/// "bbc_ushape", "fixed_standardQ").
std::vector<std::string> preset_names();
eng::EngineConfig preset_config(const std::string& name, const eng::EngineConfig& base);

struct RunResult {
    std::string preset;
    std::string run_dir;
    std::vector<eng::EpochReport> reports;
    double comm_ratio_up = 1.0;     // gated uplink payload vs send-everything
    double comm_ratio_total = 1.0;  // both directions, gated types only
    double final_val_ppl = 0.0;
    double wall_clock_s = 0.0;
};

/// Runs one preset end to end and writes metrics.csv, summary.json,
/// ledger.txt, config.txt, and adapters.scmd into <out_dir>/<preset>.
/// A caller-supplied pretrained model skips the pretraining pass.
RunResult run_preset(const std::string& preset, const HarnessConfig& hc,
                     const model::SplitModel* pretrained = nullptr);

/// Text table comparing finished run directories (ratios against the first).
/// Mixing runs from different seeds is a configuration error.
std::string compare_runs(const std::vector<std::string>& run_dirs);

std::string csv_for(const RunResult& r);
std::string summary_json_for(const RunResult& r, std::uint64_t seed);

}  // namespace splitcom::run
