#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "splitcom/graph.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::model {

struct ModelConfig {
    int vocab_size = 32;
    int d_model = 32;
    int n_heads = 2;
    int n_layers = 4;
    int seq_len = 16;
    int lora_rank = 8;
    float lora_scale = 4.0f;
    float lora_dropout = 0.1f;
    int frontend_layers = 1;
    int tail_layers = 0;  // 1 in U-shape

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int trunk_begin() const { return frontend_layers; }
    int trunk_end() const { return n_layers - tail_layers; }
};

struct BlockWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

struct BaseWeights {
    Tensor tok_emb;  // [V, d]
    Tensor pos_emb;  // [seq, d]
    std::vector<BlockWeights> blocks;
    Tensor lnf_g, lnf_b;
    Tensor head;  // [d, V]
};

/// Per-layer LoRA pair on the query and value projections.
struct LoraAdapter {
    Tensor a;  // [d, r]
    Tensor b;  // [r, d]
};

/// Adapters for a contiguous layer range [begin, end).
struct LoraAdapterSet {
    int layer_begin = 0;
    int layer_end = 0;
    std::vector<LoraAdapter> q;  // indexed by layer - layer_begin
    std::vector<LoraAdapter> v;

    std::map<std::string, Tensor*> params();
    std::map<std::string, const Tensor*> params() const;
};

enum class Segment { Frontend, Trunk, Tail };

/// Frozen base weights plus LoRA adapters, partitioned at the configured cut
/// points. Base weights never change after build (pretraining mutates them
/// through base_params() before the model is handed to the protocol).
struct SplitModel {
    ModelConfig cfg;
    BaseWeights base;
    LoraAdapterSet adapters;  // all layers

    LoraAdapterSet adapters_for(Segment seg) const;
    void set_adapters_for(Segment seg, const LoraAdapterSet& set);
    std::map<std::string, Tensor*> adapter_params(Segment seg);
    std::map<std::string, Tensor*> base_params();
    std::pair<int, int> layer_range(Segment seg) const;
};

SplitModel build_model(const ModelConfig& cfg, std::uint64_t seed);

enum class TrainMode { AdaptersOnly, FullBase };

/// Identifies one forward pass for replayable dropout seeding.
struct ForwardCtx {
    std::uint64_t run_seed = 0;
    int epoch = 0;
    int step = 0;
    int client_id = 0;
    int sample_id = 0;
    bool training = true;
    TrainMode mode = TrainMode::AdaptersOnly;
};

/// Recorded forward pass of one sample through one segment; holds the tape so
/// gradients can be pushed back through it later.
struct SegmentRun {
    ad::VarPtr input_leaf;  // null for the frontend (token input has no gradient)
    ad::VarPtr output;      // cut activation, or scalar loss for loss-bearing runs
    std::vector<std::pair<std::string, ad::VarPtr>> params;
    bool consumed = false;
};

using GradMap = std::map<std::string, Tensor>;

/// Embedding plus the frontend blocks; output value is [seq, d].
SegmentRun forward_frontend(SplitModel& m, const std::vector<int>& tokens, const ForwardCtx& ctx);
/// Trunk blocks only (U-shape); output dims equal input dims.
SegmentRun forward_trunk(SplitModel& m, const Tensor& activation, const ForwardCtx& ctx);
/// Trunk blocks + final norm + head + loss (standard topology; labels on server).
SegmentRun forward_trunk_with_loss(SplitModel& m, const Tensor& activation, const std::vector<int>& targets,
                                   const ForwardCtx& ctx);
/// Tail blocks + final norm + head + loss (U-shape; labels stay on the client).
SegmentRun forward_tail_with_loss(SplitModel& m, const Tensor& trunk_activation, const std::vector<int>& targets,
                                  const ForwardCtx& ctx);

/// Reverse sweep over a recorded run. For loss-bearing runs upstream_grad is
/// null; otherwise it seeds the cut output. Adapter (or base) gradients are
/// accumulated into grads; returns the gradient w.r.t. the segment input
/// (empty for the frontend).
Tensor backward_segment(SegmentRun& run, const Tensor* upstream_grad, GradMap& grads);

/// Whole-model loss for one sample (pretraining and the unsplit oracle path).
SegmentRun forward_full_with_loss(SplitModel& m, const std::vector<int>& tokens, const std::vector<int>& targets,
                                  const ForwardCtx& ctx);

/// Mean token NLL over a set of (tokens, targets) pairs, eval mode.
double mean_nll(SplitModel& m, const std::vector<std::pair<std::vector<int>, std::vector<int>>>& samples);

}  // namespace splitcom::model
