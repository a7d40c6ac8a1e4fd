#include "splitcom/model.hpp"

#include <cmath>

#include "splitcom/ops.hpp"
#include "splitcom/rng.hpp"

namespace splitcom::model {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || seq_len < 1) throw ConfigError("non-positive model dims");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (frontend_layers < 0 || tail_layers < 0) throw ConfigError("negative segment sizes");
    if (frontend_layers + tail_layers >= n_layers) throw ConfigError("frontend_layers + tail_layers must be < n_layers");
    if (frontend_layers < 1) throw ConfigError("frontend needs at least one layer");
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
    if (lora_dropout < 0.0f || lora_dropout >= 1.0f) throw ConfigError("lora_dropout must be in [0, 1)");
}

std::map<std::string, Tensor*> LoraAdapterSet::params() {
    std::map<std::string, Tensor*> out;
    for (int l = layer_begin; l < layer_end; ++l) {
        const std::string p = "blk" + std::to_string(l);
        out[p + ".q.A"] = &q[l - layer_begin].a;
        out[p + ".q.B"] = &q[l - layer_begin].b;
        out[p + ".v.A"] = &v[l - layer_begin].a;
        out[p + ".v.B"] = &v[l - layer_begin].b;
    }
    return out;
}

std::map<std::string, const Tensor*> LoraAdapterSet::params() const {
    std::map<std::string, const Tensor*> out;
    for (auto& [k, t] : const_cast<LoraAdapterSet*>(this)->params()) out[k] = t;
    return out;
}

std::pair<int, int> SplitModel::layer_range(Segment seg) const {
    switch (seg) {
        case Segment::Frontend:
            return {0, cfg.frontend_layers};
        case Segment::Trunk:
            return {cfg.trunk_begin(), cfg.trunk_end()};
        case Segment::Tail:
            return {cfg.trunk_end(), cfg.n_layers};
    }
    throw ConfigError("bad segment");
}

LoraAdapterSet SplitModel::adapters_for(Segment seg) const {
    auto [b, e] = layer_range(seg);
    LoraAdapterSet out;
    out.layer_begin = b;
    out.layer_end = e;
    for (int l = b; l < e; ++l) {
        out.q.push_back(adapters.q[l]);
        out.v.push_back(adapters.v[l]);
    }
    return out;
}

void SplitModel::set_adapters_for(Segment seg, const LoraAdapterSet& set) {
    auto [b, e] = layer_range(seg);
    if (set.layer_begin != b || set.layer_end != e) throw ShapeError("adapter set does not match segment layers");
    for (int l = b; l < e; ++l) {
        adapters.q[l] = set.q[l - b];
        adapters.v[l] = set.v[l - b];
    }
}

std::map<std::string, Tensor*> SplitModel::adapter_params(Segment seg) {
    auto [b, e] = layer_range(seg);
    std::map<std::string, Tensor*> out;
    for (int l = b; l < e; ++l) {
        const std::string p = "blk" + std::to_string(l);
        out[p + ".q.A"] = &adapters.q[l].a;
        out[p + ".q.B"] = &adapters.q[l].b;
        out[p + ".v.A"] = &adapters.v[l].a;
        out[p + ".v.B"] = &adapters.v[l].b;
    }
    return out;
}

std::map<std::string, Tensor*> SplitModel::base_params() {
    std::map<std::string, Tensor*> out;
    out["tok_emb"] = &base.tok_emb;
    out["pos_emb"] = &base.pos_emb;
    out["lnf.g"] = &base.lnf_g;
    out["lnf.b"] = &base.lnf_b;
    out["head"] = &base.head;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "blk" + std::to_string(l);
        BlockWeights& blk = base.blocks[l];
        out[p + ".ln1.g"] = &blk.ln1_g;
        out[p + ".ln1.b"] = &blk.ln1_b;
        out[p + ".wq"] = &blk.wq;
        out[p + ".wk"] = &blk.wk;
        out[p + ".wv"] = &blk.wv;
        out[p + ".wo"] = &blk.wo;
        out[p + ".ln2.g"] = &blk.ln2_g;
        out[p + ".ln2.b"] = &blk.ln2_b;
        out[p + ".w1"] = &blk.w1;
        out[p + ".b1"] = &blk.b1;
        out[p + ".w2"] = &blk.w2;
        out[p + ".b2"] = &blk.b2;
    }
    return out;
}

namespace {

Tensor init_weight(Rng& rng, std::vector<int> dims, float std_dev) {
    Tensor t = ops::gaussian(rng, std::move(dims));
    for (auto& v : t.data) v *= std_dev;
    return t;
}

}  // namespace

SplitModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitModel m;
    m.cfg = cfg;
    const int d = cfg.d_model;
    Rng rng(Rng::derive(seed, 0x6d6f64656cull));  // base weights stream
    m.base.tok_emb = init_weight(rng, {cfg.vocab_size, d}, 0.02f);
    m.base.pos_emb = init_weight(rng, {cfg.seq_len, d}, 0.02f);
    m.base.lnf_g = Tensor::full({d}, 1.0f);
    m.base.lnf_b = Tensor::zeros({d});
    m.base.head = init_weight(rng, {d, cfg.vocab_size}, 0.02f);
    const float proj_std = 0.02f;
    for (int l = 0; l < cfg.n_layers; ++l) {
        BlockWeights blk;
        blk.ln1_g = Tensor::full({d}, 1.0f);
        blk.ln1_b = Tensor::zeros({d});
        blk.wq = init_weight(rng, {d, d}, proj_std);
        blk.wk = init_weight(rng, {d, d}, proj_std);
        blk.wv = init_weight(rng, {d, d}, proj_std);
        blk.wo = init_weight(rng, {d, d}, proj_std);
        blk.ln2_g = Tensor::full({d}, 1.0f);
        blk.ln2_b = Tensor::zeros({d});
        blk.w1 = init_weight(rng, {d, 4 * d}, proj_std);
        blk.b1 = Tensor::zeros({4 * d});
        blk.w2 = init_weight(rng, {4 * d, d}, proj_std);
        blk.b2 = Tensor::zeros({d});
        m.base.blocks.push_back(std::move(blk));
    }
    // LoRA: A ~ N(0, 1/r), B = 0, so the initial adapter delta is exactly zero.
    Rng arng(Rng::derive(seed, 0x6c6f7261ull));
    m.adapters.layer_begin = 0;
    m.adapters.layer_end = cfg.n_layers;
    const float a_std = 1.0f / std::sqrt(static_cast<float>(cfg.lora_rank));
    for (int l = 0; l < cfg.n_layers; ++l) {
        m.adapters.q.push_back({init_weight(arng, {d, cfg.lora_rank}, a_std), Tensor::zeros({cfg.lora_rank, d})});
        m.adapters.v.push_back({init_weight(arng, {d, cfg.lora_rank}, a_std), Tensor::zeros({cfg.lora_rank, d})});
    }
    return m;
}

namespace {

struct ParamRefs {
    std::vector<std::pair<std::string, ad::VarPtr>>* sink;

    ad::VarPtr track(const std::string& name, const Tensor& t, bool trainable) {
        auto v = ad::leaf(t, trainable, name);
        if (trainable && sink != nullptr) sink->push_back({name, v});
        return v;
    }
};

Tensor causal_mask(int seq) {
    Tensor m({seq, seq});
    for (int i = 0; i < seq; ++i)
        for (int j = i + 1; j < seq; ++j) m.at2(i, j) = -1e9f;
    return m;
}

ad::VarPtr lora_delta(const ad::VarPtr& h, const LoraAdapter& ad_pair, const ModelConfig& cfg,
                      const ForwardCtx& ctx, int layer, int which, ParamRefs& refs, bool trainable) {
    const std::string p = "blk" + std::to_string(layer) + (which == 0 ? ".q" : ".v");
    auto a = refs.track(p + ".A", ad_pair.a, trainable);
    auto b = refs.track(p + ".B", ad_pair.b, trainable);
    ad::VarPtr in = h;
    if (ctx.training && cfg.lora_dropout > 0.0f) {
        Rng drop(Rng::derive(ctx.run_seed, 0x64726f70ull,
                             (static_cast<std::uint64_t>(ctx.epoch) << 32) | static_cast<std::uint32_t>(ctx.step),
                             (static_cast<std::uint64_t>(ctx.client_id) << 32) |
                                 static_cast<std::uint32_t>(ctx.sample_id),
                             static_cast<std::uint64_t>(layer) * 2 + which));
        in = ad::dropout(in, cfg.lora_dropout, drop);
    }
    const float scaling = cfg.lora_scale / static_cast<float>(cfg.lora_rank);
    return ad::scale(ad::matmul(ad::matmul(in, a), b), scaling);
}

ad::VarPtr block_forward(SplitModel& m, int layer, ad::VarPtr x, const ForwardCtx& ctx, ParamRefs& refs) {
    const ModelConfig& cfg = m.cfg;
    const bool base_trainable = ctx.mode == TrainMode::FullBase;
    const bool lora_active = ctx.mode == TrainMode::AdaptersOnly;
    BlockWeights& blk = m.base.blocks[layer];
    const std::string p = "blk" + std::to_string(layer);

    auto ln1g = refs.track(p + ".ln1.g", blk.ln1_g, base_trainable);
    auto ln1b = refs.track(p + ".ln1.b", blk.ln1_b, base_trainable);
    auto h = ad::layer_norm(x, ln1g, ln1b);

    auto wq = refs.track(p + ".wq", blk.wq, base_trainable);
    auto wk = refs.track(p + ".wk", blk.wk, base_trainable);
    auto wv = refs.track(p + ".wv", blk.wv, base_trainable);
    auto q = ad::matmul(h, wq);
    auto k = ad::matmul(h, wk);
    auto v = ad::matmul(h, wv);
    if (lora_active) {
        q = ad::add(q, lora_delta(h, m.adapters.q[layer], cfg, ctx, layer, 0, refs, true));
        v = ad::add(v, lora_delta(h, m.adapters.v[layer], cfg, ctx, layer, 1, refs, true));
    }

    const int seq = x->value.dims[0];
    const int hd = cfg.head_dim();
    const Tensor mask = causal_mask(seq);
    std::vector<ad::VarPtr> heads;
    for (int hidx = 0; hidx < cfg.n_heads; ++hidx) {
        auto qh = ad::slice_cols(q, hidx * hd, hd);
        auto kh = ad::slice_cols(k, hidx * hd, hd);
        auto vh = ad::slice_cols(v, hidx * hd, hd);
        auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0f / std::sqrt(static_cast<float>(hd)));
        auto probs = ad::softmax_rows(ad::add_const(scores, mask));
        heads.push_back(ad::matmul(probs, vh));
    }
    auto wo = refs.track(p + ".wo", blk.wo, base_trainable);
    x = ad::add(x, ad::matmul(ad::concat_cols(heads), wo));

    auto ln2g = refs.track(p + ".ln2.g", blk.ln2_g, base_trainable);
    auto ln2b = refs.track(p + ".ln2.b", blk.ln2_b, base_trainable);
    auto h2 = ad::layer_norm(x, ln2g, ln2b);
    auto w1 = refs.track(p + ".w1", blk.w1, base_trainable);
    auto b1 = refs.track(p + ".b1", blk.b1, base_trainable);
    auto w2 = refs.track(p + ".w2", blk.w2, base_trainable);
    auto b2 = refs.track(p + ".b2", blk.b2, base_trainable);
    auto mlp = ad::add_rowwise(ad::matmul(ad::gelu(ad::add_rowwise(ad::matmul(h2, w1), b1)), w2), b2);
    return ad::add(x, mlp);
}

ad::VarPtr head_logits(SplitModel& m, ad::VarPtr x, const ForwardCtx& ctx, ParamRefs& refs) {
    const bool base_trainable = ctx.mode == TrainMode::FullBase;
    auto lnfg = refs.track("lnf.g", m.base.lnf_g, base_trainable);
    auto lnfb = refs.track("lnf.b", m.base.lnf_b, base_trainable);
    auto head = refs.track("head", m.base.head, base_trainable);
    return ad::matmul(ad::layer_norm(x, lnfg, lnfb), head);
}

ad::VarPtr run_layers(SplitModel& m, ad::VarPtr x, int begin, int end, const ForwardCtx& ctx, ParamRefs& refs) {
    for (int l = begin; l < end; ++l) x = block_forward(m, l, x, ctx, refs);
    return x;
}

}  // namespace

SegmentRun forward_frontend(SplitModel& m, const std::vector<int>& tokens, const ForwardCtx& ctx) {
    if (static_cast<int>(tokens.size()) != m.cfg.seq_len) throw ShapeError("frontend token length mismatch");
    SegmentRun run;
    ParamRefs refs{&run.params};
    const bool base_trainable = ctx.mode == TrainMode::FullBase;
    auto tok = refs.track("tok_emb", m.base.tok_emb, base_trainable);
    auto pos = refs.track("pos_emb", m.base.pos_emb, base_trainable);
    auto x = ad::add(ad::embed(tokens, tok), pos);
    run.output = run_layers(m, x, 0, m.cfg.frontend_layers, ctx, refs);
    return run;
}

SegmentRun forward_trunk(SplitModel& m, const Tensor& activation, const ForwardCtx& ctx) {
    require_shape(activation, {m.cfg.seq_len, m.cfg.d_model}, "trunk activation");
    SegmentRun run;
    ParamRefs refs{&run.params};
    run.input_leaf = ad::leaf(activation, true);
    run.output = run_layers(m, run.input_leaf, m.cfg.trunk_begin(), m.cfg.trunk_end(), ctx, refs);
    return run;
}

SegmentRun forward_trunk_with_loss(SplitModel& m, const Tensor& activation, const std::vector<int>& targets,
                                   const ForwardCtx& ctx) {
    if (m.cfg.tail_layers != 0) throw StateError("trunk-with-loss is a standard-topology operation");
    require_shape(activation, {m.cfg.seq_len, m.cfg.d_model}, "trunk activation");
    SegmentRun run;
    ParamRefs refs{&run.params};
    run.input_leaf = ad::leaf(activation, true);
    auto x = run_layers(m, run.input_leaf, m.cfg.trunk_begin(), m.cfg.trunk_end(), ctx, refs);
    run.output = ad::cross_entropy_loss(head_logits(m, x, ctx, refs), targets);
    return run;
}

SegmentRun forward_tail_with_loss(SplitModel& m, const Tensor& trunk_activation, const std::vector<int>& targets,
                                  const ForwardCtx& ctx) {
    if (m.cfg.tail_layers == 0) throw StateError("tail loss requires a U-shape configuration");
    require_shape(trunk_activation, {m.cfg.seq_len, m.cfg.d_model}, "tail activation");
    SegmentRun run;
    ParamRefs refs{&run.params};
    run.input_leaf = ad::leaf(trunk_activation, true);
    auto x = run_layers(m, run.input_leaf, m.cfg.trunk_end(), m.cfg.n_layers, ctx, refs);
    run.output = ad::cross_entropy_loss(head_logits(m, x, ctx, refs), targets);
    return run;
}

SegmentRun forward_full_with_loss(SplitModel& m, const std::vector<int>& tokens, const std::vector<int>& targets,
                                  const ForwardCtx& ctx) {
    SegmentRun run;
    ParamRefs refs{&run.params};
    const bool base_trainable = ctx.mode == TrainMode::FullBase;
    auto tok = refs.track("tok_emb", m.base.tok_emb, base_trainable);
    auto pos = refs.track("pos_emb", m.base.pos_emb, base_trainable);
    auto x = ad::add(ad::embed(tokens, tok), pos);
    x = run_layers(m, x, 0, m.cfg.n_layers, ctx, refs);
    run.output = ad::cross_entropy_loss(head_logits(m, x, ctx, refs), targets);
    return run;
}

Tensor backward_segment(SegmentRun& run, const Tensor* upstream_grad, GradMap& grads) {
    if (!run.output) throw StateError("backward without a recorded forward");
    if (run.consumed) throw StateError("segment run already consumed by backward");
    run.consumed = true;
    ad::backward(run.output, upstream_grad);
    for (auto& [name, var] : run.params) {
        if (!var->grad_ready) var->ensure_grad();
        auto it = grads.find(name);
        if (it == grads.end()) {
            grads.emplace(name, var->grad);
        } else {
            if (!it->second.same_shape(var->grad)) throw ShapeError("gradient accumulation shape mismatch");
            for (std::size_t i = 0; i < var->grad.data.size(); ++i) it->second.data[i] += var->grad.data[i];
        }
    }
    if (run.input_leaf && run.input_leaf->grad_ready) return run.input_leaf->grad;
    if (run.input_leaf) return Tensor::zeros(run.input_leaf->value.dims);
    return {};
}

double mean_nll(SplitModel& m, const std::vector<std::pair<std::vector<int>, std::vector<int>>>& samples) {
    if (samples.empty()) throw ConfigError("mean_nll over empty sample set");
    ForwardCtx ctx;
    ctx.training = false;
    double total = 0.0;
    for (const auto& [tokens, targets] : samples) {
        SegmentRun run = forward_full_with_loss(m, tokens, targets, ctx);
        total += run.output->value.data[0];
    }
    return total / static_cast<double>(samples.size());
}

}  // namespace splitcom::model
