#include "splitcom/federation.hpp"

#include <cmath>

namespace splitcom::fed {

void AggregationConfig::validate() const {
    if (interval_steps < 0) throw ConfigError("aggregation interval must be >= 0");
}

std::vector<double> client_weights(const std::vector<int>& shard_sizes) {
    long long total = 0;
    for (int s : shard_sizes) {
        if (s <= 0) throw ConfigError("shard sizes must be positive");
        total += s;
    }
    if (total == 0) throw ConfigError("no shards");
    std::vector<double> w;
    w.reserve(shard_sizes.size());
    for (int s : shard_sizes) w.push_back(static_cast<double>(s) / static_cast<double>(total));
    return w;
}

void validate_weights(const std::vector<double>& weights, std::size_t n_sets) {
    if (weights.size() != n_sets) throw ConfigError("weight count does not match adapter-set count");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("weights must sum to 1");
}

namespace {

Tensor weighted_mean(const std::vector<const Tensor*>& ts, const std::vector<double>& weights) {
    for (const Tensor* t : ts)
        if (!t->same_shape(*ts.front())) throw ShapeError("fedavg tensor shape mismatch");
    Tensor out = Tensor::zeros(ts.front()->dims);
    // double accumulation keeps fedavg of identical sets exactly idempotent
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ts.size(); ++k) acc += weights[k] * static_cast<double>(ts[k]->data[i]);
        out.data[i] = static_cast<float>(acc);
    }
    return out;
}

}  // namespace

model::LoraAdapterSet fedavg(const std::vector<model::LoraAdapterSet>& sets, const std::vector<double>& weights) {
    if (sets.empty()) throw ConfigError("fedavg needs at least one adapter set");
    validate_weights(weights, sets.size());
    const auto& first = sets.front();
    for (const auto& s : sets)
        if (s.layer_begin != first.layer_begin || s.layer_end != first.layer_end || s.q.size() != first.q.size() ||
            s.v.size() != first.v.size())
            throw ShapeError("fedavg adapter-set structure mismatch");

    model::LoraAdapterSet out;
    out.layer_begin = first.layer_begin;
    out.layer_end = first.layer_end;
    auto avg_layer = [&](auto member, std::size_t layer) {
        std::vector<const Tensor*> as, bs;
        for (const auto& s : sets) {
            as.push_back(&(s.*member)[layer].a);
            bs.push_back(&(s.*member)[layer].b);
        }
        return model::LoraAdapter{weighted_mean(as, weights), weighted_mean(bs, weights)};
    };
    for (std::size_t l = 0; l < first.q.size(); ++l) out.q.push_back(avg_layer(&model::LoraAdapterSet::q, l));
    for (std::size_t l = 0; l < first.v.size(); ++l) out.v.push_back(avg_layer(&model::LoraAdapterSet::v, l));
    return out;
}

}  // namespace splitcom::fed
