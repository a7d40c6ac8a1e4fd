#pragma once

#include <vector>

#include "splitcom/model.hpp"

namespace splitcom::fed {

struct AggregationConfig {
    int interval_steps = 0;  // M; 0 means once per epoch
    void validate() const;
};

/// |D_i| / |D| weights from per-client sample counts.
std::vector<double> client_weights(const std::vector<int>& shard_sizes);

/// Throws ConfigError unless the weights match the set count and sum to 1
/// within 1e-9 (all nonnegative).
void validate_weights(const std::vector<double>& weights, std::size_t n_sets);

/// Elementwise weighted mean of structurally identical adapter sets; A and B
/// matrices are averaged separately.
model::LoraAdapterSet fedavg(const std::vector<model::LoraAdapterSet>& sets, const std::vector<double>& weights);

}  // namespace splitcom::fed
