#pragma once

#include <vector>

#include "splitcom/engine.hpp"

namespace splitcom::data {

struct CorpusConfig {
    int vocab_size = 32;
    int seq_len = 16;
    int train_size = 160;  // total across clients; must divide evenly
    int val_size = 32;
    int test_size = 32;
    int pretrain_size = 512;
    int n_clients = 4;
    std::uint64_t seed = 2024;

    void validate() const;
};

/// First-order Markov token source plus its partitioned draws. The four
/// splits come from independent derived streams, and the train set is cut
/// into equal, disjoint, exhaustive per-client shards.
struct Corpus {
    CorpusConfig cfg;
    std::vector<eng::Shard> train_shards;
    eng::Shard val;
    eng::Shard test;
    eng::Shard pretrain;
};

Corpus generate_corpus(const CorpusConfig& cfg);

/// (tokens, targets) pairs for mean_nll.
std::vector<std::pair<std::vector<int>, std::vector<int>>> as_eval_pairs(const eng::Shard& shard);

}  // namespace splitcom::data
