#include "splitcom/corpus.hpp"

#include "splitcom/rng.hpp"

namespace splitcom::data {

void CorpusConfig::validate() const {
    if (vocab_size < 2 || vocab_size > 256) throw ConfigError("vocab_size must be in [2, 256]");
    if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
    if (n_clients < 1) throw ConfigError("n_clients must be positive");
    if (train_size <= 0 || train_size % n_clients != 0)
        throw ConfigError("train_size must be a positive multiple of n_clients");
    if (val_size <= 0 || test_size <= 0 || pretrain_size <= 0) throw ConfigError("split sizes must be positive");
}

namespace {

/// Row-stochastic transition table. Squaring the uniform draws skews each row
/// toward a few likely successors, so the chain has learnable structure.
std::vector<double> transition_table(const CorpusConfig& cfg) {
    Rng rng(Rng::derive(cfg.seed, 0x6d61726b6f76ull));
    std::vector<double> table(static_cast<std::size_t>(cfg.vocab_size) * cfg.vocab_size);
    for (int s = 0; s < cfg.vocab_size; ++s) {
        double sum = 0.0;
        double* row = table.data() + static_cast<std::size_t>(s) * cfg.vocab_size;
        for (int t = 0; t < cfg.vocab_size; ++t) {
            double u = rng.uniform();
            row[t] = u * u;
            sum += row[t];
        }
        for (int t = 0; t < cfg.vocab_size; ++t) row[t] /= sum;
    }
    return table;
}

eng::Shard draw_split(const CorpusConfig& cfg, const std::vector<double>& table, std::uint64_t split_tag, int count) {
    Rng rng(Rng::derive(cfg.seed, 0x73706c6974ull, split_tag));
    eng::Shard out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        eng::Sample s;
        int state = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size)));
        s.tokens.push_back(state);
        for (int j = 0; j < cfg.seq_len; ++j) {
            double u = rng.uniform();
            const double* row = table.data() + static_cast<std::size_t>(state) * cfg.vocab_size;
            double acc = 0.0;
            int next = cfg.vocab_size - 1;
            for (int t = 0; t < cfg.vocab_size; ++t) {
                acc += row[t];
                if (u <= acc) {
                    next = t;
                    break;
                }
            }
            s.tokens.push_back(next);
            state = next;
        }
        s.targets.assign(s.tokens.begin() + 1, s.tokens.end());
        s.tokens.pop_back();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    const std::vector<double> table = transition_table(cfg);

    Corpus c;
    c.cfg = cfg;
    eng::Shard train = draw_split(cfg, table, 1, cfg.train_size);
    c.val = draw_split(cfg, table, 2, cfg.val_size);
    c.test = draw_split(cfg, table, 3, cfg.test_size);
    c.pretrain = draw_split(cfg, table, 4, cfg.pretrain_size);

    const int per_client = cfg.train_size / cfg.n_clients;
    c.train_shards.resize(static_cast<std::size_t>(cfg.n_clients));
    for (int k = 0; k < cfg.n_clients; ++k)
        c.train_shards[k].assign(train.begin() + static_cast<std::ptrdiff_t>(k) * per_client,
                                 train.begin() + static_cast<std::ptrdiff_t>(k + 1) * per_client);
    return c;
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> as_eval_pairs(const eng::Shard& shard) {
    std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
    out.reserve(shard.size());
    for (const auto& s : shard) out.emplace_back(s.tokens, s.targets);
    return out;
}

}  // namespace splitcom::data
