#include "splitcom/control.hpp"

#include <algorithm>
#include <cmath>

#include "splitcom/graph.hpp"
#include "splitcom/model.hpp"
#include "splitcom/ops.hpp"

namespace splitcom::ctrl {

float fixed_next(float theta0) {
    if (!(theta0 >= -1.0f && theta0 <= 1.0f)) throw ConfigError("fixed threshold must lie in [-1, 1]");
    return theta0;
}

void BbcConfig::validate() const {
    if (!(-1.0f <= theta_low && theta_low < theta_high && theta_high <= 1.0f))
        throw ConfigError("bbc thresholds must satisfy -1 <= low < high <= 1");
    if (tolerance < 0.0f) throw ConfigError("bbc tolerance must be >= 0");
    if (window < 1 || consecutive < 1) throw ConfigError("bbc window/consecutive must be >= 1");
}

float bbc_next(const BbcConfig& cfg, const std::vector<double>& ppl_history, float prev_theta) {
    cfg.validate();
    const std::size_t n = ppl_history.size();
    if (n == 0) throw StateError("bbc_next needs at least one ppl observation");

    const bool jump = n >= 2 && ppl_history[n - 1] > ppl_history[n - 2] * (1.0 + cfg.tolerance);
    bool trend = n >= static_cast<std::size_t>(cfg.window) + 1;
    for (int k = 0; trend && k < cfg.window; ++k)
        if (!(ppl_history[n - 1 - k] > ppl_history[n - 2 - k])) trend = false;
    if (jump || trend) return cfg.theta_high;

    bool falling = n >= static_cast<std::size_t>(cfg.consecutive) + 1;
    for (int k = 0; falling && k < cfg.consecutive; ++k)
        if (!(ppl_history[n - 1 - k] < ppl_history[n - 2 - k])) falling = false;
    if (falling) return cfg.theta_low;

    return prev_theta;
}

float OuNoise::step(float sigma, Rng& rng) {
    if (sigma < 0.0f) throw ConfigError("ou sigma must be >= 0");
    n += theta_ou * (mu - n) + sigma * static_cast<float>(rng.normal());
    return n;
}

void DdpgConfig::validate() const {
    if (state_dim < 1 || hidden1 < 1 || hidden2 < 1) throw ConfigError("ddpg network dims must be positive");
    if (replay_capacity < 1 || minibatch < 1) throw ConfigError("ddpg replay/minibatch must be positive");
    if (!(gamma >= 0.0f && gamma < 1.0f)) throw ConfigError("ddpg gamma must lie in [0, 1)");
    if (!(soft_update > 0.0f && soft_update <= 1.0f)) throw ConfigError("ddpg soft-update rate must lie in (0, 1]");
    if (ou_sigma0 < 0.0f || !(ou_decay > 0.0f && ou_decay <= 1.0f)) throw ConfigError("ddpg ou parameters invalid");
}

float reward(float l_t, float l0, float c_t, float c0, bool zero_flag, bool full_flag, float alpha, float beta,
             float p_zero, float p_full) {
    if (l0 <= 0.0f || c0 <= 0.0f) throw ConfigError("reward baselines must be positive");
    float r = -alpha * (l_t / l0) - beta * (c_t / c0);
    if (zero_flag) r -= p_zero;
    if (full_flag) r -= p_full;
    return r;
}

void ReplayBuffer::push(Transition t) {
    items_.push_back(std::move(t));
    while (items_.size() > static_cast<std::size_t>(capacity_)) items_.pop_front();
}

void update_ema(float& ema, float sample, float factor) { ema = factor * ema + (1.0f - factor) * sample; }

namespace {

float rel_trend(const std::vector<double>& h) {
    const std::size_t n = h.size();
    if (n < 2 || h[n - 2] == 0.0) return 0.0f;
    return static_cast<float>((h[n - 1] - h[n - 2]) / h[n - 2]);
}

}  // namespace

std::vector<float> build_state_vector(const ControllerState& cs, int slots) {
    std::vector<float> s;
    s.reserve(static_cast<std::size_t>(slots) + 4);
    for (int i = 0; i < slots; ++i)
        s.push_back(i < static_cast<int>(cs.sim_ema.size()) ? cs.sim_ema[static_cast<std::size_t>(i)] : 0.0f);
    s.push_back(rel_trend(cs.ppl_history));
    s.push_back(rel_trend(cs.comm_ratio_history));
    s.push_back(cs.current_theta);
    s.push_back(cs.progress);
    return s;
}

Mlp Mlp::init(std::vector<int> dims, bool sigmoid_out, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("mlp needs at least one layer");
    Mlp m;
    m.dims = std::move(dims);
    m.sigmoid_out = sigmoid_out;
    for (std::size_t i = 0; i + 1 < m.dims.size(); ++i) {
        Rng rng(Rng::derive(seed, 0x6d6c70ull, i));
        Tensor w = ops::gaussian(rng, {m.dims[i], m.dims[i + 1]});
        const bool last = i + 2 == m.dims.size();
        // fan-in scaling; the output layer starts near zero so the actor
        // opens at sigmoid(0) = 0.5 and the critic at Q ~ 0
        const float s = last ? 1e-3f : 1.0f / std::sqrt(static_cast<float>(m.dims[i]));
        for (auto& v : w.data) v *= s;
        m.w.push_back(std::move(w));
        m.b.push_back(Tensor::zeros({m.dims[i + 1]}));
    }
    return m;
}

namespace {

ad::VarPtr mlp_forward(const Mlp& m, const ad::VarPtr& x, bool trainable,
                       std::map<std::string, ad::VarPtr>* leaves) {
    ad::VarPtr h = x;
    for (std::size_t i = 0; i < m.w.size(); ++i) {
        auto w = ad::leaf(m.w[i], trainable, "w" + std::to_string(i));
        auto b = ad::leaf(m.b[i], trainable, "b" + std::to_string(i));
        if (leaves) {
            (*leaves)[w->name] = w;
            (*leaves)[b->name] = b;
        }
        h = ad::add_rowwise(ad::matmul(h, w), b);
        const bool last = i + 1 == m.w.size();
        if (!last)
            h = ad::relu(h);
        else if (m.sigmoid_out)
            h = ad::sigmoid(h);
    }
    return h;
}

model::GradMap collect_grads(const std::map<std::string, ad::VarPtr>& leaves) {
    model::GradMap g;
    for (const auto& [name, v] : leaves) g.emplace(name, v->grad_ready ? v->grad : Tensor::zeros(v->value.dims));
    return g;
}

std::map<std::string, Tensor*> param_map(Mlp& m) {
    std::map<std::string, Tensor*> p;
    for (std::size_t i = 0; i < m.w.size(); ++i) {
        p["w" + std::to_string(i)] = &m.w[i];
        p["b" + std::to_string(i)] = &m.b[i];
    }
    return p;
}

void soft_update(Mlp& target, const Mlp& main, float rate) {
    for (std::size_t i = 0; i < main.w.size(); ++i) {
        for (std::size_t j = 0; j < main.w[i].data.size(); ++j)
            target.w[i].data[j] += rate * (main.w[i].data[j] - target.w[i].data[j]);
        for (std::size_t j = 0; j < main.b[i].data.size(); ++j)
            target.b[i].data[j] += rate * (main.b[i].data[j] - target.b[i].data[j]);
    }
}

opt::OptimizerConfig agent_opt(float lr) {
    opt::OptimizerConfig c;
    c.peak_lr = lr;
    c.total_steps = 0;  // constant
    c.weight_decay = 0.0f;
    return c;
}

}  // namespace

Tensor Mlp::eval(const Tensor& x) const {
    if (x.dims.size() != 2 || x.dims[1] != dims.front()) throw ShapeError("mlp input width mismatch");
    return mlp_forward(*this, ad::constant(x), false, nullptr)->value;
}

DdpgAgent::DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      actor_(Mlp::init({cfg.state_dim, cfg.hidden1, cfg.hidden2, 1}, true, Rng::derive(seed, 0x616374ull))),
      critic_(Mlp::init({cfg.state_dim + 1, cfg.hidden1, cfg.hidden2, 1}, false, Rng::derive(seed, 0x637274ull))),
      actor_target_(actor_),
      critic_target_(critic_),
      actor_opt_(agent_opt(cfg.actor_lr)),
      critic_opt_(agent_opt(cfg.critic_lr)),
      noise_{cfg.ou_theta, 0.0f, 0.0f},
      sigma_(cfg.ou_sigma0),
      rng_(Rng::derive(seed, 0x6e6f6973ull)) {
    cfg.validate();
}

float DdpgAgent::act(const std::vector<float>& state, bool explore) {
    if (static_cast<int>(state.size()) != cfg_.state_dim) throw ShapeError("ddpg state length mismatch");
    Tensor x({1, cfg_.state_dim}, std::vector<float>(state.begin(), state.end()));
    float a = actor_.eval(x).data[0];
    if (explore) a += noise_.step(sigma_, rng_);
    return std::clamp(a, 0.0f, 1.0f);
}

void DdpgAgent::decay_noise() { sigma_ *= cfg_.ou_decay; }

UpdateResult DdpgAgent::update(ReplayBuffer& buffer) {
    const int B = cfg_.minibatch;
    if (buffer.size() < static_cast<std::size_t>(B)) return {true, 0.0f};

    // minibatch without replacement (partial Fisher-Yates)
    std::vector<std::size_t> idx(buffer.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < B; ++i)
        std::swap(idx[static_cast<std::size_t>(i)],
                  idx[static_cast<std::size_t>(i) + rng_.uniform_below(idx.size() - static_cast<std::size_t>(i))]);

    Tensor s({B, cfg_.state_dim});
    Tensor sa({B, cfg_.state_dim + 1});
    Tensor s2({B, cfg_.state_dim});
    std::vector<float> rew(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
        const Transition& t = buffer.at(idx[static_cast<std::size_t>(i)]);
        for (int d = 0; d < cfg_.state_dim; ++d) {
            s.at2(i, d) = t.state[static_cast<std::size_t>(d)];
            sa.at2(i, d) = t.state[static_cast<std::size_t>(d)];
            s2.at2(i, d) = t.next_state[static_cast<std::size_t>(d)];
        }
        sa.at2(i, cfg_.state_dim) = t.action;
        rew[static_cast<std::size_t>(i)] = t.reward;
    }

    // gamma-discounted TD target from the frozen target networks
    Tensor a2 = actor_target_.eval(s2);
    Tensor s2a({B, cfg_.state_dim + 1});
    for (int i = 0; i < B; ++i) {
        for (int d = 0; d < cfg_.state_dim; ++d) s2a.at2(i, d) = s2.at2(i, d);
        s2a.at2(i, cfg_.state_dim) = a2.data[static_cast<std::size_t>(i)];
    }
    Tensor q2 = critic_target_.eval(s2a);
    Tensor y({B, 1});
    for (int i = 0; i < B; ++i)
        y.data[static_cast<std::size_t>(i)] = rew[static_cast<std::size_t>(i)] + cfg_.gamma * q2.data[static_cast<std::size_t>(i)];

    // critic: mean squared TD error
    std::map<std::string, ad::VarPtr> critic_leaves;
    auto q = mlp_forward(critic_, ad::constant(sa), true, &critic_leaves);
    auto diff = ad::add(q, ad::scale(ad::constant(y), -1.0f));
    auto loss = ad::scale(ad::sum(ad::mul(diff, diff)), 1.0f / static_cast<float>(B));
    const float critic_loss = loss->value.data[0];
    ad::backward(loss);
    model::GradMap cg = collect_grads(critic_leaves);
    auto cp = param_map(critic_);
    critic_opt_.step(cp, cg);

    // actor: ascend the critic's Q at the actor's action
    std::map<std::string, ad::VarPtr> actor_leaves;
    auto sv = ad::constant(s);
    auto a = mlp_forward(actor_, sv, true, &actor_leaves);
    auto qa = mlp_forward(critic_, ad::concat_cols({sv, a}), false, nullptr);
    auto aloss = ad::scale(ad::sum(qa), -1.0f / static_cast<float>(B));
    ad::backward(aloss);
    model::GradMap ag = collect_grads(actor_leaves);
    auto ap = param_map(actor_);
    actor_opt_.step(ap, ag);

    soft_update(actor_target_, actor_, cfg_.soft_update);
    soft_update(critic_target_, critic_, cfg_.soft_update);
    return {false, critic_loss};
}

}  // namespace splitcom::ctrl
