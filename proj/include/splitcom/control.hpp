#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "splitcom/optimizer.hpp"
#include "splitcom/rng.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::ctrl {

/// Fixed policy: emits theta0 every epoch. theta0 must lie in [-1, 1]; the
/// engine-level force-send / force-reuse sentinels bypass this check on
/// purpose and never pass through here.
float fixed_next(float theta0);

struct BbcConfig {
    float theta_low = 0.98f;
    float theta_high = 0.995f;
    float tolerance = 0.02f;  // tau
    int window = 2;           // upward-trend length (pairwise increases)
    int consecutive = 2;      // strict decreases required to drop back
    void validate() const;
};

/// Bang-bang rule. Switch high on a single-jump ppl_t > ppl_{t-1}(1+tau) or a
/// strict rise over each of the last `window` epochs; switch low after
/// `consecutive` strict decreases; otherwise hold prev_theta. Requires at
/// least one observation.
float bbc_next(const BbcConfig& cfg, const std::vector<double>& ppl_history, float prev_theta);

/// n <- n + theta_ou * (mu - n) + sigma * N(0,1)
struct OuNoise {
    float theta_ou = 0.15f;
    float mu = 0.0f;
    float n = 0.0f;

    float step(float sigma, Rng& rng);
    void reset() { n = 0.0f; }
};

struct DdpgConfig {
    int state_dim = 14;
    int hidden1 = 400;
    int hidden2 = 300;
    float ou_theta = 0.15f;
    float ou_sigma0 = 0.002f;  // 0.005 for the U-shape profile
    float ou_decay = 0.98f;    // per epoch
    int replay_capacity = 50;
    int minibatch = 4;
    float gamma = 0.95f;
    float soft_update = 0.01f;
    float actor_lr = 1e-4f;
    float critic_lr = 1e-3f;
    float alpha = 2.0f;  // loss weight (1.5 for U-shape)
    float beta = 1.0f;   // comm weight (2.0 for U-shape)
    float p_zero = 1.0f;
    float p_full = 1.0f;
    float zero_ratio = 0.01f;  // P_zero fires below this comm ratio
    float full_ratio = 0.99f;  // P_full fires above this
    void validate() const;
};

/// r = -alpha * l_t/l0 - beta * c_t/c0 - P_zero - P_full, penalties gated by
/// their flags. Non-positive baselines are a config error.
float reward(float l_t, float l0, float c_t, float c0, bool zero_flag, bool full_flag, float alpha, float beta,
             float p_zero = 1.0f, float p_full = 1.0f);

struct Transition {
    std::vector<float> state;
    float action = 0.0f;
    float reward = 0.0f;
    std::vector<float> next_state;
};

/// Bounded FIFO; eviction is strictly oldest-first.
class ReplayBuffer {
   public:
    explicit ReplayBuffer(int capacity) : capacity_(capacity) {}
    void push(Transition t);
    std::size_t size() const { return items_.size(); }
    const Transition& at(std::size_t i) const { return items_[i]; }
    int capacity() const { return capacity_; }

   private:
    int capacity_;
    std::deque<Transition> items_;
};

/// Epoch-level inputs mirrored into the DDPG state vector.
struct ControllerState {
    std::vector<float> sim_ema;  // one EMA slot per client, factor 0.9
    std::vector<double> ppl_history;
    std::vector<double> comm_ratio_history;
    float current_theta = 0.98f;
    float progress = 0.0f;  // t / T_max
};

/// ema <- factor * ema + (1 - factor) * sample
void update_ema(float& ema, float sample, float factor = 0.9f);

/// Flattens to [ema slots (padded/truncated to `slots`), ppl trend,
/// comm trend, current theta, progress]; trends are relative one-epoch
/// deltas, 0 until two observations exist.
std::vector<float> build_state_vector(const ControllerState& cs, int slots);

/// Plain MLP over the shared tensor kernels; used for both actor and critic.
struct Mlp {
    std::vector<int> dims;  // e.g. {14, 400, 300, 1}
    bool sigmoid_out = false;
    std::vector<Tensor> w;  // w[i]: [dims[i], dims[i+1]]
    std::vector<Tensor> b;

    static Mlp init(std::vector<int> dims, bool sigmoid_out, std::uint64_t seed);
    Tensor eval(const Tensor& x) const;  // x: [batch, dims.front()]
};

struct UpdateResult {
    bool skipped = false;
    float critic_loss = 0.0f;
};

class DdpgAgent {
   public:
    DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed);

    /// Actor output (+ OU noise when exploring), clamped to [0,1].
    float act(const std::vector<float>& state, bool explore);

    /// One critic + actor step from a minibatch; soft-updates targets.
    UpdateResult update(ReplayBuffer& buffer);

    /// Call once per epoch: sigma_t = sigma0 * decay^t.
    void decay_noise();
    float sigma() const { return sigma_; }
    const DdpgConfig& config() const { return cfg_; }
    Mlp& actor() { return actor_; }
    Mlp& critic() { return critic_; }

   private:
    DdpgConfig cfg_;
    Mlp actor_, critic_, actor_target_, critic_target_;
    opt::AdamW actor_opt_, critic_opt_;
    OuNoise noise_;
    float sigma_;
    Rng rng_;
};

}  // namespace splitcom::ctrl
