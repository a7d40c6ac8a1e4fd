#pragma once

#include <map>
#include <string>

#include "splitcom/model.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::opt {

struct OptimizerConfig {
    float peak_lr = 1e-3f;
    int total_steps = 0;       // 0 disables the schedule (constant peak_lr)
    float warmup_frac = 0.5f;  // linear rise over this fraction of total steps, then linear decay to 0
    float clip_norm = 1.0f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

/// AdamW with clip-by-global-norm and the linear warm-up/decay schedule.
class AdamW {
   public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

    /// One update over a named parameter set. Gradients missing from grads are
    /// treated as zero. Throws TrainingError on non-finite gradients.
    void step(std::map<std::string, Tensor*>& params, const model::GradMap& grads);

    float lr_at(int step) const;  // step is 0-based
    int step_count() const { return step_; }
    const OptimizerConfig& config() const { return cfg_; }

    /// Scales gradients in place so the global norm is <= clip_norm; returns
    /// the pre-clip norm.
    static float clip_global_norm(model::GradMap& grads, float clip_norm);

   private:
    OptimizerConfig cfg_;
    int step_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace splitcom::opt
