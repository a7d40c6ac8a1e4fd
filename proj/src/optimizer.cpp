#include "splitcom/optimizer.hpp"

#include <cmath>

namespace splitcom::opt {

float AdamW::lr_at(int step) const {
    if (cfg_.total_steps <= 0) return cfg_.peak_lr;
    const float warm = cfg_.warmup_frac * static_cast<float>(cfg_.total_steps);
    const float s = static_cast<float>(step);
    if (warm > 0.0f && s < warm) return cfg_.peak_lr * (s / warm);
    const float decay_span = static_cast<float>(cfg_.total_steps) - warm;
    if (decay_span <= 0.0f) return cfg_.peak_lr;
    return cfg_.peak_lr * std::max(0.0f, (static_cast<float>(cfg_.total_steps) - s) / decay_span);
}

float AdamW::clip_global_norm(model::GradMap& grads, float clip_norm) {
    double sq = 0.0;
    for (auto& [name, g] : grads) {
        for (float v : g.data) {
            if (!std::isfinite(v)) throw TrainingError("non-finite gradient in " + name);
            sq += static_cast<double>(v) * v;
        }
    }
    const float norm = static_cast<float>(std::sqrt(sq));
    if (norm > clip_norm && norm > 0.0f) {
        const float scale = clip_norm / norm;
        for (auto& [name, g] : grads)
            for (float& v : g.data) v *= scale;
    }
    return norm;
}

void AdamW::step(std::map<std::string, Tensor*>& params, const model::GradMap& grads) {
    model::GradMap clipped = grads;
    clip_global_norm(clipped, cfg_.clip_norm);
    const float lr = lr_at(step_);
    ++step_;
    const int t = step_;  // 1-based for bias correction
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t));
    for (auto& [name, param] : params) {
        auto git = clipped.find(name);
        auto& [m, v] = moments_.try_emplace(name, Tensor::zeros(param->dims), Tensor::zeros(param->dims)).first->second;
        if (!m.same_shape(*param)) throw ShapeError("optimizer state shape mismatch for " + name);
        for (std::size_t i = 0; i < param->data.size(); ++i) {
            const float g = git != clipped.end() ? git->second.data[i] : 0.0f;
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0f - cfg_.beta1) * g;
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0f - cfg_.beta2) * g * g;
            const float mhat = m.data[i] / bc1;
            const float vhat = v.data[i] / bc2;
            param->data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * param->data[i]);
        }
    }
}

}  // namespace splitcom::opt
