// SPDX-License-Identifier: Apache-2.0
#include "entsft/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "entsft/errors.hpp"

namespace entsft {

void OptimizerConfig::validate() const {
    if (kind != "adamw") {
        throw ConfigError("unsupported optimizer kind '" + kind + "'");
    }
    if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0) || !(weight_decay >= 0.0)) {
        throw ConfigError("invalid optimizer hyperparameters");
    }
    if (schedule != "cosine" && schedule != "constant") {
        throw ConfigError("unknown learning-rate schedule '" + schedule + "'");
    }
}

double learning_rate_at(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
    const double peak = cfg.learning_rate;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    if (cfg.schedule == "constant" || total_steps <= cfg.warmup_steps) {
        return peak;
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total_steps - cfg.warmup_steps);
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
    const double norm = std::sqrt(grads.squared_norm());
    if (max_norm > 0.0 && norm > max_norm) {
        grads.scale(max_norm / (norm + 1e-12));
    }
    return norm;
}

AdamW::AdamW(const OptimizerConfig& cfg, const ParamSet& like)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {
    cfg_.validate();
}

void AdamW::step(ParamSet& params, const ParamSet& grads, double lr) {
    params.require_same_layout(grads, "AdamW step");
    ++t_;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data;
        const auto& g = grads[i].data;
        auto& m = m_[i].data;
        auto& v = v_[i].data;
        const double decay = params[i].shape.size() >= 2 ? cfg_.weight_decay : 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * p[j]);
        }
    }
}

}  // namespace entsft
