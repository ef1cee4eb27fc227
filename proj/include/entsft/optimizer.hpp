// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "entsft/param_set.hpp"

namespace entsft {

struct OptimizerConfig {
    std::string kind = "adamw";
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 100;
    std::string schedule = "cosine";  // "cosine" or "constant"
    double grad_clip = 1.0;           // global norm; <= 0 disables

    void validate() const;
};

/// Linear warmup to the peak rate, then cosine decay to zero at total_steps.
/// `step` counts from 1.
double learning_rate_at(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamSet& grads, double max_norm);

/// Adam with decoupled weight decay. Decay applies to matrices only; vectors
/// (biases, layer-norm parameters) are not decayed.
class AdamW {
public:
    AdamW() = default;
    AdamW(const OptimizerConfig& cfg, const ParamSet& like);

    void step(ParamSet& params, const ParamSet& grads, double lr);

    std::size_t steps_taken() const noexcept { return t_; }
    ParamSet& first_moment() noexcept { return m_; }
    ParamSet& second_moment() noexcept { return v_; }
    const ParamSet& first_moment() const noexcept { return m_; }
    const ParamSet& second_moment() const noexcept { return v_; }
    void set_steps_taken(std::size_t t) noexcept { t_ = t; }

private:
    OptimizerConfig cfg_;
    ParamSet m_;
    ParamSet v_;
    std::size_t t_ = 0;
};

}  // namespace entsft
