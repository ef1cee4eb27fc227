// SPDX-License-Identifier: Apache-2.0
//
// Entropy-guided teacher temperature selection. Each position gets a target
// entropy H_t + delta_t, where delta_t is a sigmoid gate of the base entropy,
// and the teacher temperature that hits that target is found by bisection.
// Entropy is non-decreasing in temperature, so bisection on [tau_min, tau_max]
// is well posed.
#pragma once

#include <cstddef>
#include <vector>

#include "entsft/dist_core.hpp"

namespace entsft {

struct GateConfig {
    double delta_max = 0.5;  // nats
    double gamma = 2.0;
    double h_pivot = 1.2;  // nats

    void validate() const;
};

struct TempSearchConfig {
    double tau_min = 1.1;
    double tau_max = 1.5;
    double epsilon = 1e-3;  // nats
    int max_iters = 30;
    std::size_t top_k = 512;

    void validate() const;
};

struct TokenTempPlan {
    double base_entropy = 0.0;  // H_t, top-k entropy of the row at tau = 1
    double increment = 0.0;     // delta_t
    double solved_tau = 1.0;
    double target_entropy = 0.0;
    double achieved_entropy = 0.0;
    bool clamped = false;
};

/// delta_max * sigmoid(gamma * (h_t - h_pivot)).
double entropy_increment(EntropyValue h_t, const GateConfig& gate);

/// Bisection for the temperature whose top-k entropy equals `target_entropy`.
/// Targets outside [H(tau_min), H(tau_max)] clamp to the nearer endpoint with
/// `clamped = true`. The returned plan's base_entropy is H(row; 1; top_k) and
/// increment is target - base_entropy.
TokenTempPlan solve_temperature(LogitView row, double target_entropy, const TempSearchConfig& cfg);

/// Gate + search for every row, bisecting all rows in lock-step. Bitwise equal
/// to calling entropy_increment and solve_temperature row by row.
std::vector<TokenTempPlan> plan_batch(const LogitBatch& rows, const GateConfig& gate,
                                      const TempSearchConfig& cfg);

/// Plans with a single fixed teacher temperature for every row (the
/// non-adaptive ablation). Entropy fields are filled for telemetry.
std::vector<TokenTempPlan> fixed_temperature_plans(const LogitBatch& rows, double tau,
                                                   std::size_t top_k);

}  // namespace entsft
