// SPDX-License-Identifier: Apache-2.0
#include "entsft/temp_select.hpp"

#include <cmath>
#include <string>

#include "entsft/errors.hpp"

namespace entsft {

void GateConfig::validate() const {
    if (!(delta_max > 0.0) || !(gamma > 0.0) || !(h_pivot >= 0.0)) {
        throw ConfigError("gate requires delta_max > 0, gamma > 0, h_pivot >= 0");
    }
}

void TempSearchConfig::validate() const {
    if (!(tau_min > 1.0) || !(tau_max > tau_min)) {
        throw ConfigError("temperature search requires 1 < tau_min < tau_max");
    }
    if (!(epsilon > 0.0) || max_iters < 1 || top_k < 2) {
        throw ConfigError("temperature search requires epsilon > 0, max_iters >= 1, top_k >= 2");
    }
}

double entropy_increment(EntropyValue h_t, const GateConfig& gate) {
    const double x = gate.gamma * (h_t.nats - gate.h_pivot);
    return gate.delta_max / (1.0 + std::exp(-x));
}

namespace {

// Per-row search state. Both the scalar and the batched entry points drive
// rows through exactly these functions, which is what makes them bitwise equal.
struct Bracket {
    TopKSubset subset;
    double target = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double h_lo = 0.0;
    double h_hi = 0.0;
    bool done = false;
    TokenTempPlan plan;
};

Bracket open_bracket(LogitView row, double target, const TempSearchConfig& cfg) {
    if (!std::isfinite(target)) {
        throw DomainError("temperature search target must be finite");
    }
    if (target < 0.0) {
        throw DomainError("temperature search target must be >= 0");
    }
    Bracket b{TopKSubset(row, cfg.top_k), 0.0, 0.0, 0.0, 0.0, 0.0, false, TokenTempPlan{}};
    b.target = target;
    b.lo = cfg.tau_min;
    b.hi = cfg.tau_max;
    b.h_lo = b.subset.entropy(cfg.tau_min);
    b.h_hi = b.subset.entropy(cfg.tau_max);
    b.plan.base_entropy = b.subset.entropy(1.0);
    b.plan.target_entropy = target;
    b.plan.increment = target - b.plan.base_entropy;

    auto finish_at = [&](double tau, double h, bool clamped) {
        b.plan.solved_tau = tau;
        b.plan.achieved_entropy = h;
        b.plan.clamped = clamped;
        b.done = true;
    };
    if (target < b.h_lo) {
        finish_at(cfg.tau_min, b.h_lo, true);
    } else if (target > b.h_hi) {
        finish_at(cfg.tau_max, b.h_hi, true);
    } else if (target == b.h_lo) {
        finish_at(cfg.tau_min, b.h_lo, false);
    } else if (target == b.h_hi) {
        finish_at(cfg.tau_max, b.h_hi, false);
    }
    return b;
}

void bisect_once(Bracket& b) {
    if (b.done) {
        return;
    }
    const double mid = 0.5 * (b.lo + b.hi);
    const double h = b.subset.entropy(mid);
    if (h < b.target) {
        b.lo = mid;
        b.h_lo = h;
    } else {
        b.hi = mid;
        b.h_hi = h;
    }
}

void close_bracket(Bracket& b, std::size_t row_index, const TempSearchConfig& cfg) {
    if (b.done) {
        return;
    }
    const double tau = 0.5 * (b.lo + b.hi);
    const double h = b.subset.entropy(tau);
    b.plan.solved_tau = tau;
    b.plan.achieved_entropy = h;
    b.plan.clamped = false;
    b.done = true;
    const double residual = std::abs(h - b.target);
    if (residual > cfg.epsilon) {
        throw SearchFailure(row_index, residual);
    }
}

}  // namespace

TokenTempPlan solve_temperature(LogitView row, double target_entropy, const TempSearchConfig& cfg) {
    cfg.validate();
    Bracket b = open_bracket(row, target_entropy, cfg);
    for (int it = 0; it < cfg.max_iters; ++it) {
        bisect_once(b);
    }
    close_bracket(b, 0, cfg);
    return b.plan;
}

std::vector<TokenTempPlan> plan_batch(const LogitBatch& rows, const GateConfig& gate,
                                      const TempSearchConfig& cfg) {
    gate.validate();
    cfg.validate();
    std::vector<Bracket> brackets;
    brackets.reserve(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        try {
            const TopKSubset base(rows.row(i), cfg.top_k);
            const double h_t = base.entropy(1.0);
            const double target = h_t + entropy_increment({h_t}, gate);
            brackets.push_back(open_bracket(rows.row(i), target, cfg));
        } catch (const DomainError& e) {
            throw DomainError("row " + std::to_string(i) + ": " + e.what());
        }
    }
    for (int it = 0; it < cfg.max_iters; ++it) {
        for (Bracket& b : brackets) {
            bisect_once(b);
        }
    }
    std::vector<TokenTempPlan> plans;
    plans.reserve(brackets.size());
    for (std::size_t i = 0; i < brackets.size(); ++i) {
        close_bracket(brackets[i], i, cfg);
        plans.push_back(brackets[i].plan);
    }
    return plans;
}

std::vector<TokenTempPlan> fixed_temperature_plans(const LogitBatch& rows, double tau,
                                                   std::size_t top_k) {
    if (!(tau > 0.0)) {
        throw ConfigError("fixed teacher temperature must be > 0");
    }
    std::vector<TokenTempPlan> plans(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const TopKSubset subset(rows.row(i), top_k);
        TokenTempPlan& p = plans[i];
        p.base_entropy = subset.entropy(1.0);
        p.solved_tau = tau;
        p.achieved_entropy = subset.entropy(tau);
        p.target_entropy = p.achieved_entropy;
        p.increment = p.achieved_entropy - p.base_entropy;
    }
    return plans;
}

}  // namespace entsft
