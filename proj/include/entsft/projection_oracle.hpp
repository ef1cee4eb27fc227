// SPDX-License-Identifier: Apache-2.0
//
// Numerical solver for the entropy-constrained KL projection
//
//     minimize KL(q || base)  subject to  H(q) >= H(base) + delta
//
// over the probability simplex. It deliberately shares no code with the
// temperature-scaling routines so it can serve as an independent check that
// the optimum is a temperature-scaled copy of the base.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace entsft::oracles {

struct ProjectionResult {
    std::vector<double> q;
    double entropy = 0.0;
    double target_entropy = 0.0;
    double kl = 0.0;
    double multiplier = 0.0;     // entropy-constraint multiplier lambda_H
    double kkt_residual = 0.0;   // stationarity + constraint violation
    std::size_t outer_iterations = 0;
};

/// `base` must be a full-support distribution over at most 16 outcomes and
/// H(base) + delta must be below log|V|; otherwise DomainError.
ProjectionResult constrained_projection_solve(std::span<const double> base, double delta);

}  // namespace entsft::oracles
