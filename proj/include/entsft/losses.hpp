// SPDX-License-Identifier: Apache-2.0
//
// Training objectives over compact logit batches (one row per supervised
// position, padding already removed). Every loss returns its value together
// with the analytic gradient with respect to the student logits.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "entsft/dist_core.hpp"
#include "entsft/temp_select.hpp"

namespace entsft {

struct LossResult {
    double value = 0.0;
    LogitBatch grad;
    std::vector<double> per_row;  // contribution of each row before averaging
};

enum class RegularizerType { none, entropy, entropy_top_fraction, kl_to_base, sed };

struct RegularizerKind {
    RegularizerType type = RegularizerType::none;
    double fraction = 0.2;  // only for entropy_top_fraction

    static RegularizerKind none() { return {RegularizerType::none, 0.2}; }
    static RegularizerKind entropy() { return {RegularizerType::entropy, 0.2}; }
    static RegularizerKind entropy_top(double f = 0.2) { return {RegularizerType::entropy_top_fraction, f}; }
    static RegularizerKind kl_to_base() { return {RegularizerType::kl_to_base, 0.2}; }
    static RegularizerKind sed() { return {RegularizerType::sed, 0.2}; }
};

/// CLI spelling: none, entropy, entropy-top, kl-base, sed.
std::string to_string(RegularizerType type);
RegularizerType parse_regularizer(const std::string& name);

/// Mean negative log-likelihood of the expert tokens.
LossResult sft_loss(const LogitBatch& student, std::span<const std::size_t> expert_tokens);

/// alpha * mean over selected rows of sum_y p log p (negative entropy).
/// With entropy_top_fraction(f), only the ceil(f * rows) highest-entropy rows
/// contribute (ties to the lower row index); the selection is not differentiated.
LossResult entropy_loss(const LogitBatch& student, double alpha, const RegularizerKind& restrict);

/// alpha * mean KL(student || base); base rows are constants.
LossResult kl_to_base_loss(const LogitBatch& student, const LogitBatch& base, double alpha);

/// K2 self-distillation loss: (1/2) mean_t (log p_student(y_t; student_tau) -
/// log p_teacher(y_t; tau_hat_t))^2. Teacher logits and plans are constants.
LossResult sed_loss(const LogitBatch& student, const LogitBatch& teacher,
                    std::span<const TokenTempPlan> plans, std::span<const std::size_t> expert_tokens,
                    double student_tau = 1.0);

struct TokenLossTerm {
    std::size_t position = 0;
    double sft = 0.0;
    double reg = 0.0;
};

struct LossBreakdown {
    double sft = 0.0;
    double regularizer = 0.0;
    double total = 0.0;
    double alpha = 1.0;
    std::vector<TokenLossTerm> per_token;
    LogitBatch grad;  // d total / d student logits
};

/// total = sft + alpha * regularizer. `regularizers` holds the unscaled
/// regularizer results (computed with alpha = 1); at most one is allowed.
LossBreakdown total_loss(const LossResult& sft, std::span<const LossResult> regularizers, double alpha);

}  // namespace entsft
