// SPDX-License-Identifier: Apache-2.0
#include "entsft/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entsft/errors.hpp"

namespace entsft {

namespace {

// softmax(row / tau) into `out`, returns log-sum-exp of row / tau.
double softmax_into(std::span<const double> row, double tau, std::span<double> out) {
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp((row[i] - m) / tau);
        sum += out[i];
    }
    for (double& p : out) {
        p /= sum;
    }
    return m / tau + std::log(sum);
}

void check_tokens(const LogitBatch& rows, std::span<const std::size_t> tokens) {
    if (tokens.size() != rows.rows()) {
        throw DomainError("expected one expert token per row (" + std::to_string(rows.rows()) +
                          " rows, " + std::to_string(tokens.size()) + " tokens)");
    }
    for (std::size_t t : tokens) {
        if (t >= rows.vocab()) {
            throw DomainError("expert token " + std::to_string(t) + " out of vocabulary range");
        }
    }
}

void check_same_shape(const LogitBatch& a, const LogitBatch& b, const char* what) {
    if (a.rows() != b.rows() || a.vocab() != b.vocab()) {
        throw DomainError(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

std::string to_string(RegularizerType type) {
    switch (type) {
        case RegularizerType::none: return "none";
        case RegularizerType::entropy: return "entropy";
        case RegularizerType::entropy_top_fraction: return "entropy-top";
        case RegularizerType::kl_to_base: return "kl-base";
        case RegularizerType::sed: return "sed";
    }
    return "none";
}

RegularizerType parse_regularizer(const std::string& name) {
    for (auto t : {RegularizerType::none, RegularizerType::entropy,
                   RegularizerType::entropy_top_fraction, RegularizerType::kl_to_base,
                   RegularizerType::sed}) {
        if (to_string(t) == name) {
            return t;
        }
    }
    throw ConfigError("unknown regularizer '" + name + "'");
}

LossResult sft_loss(const LogitBatch& student, std::span<const std::size_t> expert_tokens) {
    check_tokens(student, expert_tokens);
    const std::size_t n = student.rows();
    LossResult out{0.0, LogitBatch(n, student.vocab()), std::vector<double>(n, 0.0)};
    if (n == 0) {
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto g = out.grad.row(i);
        const double lse = softmax_into(student.row(i), 1.0, g);
        const std::size_t y = expert_tokens[i];
        const double nll = lse - student.row(i)[y];
        out.per_row[i] = nll;
        out.value += nll;
        g[y] -= 1.0;
        for (double& v : g) {
            v *= inv_n;
        }
    }
    out.value *= inv_n;
    return out;
}

LossResult entropy_loss(const LogitBatch& student, double alpha, const RegularizerKind& restrict) {
    if (!(alpha >= 0.0)) {
        throw DomainError("entropy loss weight must be >= 0");
    }
    const std::size_t n = student.rows();
    const std::size_t v = student.vocab();
    LossResult out{0.0, LogitBatch(n, v), std::vector<double>(n, 0.0)};
    if (n == 0) {
        return out;
    }

    LogitBatch probs(n, v);
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) {
        softmax_into(student.row(i), 1.0, probs.row(i));
        h[i] = entropy_of_probs(probs.row(i));
    }

    std::vector<bool> selected(n, true);
    if (restrict.type == RegularizerType::entropy_top_fraction) {
        if (!(restrict.fraction > 0.0 && restrict.fraction <= 1.0)) {
            throw DomainError("top fraction must lie in (0, 1]");
        }
        const auto keep = static_cast<std::size_t>(
            std::ceil(restrict.fraction * static_cast<double>(n) - 1e-12));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return h[a] > h[b]; });
        std::fill(selected.begin(), selected.end(), false);
        for (std::size_t r = 0; r < std::max<std::size_t>(keep, 1); ++r) {
            selected[order[r]] = true;
        }
    }
    const auto count = static_cast<double>(std::count(selected.begin(), selected.end(), true));
    const double scale = alpha / count;

    for (std::size_t i = 0; i < n; ++i) {
        if (!selected[i]) {
            continue;
        }
        // d(sum p log p)/dz_j = p_j (log p_j + H)
        auto p = probs.row(i);
        auto g = out.grad.row(i);
        for (std::size_t j = 0; j < v; ++j) {
            const double lp = p[j] > 1e-300 ? std::log(p[j]) : 0.0;
            g[j] = scale * p[j] * (lp + h[i]);
        }
        out.per_row[i] = -h[i];
        out.value -= h[i];
    }
    out.value *= scale;
    return out;
}

LossResult kl_to_base_loss(const LogitBatch& student, const LogitBatch& base, double alpha) {
    check_same_shape(student, base, "kl_to_base_loss");
    const std::size_t n = student.rows();
    const std::size_t v = student.vocab();
    LossResult out{0.0, LogitBatch(n, v), std::vector<double>(n, 0.0)};
    if (n == 0) {
        return out;
    }
    const double scale = alpha / static_cast<double>(n);
    std::vector<double> p(v);
    std::vector<double> logratio(v);
    for (std::size_t i = 0; i < n; ++i) {
        const double lse_p = softmax_into(student.row(i), 1.0, p);
        const double lse_q = log_sum_exp(base.row(i), 1.0);
        double kl = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double lp = student.row(i)[j] - lse_p;
            const double lq = base.row(i)[j] - lse_q;
            logratio[j] = lp - lq;
            kl += p[j] * logratio[j];
        }
        // dKL/dz_j = p_j (log p_j - log q_j - KL)
        auto g = out.grad.row(i);
        for (std::size_t j = 0; j < v; ++j) {
            g[j] = scale * p[j] * (logratio[j] - kl);
        }
        out.per_row[i] = kl;
        out.value += kl;
    }
    out.value *= scale;
    return out;
}

LossResult sed_loss(const LogitBatch& student, const LogitBatch& teacher,
                    std::span<const TokenTempPlan> plans, std::span<const std::size_t> expert_tokens,
                    double student_tau) {
    check_same_shape(student, teacher, "sed_loss");
    check_tokens(student, expert_tokens);
    if (plans.size() != student.rows()) {
        throw DomainError("sed_loss: " + std::to_string(plans.size()) + " plans for " +
                          std::to_string(student.rows()) + " rows");
    }
    if (!(student_tau > 0.0)) {
        throw DomainError("student temperature must be > 0");
    }
    const std::size_t n = student.rows();
    LossResult out{0.0, LogitBatch(n, student.vocab()), std::vector<double>(n, 0.0)};
    if (n == 0) {
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = expert_tokens[i];
        auto g = out.grad.row(i);
        const double lse_s = softmax_into(student.row(i), student_tau, g);
        const double log_p = student.row(i)[y] / student_tau - lse_s;
        const double log_q = log_prob_at(teacher.row(i), plans[i].solved_tau, y);
        const double r = log_p - log_q;
        out.per_row[i] = 0.5 * r * r;
        out.value += 0.5 * r * r;
        // d log p_y / dz = (onehot_y - p) / tau
        const double coeff = r * inv_n / student_tau;
        for (double& gj : g) {
            gj = -coeff * gj;
        }
        g[y] += coeff;
    }
    out.value *= inv_n;
    return out;
}

LossBreakdown total_loss(const LossResult& sft, std::span<const LossResult> regularizers, double alpha) {
    if (regularizers.size() > 1) {
        throw ConfigError("exactly one regularizer may be active per objective");
    }
    if (!(alpha >= 0.0)) {
        throw ConfigError("alpha must be >= 0");
    }
    LossBreakdown out;
    out.alpha = alpha;
    out.sft = sft.value;
    out.grad = sft.grad;
    const LossResult* reg = regularizers.empty() ? nullptr : &regularizers.front();
    if (reg != nullptr) {
        if (reg->grad.rows() != sft.grad.rows() || reg->grad.vocab() != sft.grad.vocab()) {
            throw DomainError("total_loss: regularizer and sft batches differ in shape");
        }
        out.regularizer = reg->value;
        const auto& rg = reg->grad.data();
        auto& g = out.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += alpha * rg[i];
        }
    }
    out.total = out.sft + alpha * out.regularizer;
    out.per_token.reserve(sft.per_row.size());
    for (std::size_t i = 0; i < sft.per_row.size(); ++i) {
        out.per_token.push_back({i, sft.per_row[i], reg != nullptr ? reg->per_row[i] : 0.0});
    }
    return out;
}

}  // namespace entsft
