// SPDX-License-Identifier: Apache-2.0
//
// Distribution mathematics over logit rows: temperature softmax, exact and
// top-k entropy, KL divergence and log-probabilities. All computation is in
// double precision and every function is pure.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "entsft/real_vector.hpp"

namespace entsft {

using LogitView = std::span<const double>;

/// Owning logit row. Invariants: size >= 2, every entry finite.
class LogitRow {
public:
    explicit LogitRow(std::vector<double> values);

    LogitView view() const noexcept { return values_; }
    operator LogitView() const noexcept { return values_; }  // NOLINT(google-explicit-constructor)
    std::size_t vocab_size() const noexcept { return values_.size(); }

private:
    std::vector<double> values_;
};

/// Dense row-major [rows x vocab] matrix of logits (or of gradients on logits).
class LogitBatch {
public:
    LogitBatch() = default;
    LogitBatch(std::size_t rows, std::size_t vocab, double fill = 0.0);
    LogitBatch(std::size_t rows, std::size_t vocab, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t vocab() const noexcept { return vocab_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * vocab_, vocab_}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {data_.data() + i * vocab_, vocab_};
    }

    RealVector& data() noexcept { return data_; }
    const RealVector& data() const noexcept { return data_; }

    LogitBatch& operator+=(const LogitBatch& other);
    LogitBatch& operator*=(double s);

private:
    std::size_t rows_ = 0;
    std::size_t vocab_ = 0;
    RealVector data_;
};

enum class Support { full, top_k };

/// Normalized categorical distribution tagged with the temperature that made it.
struct ProbDist {
    std::vector<double> probs;
    double temperature = 1.0;
    Support support = Support::full;
    std::size_t k = 0;  // subset size when support == top_k

    /// Validates non-negativity and normalization (sum within 1e-9).
    static ProbDist from_probs(std::vector<double> probs, double temperature = 1.0);
    std::size_t vocab_size() const noexcept { return probs.size(); }
};

struct EntropyValue {
    double nats = 0.0;
};

/// Throws DomainError if the row has fewer than two entries or any non-finite value.
void check_logits(LogitView row);

ProbDist softmax_temp(LogitView row, double tau);

/// Shannon entropy in nats; probabilities below 1e-300 count as exact zeros.
EntropyValue entropy(const ProbDist& dist);
double entropy_of_probs(std::span<const double> probs);

/// Entropy of softmax(row / tau) evaluated directly from logits.
double entropy_from_logits(LogitView row, double tau);

/// Indices of the k largest logits, ordered by value descending; ties go to the
/// lowest token index. k is clamped to the row length.
std::vector<std::size_t> top_k_indices(LogitView row, std::size_t k);

/// The k largest logits of a row, ready for repeated entropy evaluation at
/// different temperatures (the inner loop of temperature search).
class TopKSubset {
public:
    TopKSubset(LogitView row, std::size_t k);

    double entropy(double tau) const;
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }

private:
    std::vector<double> values_;  // descending
};

EntropyValue entropy_topk(LogitView row, double tau, std::size_t k);

double kl_divergence(const ProbDist& p, const ProbDist& q);

double log_sum_exp(LogitView row, double tau);

/// log softmax(row / tau)[token], via log-sum-exp.
double log_prob_at(LogitView row, double tau, std::size_t token);

/// Index of the largest logit, lowest index on ties.
std::size_t argmax(LogitView row);

}  // namespace entsft
