// SPDX-License-Identifier: Apache-2.0
#include "entsft/dist_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "entsft/errors.hpp"

namespace entsft {

namespace {

constexpr double kZeroProb = 1e-300;

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw DomainError("temperature must be finite and > 0, got " + std::to_string(tau));
    }
}

double max_of(LogitView row) { return *std::max_element(row.begin(), row.end()); }

}  // namespace

LogitRow::LogitRow(std::vector<double> values) : values_(std::move(values)) {
    check_logits(values_);
}

LogitBatch::LogitBatch(std::size_t rows, std::size_t vocab, double fill)
    : rows_(rows), vocab_(vocab), data_(rows * vocab, fill) {}

LogitBatch::LogitBatch(std::size_t rows, std::size_t vocab, std::vector<double> data)
    : rows_(rows), vocab_(vocab), data_(data.begin(), data.end()) {
    if (data_.size() != rows_ * vocab_) {
        throw DomainError("logit batch data size does not match rows x vocab");
    }
}

LogitBatch& LogitBatch::operator+=(const LogitBatch& other) {
    if (other.rows_ != rows_ || other.vocab_ != vocab_) {
        throw DomainError("logit batch shape mismatch in +=");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

LogitBatch& LogitBatch::operator*=(double s) {
    for (double& v : data_) {
        v *= s;
    }
    return *this;
}

ProbDist ProbDist::from_probs(std::vector<double> probs, double temperature) {
    if (probs.empty()) {
        throw DomainError("empty distribution");
    }
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw DomainError("probabilities must be finite and non-negative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw DomainError("probabilities sum to " + std::to_string(sum) + ", expected 1");
    }
    ProbDist d;
    d.probs = std::move(probs);
    d.temperature = temperature;
    return d;
}

void check_logits(LogitView row) {
    if (row.size() < 2) {
        throw DomainError("logit row needs at least two entries");
    }
    for (double v : row) {
        if (!std::isfinite(v)) {
            throw DomainError("non-finite logit");
        }
    }
}

ProbDist softmax_temp(LogitView row, double tau) {
    check_logits(row);
    check_tau(tau);
    const double m = max_of(row);
    std::vector<double> probs(row.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        probs[i] = std::exp((row[i] - m) / tau);
        sum += probs[i];
    }
    for (double& p : probs) {
        p /= sum;
    }
    ProbDist d;
    d.probs = std::move(probs);
    d.temperature = tau;
    return d;
}

double entropy_of_probs(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p > kZeroProb) {
            h -= p * std::log(p);
        }
    }
    return std::max(h, 0.0);
}

EntropyValue entropy(const ProbDist& dist) { return {entropy_of_probs(dist.probs)}; }

double entropy_from_logits(LogitView row, double tau) {
    // H = log S - (1/S) sum_i w_i a_i with a_i = (z_i - max)/tau, w_i = exp(a_i).
    const double m = max_of(row);
    double sum = 0.0;
    double weighted = 0.0;
    for (double z : row) {
        const double a = (z - m) / tau;
        const double w = std::exp(a);
        sum += w;
        weighted += w * a;
    }
    return std::max(std::log(sum) - weighted / sum, 0.0);
}

std::vector<std::size_t> top_k_indices(LogitView row, std::size_t k) {
    k = std::min(k, row.size());
    std::vector<std::size_t> idx(row.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return row[a] > row[b] || (row[a] == row[b] && a < b);
    };
    if (k < row.size()) {
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
        idx.resize(k);
    }
    std::sort(idx.begin(), idx.end(), before);
    return idx;
}

TopKSubset::TopKSubset(LogitView row, std::size_t k) {
    if (k < 2) {
        throw DomainError("top-k entropy needs k >= 2");
    }
    check_logits(row);
    const auto idx = top_k_indices(row, k);
    values_.reserve(idx.size());
    for (std::size_t i : idx) {
        values_.push_back(row[i]);
    }
}

double TopKSubset::entropy(double tau) const { return entropy_from_logits(values_, tau); }

EntropyValue entropy_topk(LogitView row, double tau, std::size_t k) {
    check_tau(tau);
    return {TopKSubset(row, k).entropy(tau)};
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
    if (p.probs.size() != q.probs.size()) {
        throw DomainError("KL divergence needs equal vocabulary sizes");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        const double pi = p.probs[i];
        if (pi <= kZeroProb) {
            continue;
        }
        if (q.probs[i] <= 0.0) {
            throw DomainError("KL divergence undefined: q has zero mass where p > 0 (token " +
                              std::to_string(i) + ")");
        }
        kl += pi * (std::log(pi) - std::log(q.probs[i]));
    }
    return std::max(kl, 0.0);
}

double log_sum_exp(LogitView row, double tau) {
    const double m = max_of(row);
    double sum = 0.0;
    for (double z : row) {
        sum += std::exp((z - m) / tau);
    }
    return m / tau + std::log(sum);
}

double log_prob_at(LogitView row, double tau, std::size_t token) {
    check_logits(row);
    check_tau(tau);
    if (token >= row.size()) {
        throw DomainError("token index " + std::to_string(token) + " out of range");
    }
    const double m = max_of(row);
    double sum = 0.0;
    for (double z : row) {
        sum += std::exp((z - m) / tau);
    }
    return std::min((row[token] - m) / tau - std::log(sum), 0.0);
}

std::size_t argmax(LogitView row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace entsft
