// SPDX-License-Identifier: Apache-2.0
//
// Augmented-Lagrangian solver for the entropy-constrained KL projection. The
// simplex is parameterized by free logits w with q = exp(w) / sum exp(w);
// the inner problem is solved by first-order descent along the entropic
// mirror direction (the w-gradient divided by q), with Barzilai-Borwein step
// sizes and a non-monotone Armijo test. No temperature scaling appears here.
#include "entsft/projection_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "entsft/errors.hpp"

namespace entsft::oracles {

namespace {

constexpr std::size_t kMaxVocab = 16;
constexpr double kKktTol = 1e-9;
constexpr int kMaxOuter = 200;
constexpr int kMaxInner = 20000;

std::vector<double> normalize_exp(const std::vector<double>& w) {
    const double m = *std::max_element(w.begin(), w.end());
    std::vector<double> q(w.size());
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        q[i] = std::exp(w[i] - m);
        s += q[i];
    }
    for (double& v : q) {
        v /= s;
    }
    return q;
}

double shannon(const std::vector<double>& q) {
    double h = 0.0;
    for (double v : q) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return h;
}

double kl(const std::vector<double>& q, const std::vector<double>& logp) {
    double d = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) {
            d += q[i] * (std::log(q[i]) - logp[i]);
        }
    }
    return d;
}

struct Problem {
    std::vector<double> logp;
    double target = 0.0;
    double lambda = 0.0;
    double rho = 10.0;

    // Augmented Lagrangian for g(q) = target - H(q) <= 0.
    double value(const std::vector<double>& w) const {
        const auto q = normalize_exp(w);
        const double g = target - shannon(q);
        const double shifted = std::max(0.0, lambda + rho * g);
        return kl(q, logp) + (shifted * shifted - lambda * lambda) / (2.0 * rho);
    }

    // Gradient in w with every coordinate divided by q_i: the mirror-descent
    // direction for the entropic geometry. Its inner product with the true
    // gradient is sum_i q_i d_i^2, so it is always a descent direction.
    std::vector<double> direction(const std::vector<double>& w, double& slope) const {
        const auto q = normalize_exp(w);
        const double g = target - shannon(q);
        const double mult = std::max(0.0, lambda + rho * g);
        std::vector<double> gq(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            const double lq = std::log(q[i]);
            gq[i] = (lq - logp[i] + 1.0) + mult * (lq + 1.0);
        }
        const double mean = std::inner_product(q.begin(), q.end(), gq.begin(), 0.0);
        std::vector<double> d(q.size());
        slope = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            d[i] = gq[i] - mean;
            slope += q[i] * d[i] * d[i];
        }
        return d;
    }
};

// Spectral (Barzilai-Borwein) step lengths on the preconditioned direction,
// with a non-monotone Armijo test over the last few objective values.
void minimize_inner(const Problem& prob, std::vector<double>& w) {
    constexpr std::size_t kMemory = 10;
    double slope = 0.0;
    std::vector<double> d = prob.direction(w, slope);
    double f = prob.value(w);
    std::vector<double> recent{f};
    double step = 1.0;
    std::vector<double> trial(w.size());
    for (int it = 0; it < kMaxInner; ++it) {
        if (slope < 1e-30) {
            return;
        }
        const double ref = *std::max_element(recent.begin(), recent.end());
        double f_trial = f;
        double t = step;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                trial[i] = w[i] - t * d[i];
            }
            f_trial = prob.value(trial);
            // The slack term absorbs rounding once decreases fall below one ulp of f.
            if (f_trial <= ref - 1e-4 * t * slope + 4e-16 * std::abs(ref)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            return;
        }
        double slope_new = 0.0;
        const std::vector<double> d_new = prob.direction(trial, slope_new);
        double sy = 0.0;
        double ss = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double si = trial[i] - w[i];
            sy += si * (d_new[i] - d[i]);
            ss += si * si;
        }
        step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : 1.0;
        w.swap(trial);
        d = d_new;
        slope = slope_new;
        f = f_trial;
        recent.push_back(f);
        if (recent.size() > kMemory) {
            recent.erase(recent.begin());
        }
    }
}

double kkt_residual(const std::vector<double>& q, const std::vector<double>& logp, double lambda_h,
                    double target) {
    // Stationarity on the simplex: log q - log p + lambda_h log q must be constant.
    std::vector<double> s(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double lq = std::log(q[i]);
        s[i] = lq - logp[i] + lambda_h * lq;
    }
    const double mean = std::inner_product(q.begin(), q.end(), s.begin(), 0.0);
    double stationarity = 0.0;
    for (double v : s) {
        stationarity = std::max(stationarity, std::abs(v - mean));
    }
    const double g = target - shannon(q);
    const double feasibility = std::max(0.0, g);
    const double slackness = std::abs(lambda_h * g);
    return std::max({stationarity, feasibility, slackness});
}

}  // namespace

ProjectionResult constrained_projection_solve(std::span<const double> base, double delta) {
    const std::size_t v = base.size();
    if (v < 2 || v > kMaxVocab) {
        throw DomainError("projection oracle supports 2..16 outcomes");
    }
    double sum = 0.0;
    for (double p : base) {
        if (!(p > 0.0)) {
            throw DomainError("projection oracle needs a full-support base distribution");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw DomainError("base distribution is not normalized");
    }
    if (!(delta >= 0.0)) {
        throw DomainError("entropy increment must be >= 0");
    }
    std::vector<double> p(base.begin(), base.end());
    Problem prob;
    prob.logp.resize(v);
    for (std::size_t i = 0; i < v; ++i) {
        prob.logp[i] = std::log(p[i]);
    }
    prob.target = shannon(p) + delta;
    if (prob.target >= std::log(static_cast<double>(v))) {
        throw DomainError("infeasible target entropy " + std::to_string(prob.target) + " >= log|V|");
    }

    std::vector<double> w = prob.logp;
    ProjectionResult res;
    res.target_entropy = prob.target;
    res.kkt_residual = std::numeric_limits<double>::infinity();
    std::vector<double> best_w = w;
    double best_lambda = 0.0;
    double prev_violation = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < kMaxOuter; ++outer) {
        minimize_inner(prob, w);
        const auto q = normalize_exp(w);
        const double g = prob.target - shannon(q);
        prob.lambda = std::max(0.0, prob.lambda + prob.rho * g);
        const double kkt = kkt_residual(q, prob.logp, prob.lambda, prob.target);
        res.outer_iterations = static_cast<std::size_t>(outer + 1);
        if (kkt < res.kkt_residual) {
            res.kkt_residual = kkt;
            best_w = w;
            best_lambda = prob.lambda;
        }
        if (kkt <= kKktTol) {
            break;
        }
        const double violation = std::abs(g);
        if (violation > kKktTol && violation > 0.25 * prev_violation) {
            prob.rho = std::min(prob.rho * 4.0, 1e6);
        }
        prev_violation = violation;
    }
    res.q = normalize_exp(best_w);
    res.entropy = shannon(res.q);
    res.kl = kl(res.q, prob.logp);
    res.multiplier = best_lambda;
    return res;
}

}  // namespace entsft::oracles
