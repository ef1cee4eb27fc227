// SPDX-License-Identifier: Apache-2.0
#include "entsft/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "entsft/errors.hpp"

namespace entsft::oracles {

namespace {

double exact_entropy(LogitView row, double tau) { return entropy(softmax_temp(row, tau)).nats; }

}  // namespace

std::vector<SweepPoint> dense_temperature_sweep(LogitView row, std::span<const double> grid) {
    std::vector<SweepPoint> out;
    out.reserve(grid.size());
    for (double tau : grid) {
        out.push_back({tau, exact_entropy(row, tau)});
    }
    return out;
}

std::vector<double> tau_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || hi < lo) {
        throw DomainError("invalid temperature grid");
    }
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    grid.reserve(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        grid.push_back(lo + static_cast<double>(i) * step);
    }
    return grid;
}

double entropy_slope_closed_form(LogitView row, double tau) {
    const ProbDist p = softmax_temp(row, tau);
    double mean = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        mean += p.probs[i] * row[i];
    }
    double var = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        const double d = row[i] - mean;
        var += p.probs[i] * d * d;
    }
    return var / (tau * tau * tau);
}

double entropy_slope_numeric(LogitView row, double tau, double step) {
    return (exact_entropy(row, tau + step) - exact_entropy(row, tau - step)) / (2.0 * step);
}

std::optional<double> entropy_matched_tau(LogitView row, double target, double lo, double hi,
                                          double coarse_step, double fine_step) {
    double prev_tau = lo;
    double prev_h = exact_entropy(row, lo);
    if (prev_h == target) {
        return lo;
    }
    if (prev_h > target) {
        return std::nullopt;
    }
    for (double tau = lo + coarse_step; tau <= hi + 1e-12; tau += coarse_step) {
        const double h = exact_entropy(row, tau);
        if (h >= target) {
            // Fine sweep inside the bracketing cell.
            double a = prev_tau;
            double ha = prev_h;
            for (double t = prev_tau + fine_step; t <= tau + 1e-15; t += fine_step) {
                const double ht = exact_entropy(row, t);
                if (ht >= target) {
                    if (ht == ha) {
                        return t;
                    }
                    return a + (t - a) * (target - ha) / (ht - ha);
                }
                a = t;
                ha = ht;
            }
            return tau;
        }
        prev_tau = tau;
        prev_h = h;
    }
    return std::nullopt;
}

std::vector<double> finite_difference_grad(const ScalarFn& f, std::span<const double> point, double step,
                                           std::optional<std::span<const std::size_t>> coords) {
    if (!(step > 0.0)) {
        throw DomainError("finite-difference step must be > 0");
    }
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> grad(x.size(), 0.0);
    auto probe = [&](std::size_t i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    };
    if (coords) {
        for (std::size_t i : *coords) {
            probe(i);
        }
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) {
            probe(i);
        }
    }
    return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) {
        throw DomainError("relative_error: size mismatch");
    }
    double scale = floor;
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        scale = std::max(scale, std::abs(numeric[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    }
    return worst / scale;
}

}  // namespace entsft::oracles
