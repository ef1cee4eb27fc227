// SPDX-License-Identifier: Apache-2.0
//
// Brute-force verifiers used to check the library's closed-form claims.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "entsft/dist_core.hpp"

namespace entsft::oracles {

struct SweepPoint {
    double tau = 0.0;
    double entropy = 0.0;
};

/// Exact entropy of softmax(row / tau) at every grid temperature.
std::vector<SweepPoint> dense_temperature_sweep(LogitView row, std::span<const double> tau_grid);

/// Evenly spaced grid [lo, hi] with the given step (hi included up to rounding).
std::vector<double> tau_grid(double lo, double hi, double step);

/// Var_pi[z] / tau^3, the closed-form slope of entropy in temperature.
double entropy_slope_closed_form(LogitView row, double tau);

/// Central-difference slope of entropy in temperature.
double entropy_slope_numeric(LogitView row, double tau, double step = 1e-5);

/// Temperature whose exact entropy equals `target`, found by sweeping a grid
/// with step `coarse_step` and then refining the bracketing cell with a fine
/// sweep (step `fine_step`) and linear interpolation. Returns nullopt when the
/// target is not bracketed on [lo, hi].
std::optional<double> entropy_matched_tau(LogitView row, double target, double lo, double hi,
                                          double coarse_step = 1e-2, double fine_step = 1e-7);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences per coordinate. When `coords` is given only those
/// coordinates are estimated (others are left at 0).
std::vector<double> finite_difference_grad(const ScalarFn& f, std::span<const double> point, double step,
                                           std::optional<std::span<const std::size_t>> coords = std::nullopt);

/// max_i |a_i - b_i| / max(|b|_inf, floor). A norm-relative error that stays
/// meaningful when individual components are near zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-12);

}  // namespace entsft::oracles
