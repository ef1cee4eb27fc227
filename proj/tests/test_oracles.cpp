// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "entsft/dist_core.hpp"
#include "entsft/oracles.hpp"
#include "entsft/projection_oracle.hpp"

using namespace entsft;

TEST_CASE("tau grid and dense sweep") {
    const auto grid = oracles::tau_grid(0.5, 3.0, 0.01);
    CHECK(grid.size() == 251);
    CHECK(grid.front() == 0.5);
    CHECK(std::abs(grid.back() - 3.0) < 1e-12);
    const std::vector<double> row{1.0, 0.0, -1.0};
    const auto sweep = oracles::dense_temperature_sweep(row, grid);
    CHECK(std::abs(sweep[50].entropy - entropy_from_logits(row, 1.0)) < 1e-12);
}

TEST_CASE("closed-form slope equals Var/tau^3 and agrees with central differences") {
    const std::vector<double> row{2.0, 0.0};
    // Two-point: Var of logits under p is 4 p (1 - p).
    const double p = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(std::abs(oracles::entropy_slope_closed_form(row, 1.0) - 4.0 * p * (1.0 - p)) < 1e-14);
    const std::vector<double> r2{3.0, 1.0, 0.0, -0.5, 2.2};
    for (double tau : {0.6, 1.0, 1.7}) {
        CHECK(std::abs(oracles::entropy_slope_closed_form(r2, tau) - oracles::entropy_slope_numeric(r2, tau)) < 1e-7);
    }
}

TEST_CASE("entropy_matched_tau recovers a known temperature and reports out-of-range targets") {
    const std::vector<double> row{3.0, 1.0, 0.0, 0.0};
    const double target = entropy_from_logits(row, 1.37);
    const auto tau = oracles::entropy_matched_tau(row, target, 1.0, 2.0);
    REQUIRE(tau.has_value());
    CHECK(std::abs(*tau - 1.37) < 1e-6);
    CHECK_FALSE(oracles::entropy_matched_tau(row, std::log(4.0) + 0.1, 1.0, 2.0).has_value());
}

TEST_CASE("finite differences and relative error") {
    const oracles::ScalarFn f = [](std::span<const double> x) { return x[0] * x[0] + 3.0 * x[1]; };
    const std::vector<double> at{2.0, -1.0};
    const auto g = oracles::finite_difference_grad(f, at, 1e-6);
    CHECK(std::abs(g[0] - 4.0) < 1e-8);
    CHECK(std::abs(g[1] - 3.0) < 1e-8);
    const std::vector<double> a{1.0, 2.0};
    const std::vector<double> b{1.0, 2.2};
    CHECK(oracles::relative_error(a, b) == doctest::Approx(0.2 / 2.2));
}

TEST_CASE("projection: delta 0 returns the base; positive delta lands on the boundary") {
    const std::vector<double> logits{2.0, 1.0, 0.0, -1.0};
    const auto base = softmax_temp(logits, 1.0).probs;
    const double h = entropy_of_probs(base);
    const auto same = oracles::constrained_projection_solve(base, 0.0);
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(std::abs(same.q[i] - base[i]) < 1e-9);
    }
    const auto tight = oracles::constrained_projection_solve(base, 0.2);
    CHECK(std::abs(tight.entropy - (h + 0.2)) < 1e-6);
    CHECK(tight.kkt_residual < 1e-8);
    CHECK(tight.multiplier > 0.0);
    // The minimizer is a tempered version of the base.
    const auto tau = oracles::entropy_matched_tau(logits, h + 0.2, 1.0, 10.0);
    REQUIRE(tau.has_value());
    const auto tempered = softmax_temp(logits, *tau).probs;
    double tv = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        tv += 0.5 * std::abs(tempered[i] - tight.q[i]);
    }
    CHECK(tv < 1e-4);
    CHECK_THROWS(oracles::constrained_projection_solve(base, std::log(4.0)));
    CHECK_THROWS(oracles::constrained_projection_solve(base, -0.1));
}
