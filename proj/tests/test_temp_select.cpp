// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "entsft/dist_core.hpp"
#include "entsft/errors.hpp"
#include "entsft/oracles.hpp"
#include "entsft/rng.hpp"
#include "entsft/temp_select.hpp"

using namespace entsft;

TEST_CASE("gate: pivot, lower side and saturation") {
    const GateConfig gate;
    CHECK(entropy_increment(EntropyValue{1.2}, gate) == 0.25);
    const double low = 0.5 / (1.0 + std::exp(2.4));
    CHECK(std::abs(entropy_increment(EntropyValue{0.0}, gate) - low) < 1e-15);
    CHECK(entropy_increment(EntropyValue{0.0}, gate) == doctest::Approx(0.0413).epsilon(1e-2));
    CHECK(entropy_increment(EntropyValue{50.0}, gate) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gate: strictly increasing and bounded by [0, delta_max]") {
    const GateConfig gate;
    double prev = -1.0;
    for (double h = 0.0; h <= 8.0; h += 0.01) {
        const double d = entropy_increment(EntropyValue{h}, gate);
        CHECK(d > prev);
        CHECK(d >= 0.0);
        CHECK(d <= gate.delta_max);
        prev = d;
    }
}

TEST_CASE("config validation") {
    GateConfig g;
    g.delta_max = 0.0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    TempSearchConfig c;
    c.tau_min = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.tau_min = 1.6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    TempSearchConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("solve_temperature: uniform rows clamp to tau_max when above range") {
    const std::vector<double> row(10, 0.7);
    const TempSearchConfig cfg;
    const auto plan = solve_temperature(row, std::log(10.0) + 0.1, cfg);
    CHECK(plan.clamped);
    CHECK(plan.solved_tau == cfg.tau_max);
}

TEST_CASE("solve_temperature: recovers tau = 1.3 on [3,1,0,0] against a dense sweep") {
    const std::vector<double> row{3.0, 1.0, 0.0, 0.0};
    const auto grid = oracles::tau_grid(1.1, 1.5, 1e-4);
    const auto sweep = oracles::dense_temperature_sweep(row, grid);
    const std::size_t i13 = 2000;  // 1.1 + 2000 * 1e-4
    REQUIRE(std::abs(sweep[i13].tau - 1.3) < 1e-9);
    const double target = sweep[i13].entropy;
    TempSearchConfig cfg;
    const auto plan = solve_temperature(row, target, cfg);
    CHECK_FALSE(plan.clamped);
    CHECK(std::abs(plan.achieved_entropy - target) <= cfg.epsilon);
    // The slope here is about 0.6 nats per unit tau, so an entropy residual of
    // at most epsilon bounds the temperature error by a few epsilon.
    CHECK(std::abs(plan.solved_tau - 1.3) < 5e-3);
    cfg.epsilon = 1e-9;
    const auto tight = solve_temperature(row, target, cfg);
    CHECK(std::abs(tight.solved_tau - 1.3) < 1e-6);
}

TEST_CASE("solve_temperature: target exactly at the lower endpoint is not clamped") {
    const std::vector<double> row{2.0, 0.5, -1.0, 0.0};
    const TempSearchConfig cfg;
    const double h_lo = entropy_topk(row, cfg.tau_min, cfg.top_k).nats;
    const auto plan = solve_temperature(row, h_lo, cfg);
    CHECK_FALSE(plan.clamped);
    CHECK(plan.solved_tau == cfg.tau_min);
    const auto below = solve_temperature(row, h_lo - 0.01, cfg);
    CHECK(below.clamped);
    CHECK(below.solved_tau == cfg.tau_min);
}

TEST_CASE("solve_temperature: errors") {
    const std::vector<double> row{1.0, 0.0};
    const TempSearchConfig cfg;
    CHECK_THROWS_AS(solve_temperature(row, NAN, cfg), DomainError);
    CHECK_THROWS_AS(solve_temperature(row, INFINITY, cfg), DomainError);
    CHECK_THROWS_AS(solve_temperature(row, -0.1, cfg), DomainError);
}

TEST_CASE("solve_temperature: too few iterations raise SearchFailure with the residual") {
    const std::vector<double> row{3.0, 1.0, 0.0, 0.0};
    TempSearchConfig cfg;
    cfg.max_iters = 1;
    cfg.epsilon = 1e-12;
    const double target = entropy_topk(row, 1.3456, cfg.top_k).nats;
    try {
        solve_temperature(row, target, cfg);
        FAIL("expected SearchFailure");
    } catch (const SearchFailure& e) {
        CHECK(e.residual() > cfg.epsilon);
    }
}

TEST_CASE("plan_batch: identical rows give identical plans; batch equals per-row") {
    const GateConfig gate;
    const TempSearchConfig cfg;
    LogitBatch rows(3, 5);
    const std::vector<double> peaked{4.0, 0.0, 0.5, -1.0, 0.2};
    for (std::size_t r = 0; r < 2; ++r) {
        std::copy(peaked.begin(), peaked.end(), rows.row(r).begin());
    }
    std::fill(rows.row(2).begin(), rows.row(2).end(), 0.0);
    const auto plans = plan_batch(rows, gate, cfg);
    CHECK(plans[0].solved_tau == plans[1].solved_tau);
    CHECK(plans[0].achieved_entropy == plans[1].achieved_entropy);
    for (std::size_t r = 0; r < 3; ++r) {
        const double h = entropy_topk(rows.row(r), 1.0, cfg.top_k).nats;
        const auto single = solve_temperature(rows.row(r), h + entropy_increment(EntropyValue{h}, gate), cfg);
        CHECK(single.solved_tau == plans[r].solved_tau);
        CHECK(single.achieved_entropy == plans[r].achieved_entropy);
        CHECK(single.clamped == plans[r].clamped);
        CHECK(plans[r].base_entropy == h);
    }
    CHECK(plans[2].clamped);
}

TEST_CASE("plan_batch: properties on random rows") {
    Rng rng(77);
    const GateConfig gate;
    const TempSearchConfig cfg;
    LogitBatch rows(2000, 24);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        const double s = 0.2 + 6.0 * rng.uniform();
        for (double& x : rows.row(r)) {
            x = s * rng.normal();
        }
    }
    const auto plans = plan_batch(rows, gate, cfg);
    for (const auto& p : plans) {
        CHECK(p.increment >= 0.0);
        CHECK(p.solved_tau >= cfg.tau_min);
        CHECK(p.solved_tau <= cfg.tau_max);
        if (!p.clamped) {
            CHECK(std::abs(p.achieved_entropy - p.target_entropy) <= cfg.epsilon);
            CHECK(p.achieved_entropy >= p.base_entropy);
            CHECK(p.increment <= gate.delta_max);
        }
    }
}

TEST_CASE("plan_batch: top-k entropy defines both H_t and the search objective") {
    const GateConfig gate;
    TempSearchConfig cfg;
    cfg.top_k = 4;
    LogitBatch rows(1, 10);
    const std::vector<double> row{3.0, 2.5, 2.0, 1.0, 0.5, 0.0, -1.0, -1.0, -2.0, 0.3};
    std::copy(row.begin(), row.end(), rows.row(0).begin());
    const auto plan = plan_batch(rows, gate, cfg)[0];
    CHECK(plan.base_entropy == entropy_topk(row, 1.0, 4).nats);
    CHECK(plan.achieved_entropy == entropy_topk(row, plan.solved_tau, 4).nats);
}

TEST_CASE("fixed_temperature_plans use one temperature everywhere") {
    LogitBatch rows(2, 3, std::vector<double>{1, 2, 3, 0, 0, 5});
    const auto plans = fixed_temperature_plans(rows, 1.3, 512);
    for (const auto& p : plans) {
        CHECK(p.solved_tau == 1.3);
        CHECK_FALSE(p.clamped);
    }
    CHECK(plans[1].achieved_entropy == entropy_topk(rows.row(1), 1.3, 512).nats);
}
