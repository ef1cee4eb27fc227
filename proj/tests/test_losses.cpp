// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "entsft/dist_core.hpp"
#include "entsft/errors.hpp"
#include "entsft/losses.hpp"
#include "entsft/oracles.hpp"
#include "entsft/rng.hpp"
#include "entsft/temp_select.hpp"

using namespace entsft;

namespace {

LogitBatch random_batch(Rng& rng, std::size_t rows, std::size_t vocab, double scale) {
    LogitBatch b(rows, vocab);
    for (double& x : b.data()) {
        x = scale * rng.normal();
    }
    return b;
}

std::vector<std::size_t> random_tokens(Rng& rng, std::size_t rows, std::size_t vocab) {
    std::vector<std::size_t> t(rows);
    for (auto& y : t) {
        y = rng.below(vocab);
    }
    return t;
}

template <class F>
double fd_error(const LogitBatch& at, const LogitBatch& analytic, F value) {
    const oracles::ScalarFn f = [&](std::span<const double> x) {
        LogitBatch b(at.rows(), at.vocab(), std::vector<double>(x.begin(), x.end()));
        return value(b);
    };
    const auto numeric = oracles::finite_difference_grad(f, at.data(), 1e-6);
    return oracles::relative_error(analytic.data(), numeric);
}

std::vector<TokenTempPlan> plans_with(std::size_t rows, std::vector<double> taus) {
    std::vector<TokenTempPlan> plans(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        plans[i].solved_tau = taus[i % taus.size()];
    }
    return plans;
}

}  // namespace

TEST_CASE("regularizer names round-trip") {
    for (auto t : {RegularizerType::none, RegularizerType::entropy, RegularizerType::entropy_top_fraction,
                   RegularizerType::kl_to_base, RegularizerType::sed}) {
        CHECK(parse_regularizer(to_string(t)) == t);
    }
    CHECK(to_string(RegularizerType::sed) == "sed");
    CHECK(to_string(RegularizerType::kl_to_base) == "kl-base");
    CHECK_THROWS_AS(parse_regularizer("bogus"), ConfigError);
}

TEST_CASE("sft_loss: value and gradient") {
    LogitBatch b(1, 4, std::vector<double>{0, 0, 0, 0});
    const std::vector<std::size_t> y{1};
    const auto r = sft_loss(b, y);
    CHECK(r.value == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(r.grad.row(0)[1] == doctest::Approx(0.25 - 1.0));
    CHECK(r.grad.row(0)[0] == doctest::Approx(0.25));

    Rng rng(4);
    const auto x = random_batch(rng, 6, 9, 2.0);
    const auto t = random_tokens(rng, 6, 9);
    const auto res = sft_loss(x, t);
    CHECK(fd_error(x, res.grad, [&](const LogitBatch& b2) { return sft_loss(b2, t).value; }) < 1e-6);
    CHECK_THROWS_AS(sft_loss(x, std::vector<std::size_t>{1, 2}), DomainError);
}

TEST_CASE("entropy_loss: value is alpha * mean negative entropy and gradient matches") {
    Rng rng(6);
    const auto x = random_batch(rng, 8, 7, 1.5);
    const auto res = entropy_loss(x, 0.3, RegularizerKind::entropy());
    double expect = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        expect -= entropy_from_logits(x.row(i), 1.0);
    }
    CHECK(std::abs(res.value - 0.3 * expect / 8.0) < 1e-14);
    CHECK(fd_error(x, res.grad, [](const LogitBatch& b) {
              return entropy_loss(b, 0.3, RegularizerKind::entropy()).value;
          }) < 1e-6);
}

TEST_CASE("entropy_loss: top fraction keeps ceil(f * rows) highest-entropy rows") {
    LogitBatch x(5, 3, std::vector<double>{5, 0, 0, 0, 0, 0, 2, 0, 0, 9, 0, 0, 1, 0, 0});
    const auto res = entropy_loss(x, 1.0, RegularizerKind::entropy_top(0.4));
    // Highest entropy: row 1 (uniform) then row 4.
    const double expect = -(std::log(3.0) + entropy_from_logits(x.row(4), 1.0)) / 2.0;
    CHECK(std::abs(res.value - expect) < 1e-14);
    for (std::size_t r : {0u, 2u, 3u}) {
        for (double g : res.grad.row(r)) {
            CHECK(g == 0.0);
        }
    }
}

TEST_CASE("kl_to_base_loss: zero at the base, positive elsewhere, gradient matches") {
    Rng rng(12);
    const auto base = random_batch(rng, 5, 6, 1.0);
    const auto at_base = kl_to_base_loss(base, base, 1.0);
    CHECK(std::abs(at_base.value) < 1e-15);
    for (double g : at_base.grad.data()) {
        CHECK(std::abs(g) < 1e-15);
    }
    const auto x = random_batch(rng, 5, 6, 1.0);
    const auto res = kl_to_base_loss(x, base, 0.7);
    double expect = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        expect += kl_divergence(softmax_temp(x.row(i), 1.0), softmax_temp(base.row(i), 1.0));
    }
    CHECK(std::abs(res.value - 0.7 * expect / 5.0) < 1e-14);
    CHECK(fd_error(x, res.grad, [&](const LogitBatch& b) { return kl_to_base_loss(b, base, 0.7).value; }) < 1e-6);
}

TEST_CASE("sed_loss: zero when student equals teacher at tau 1") {
    Rng rng(2);
    const auto x = random_batch(rng, 4, 5, 2.0);
    const auto t = random_tokens(rng, 4, 5);
    const auto plans = plans_with(4, {1.0});
    const auto res = sed_loss(x, x, plans, t);
    CHECK(res.value < 1e-30);
    for (double g : res.grad.data()) {
        CHECK(std::abs(g) < 1e-15);
    }
}

TEST_CASE("sed_loss: value matches the squared log-ratio and gradient matches finite differences") {
    Rng rng(21);
    const auto x = random_batch(rng, 6, 8, 2.0);
    const auto teacher = random_batch(rng, 6, 8, 2.0);
    const auto t = random_tokens(rng, 6, 8);
    const auto plans = plans_with(6, {1.1, 1.25, 1.5});
    for (double st : {1.0, 0.8}) {
        const auto res = sed_loss(x, teacher, plans, t, st);
        double expect = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            const double r = log_prob_at(x.row(i), st, t[i]) - log_prob_at(teacher.row(i), plans[i].solved_tau, t[i]);
            expect += 0.5 * r * r;
        }
        CHECK(std::abs(res.value - expect / 6.0) < 1e-14);
        CHECK(fd_error(x, res.grad, [&](const LogitBatch& b) { return sed_loss(b, teacher, plans, t, st).value; }) <
              1e-6);
    }
}

TEST_CASE("sed_loss: a hotter teacher pulls the student's expert log-probability down") {
    // One peaked row: at tau 1.5 the teacher puts less mass on the expert
    // token, so r > 0 and the gradient step lowers the expert logit.
    LogitBatch x(1, 3, std::vector<double>{4.0, 0.0, 0.0});
    const std::vector<std::size_t> y{0};
    const auto plans = plans_with(1, {1.5});
    const auto res = sed_loss(x, x, plans, y);
    CHECK(res.value > 0.0);
    CHECK(res.grad.row(0)[0] > 0.0);
}

TEST_CASE("total_loss: alpha scaling and at most one regularizer") {
    Rng rng(30);
    const auto x = random_batch(rng, 3, 4, 1.0);
    const auto t = random_tokens(rng, 3, 4);
    const auto sft = sft_loss(x, t);
    const auto reg = entropy_loss(x, 1.0, RegularizerKind::entropy());
    const std::vector<LossResult> regs{reg};
    const auto total = total_loss(sft, regs, 0.25);
    CHECK(total.sft == sft.value);
    CHECK(total.regularizer == reg.value);
    CHECK(std::abs(total.total - (sft.value + 0.25 * reg.value)) < 1e-15);
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        CHECK(std::abs(total.grad.data()[i] - (sft.grad.data()[i] + 0.25 * reg.grad.data()[i])) < 1e-15);
    }
    REQUIRE(total.per_token.size() == 3);
    const auto plain = total_loss(sft, {}, 1.0);
    CHECK(plain.total == sft.value);
    const std::vector<LossResult> two{reg, reg};
    CHECK_THROWS(total_loss(sft, two, 1.0));
}
