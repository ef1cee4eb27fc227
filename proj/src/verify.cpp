// SPDX-License-Identifier: Apache-2.0
#include "entsft/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "entsft/dist_core.hpp"
#include "entsft/errors.hpp"
#include "entsft/losses.hpp"
#include "entsft/nano_lm.hpp"
#include "entsft/oracles.hpp"
#include "entsft/projection_oracle.hpp"
#include "entsft/rng.hpp"
#include "entsft/teacher.hpp"
#include "entsft/temp_select.hpp"

namespace entsft {

Json to_json(const CheckRecord& r) {
    Json j;
    j["suite"] = r.suite;
    j["claim"] = r.claim;
    j["tolerance"] = r.tolerance;
    j["measured"] = r.measured;
    j["passed"] = r.passed;
    j["cases"] = r.cases;
    j["seconds"] = r.seconds;
    return j;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"monotonicity", "kl-uniform", "search", "projection",
                                                "gradients",    "ema",        "gate"};
    return names;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

CheckRecord check_le(std::string suite, std::string claim, double measured, double tol, std::size_t cases) {
    CheckRecord r;
    r.suite = std::move(suite);
    r.claim = std::move(claim);
    r.tolerance = tol;
    r.measured = measured;
    r.passed = measured <= tol;
    r.cases = cases;
    return r;
}

std::vector<double> normal_row(Rng& rng, std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = scale * rng.normal();
    }
    return v;
}

std::vector<CheckRecord> monotonicity_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, 1));
    const auto grid = oracles::tau_grid(0.5, 3.0, 0.01);
    std::size_t decreases = 0;
    double worst_drop = 0.0;
    double worst_rel = 0.0;
    constexpr std::size_t kRows = 1000;
    for (std::size_t r = 0; r < kRows; ++r) {
        const auto row = normal_row(rng, 32, 3.0);
        const auto sweep = oracles::dense_temperature_sweep(row, grid);
        for (std::size_t i = 1; i < sweep.size(); ++i) {
            const double drop = sweep[i - 1].entropy - sweep[i].entropy;
            worst_drop = std::max(worst_drop, drop);
            if (drop > 1e-9) {
                ++decreases;
            }
        }
        for (double tau : grid) {
            const double cf = oracles::entropy_slope_closed_form(row, tau);
            const double fd = oracles::entropy_slope_numeric(row, tau);
            worst_rel = std::max(worst_rel, std::abs(fd - cf) / std::max(std::abs(cf), 1e-12));
        }
    }
    const double secs = seconds_since(t0);
    std::vector<CheckRecord> out;
    out.push_back(check_le("monotonicity", "entropy decreases beyond 1e-9 on the tau grid (count)",
                           static_cast<double>(decreases), 0.0, kRows * grid.size()));
    out.push_back(check_le("monotonicity", "largest entropy drop between grid neighbours", worst_drop, 1e-9,
                           kRows * grid.size()));
    out.push_back(check_le("monotonicity", "finite-difference dH/dtau vs Var[z]/tau^3 (rel-err)", worst_rel,
                           1e-4, kRows * grid.size()));
    out.push_back(check_le("monotonicity", "suite runtime (s)", secs, 5.0, kRows));
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

std::vector<CheckRecord> kl_uniform_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, 2));
    double worst = 0.0;
    constexpr std::size_t kCases = 1000;
    for (std::size_t c = 0; c < kCases; ++c) {
        const std::size_t v = 2 + rng.below(63);
        const double scale = 0.1 + 5.0 * rng.uniform();
        const ProbDist pi = softmax_temp(normal_row(rng, v, scale), 1.0);
        const ProbDist u = ProbDist::from_probs(std::vector<double>(v, 1.0 / static_cast<double>(v)));
        const double lhs = kl_divergence(pi, u);
        const double rhs = std::log(static_cast<double>(v)) - entropy(pi).nats;
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    auto r = check_le("kl-uniform", "|KL(pi||U) - (log|V| - H(pi))|", worst, 1e-10, kCases);
    r.seconds = seconds_since(t0);
    return {r};
}

bool same_plan(const TokenTempPlan& a, const TokenTempPlan& b) {
    return a.base_entropy == b.base_entropy && a.increment == b.increment && a.solved_tau == b.solved_tau &&
           a.target_entropy == b.target_entropy && a.achieved_entropy == b.achieved_entropy &&
           a.clamped == b.clamped;
}

std::vector<CheckRecord> search_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, 3));
    constexpr std::size_t kRows = 10000;
    constexpr std::size_t kVocab = 50;
    const GateConfig gate;
    const TempSearchConfig cfg;
    LogitBatch rows(kRows, kVocab);
    for (std::size_t r = 0; r < kRows; ++r) {
        const double scale = 0.3 + 7.7 * rng.uniform();
        auto dst = rows.row(r);
        for (double& x : dst) {
            x = scale * rng.normal();
        }
    }
    const auto plans = plan_batch(rows, gate, cfg);
    double worst_residual = 0.0;
    std::size_t endpoint_violations = 0;
    std::size_t mismatches = 0;
    std::size_t clamped = 0;
    for (std::size_t r = 0; r < kRows; ++r) {
        const auto& p = plans[r];
        if (p.clamped) {
            ++clamped;
            const bool at_lo = p.solved_tau == cfg.tau_min && p.target_entropy < p.achieved_entropy;
            const bool at_hi = p.solved_tau == cfg.tau_max && p.target_entropy > p.achieved_entropy;
            const double h_end = entropy_topk(rows.row(r), p.solved_tau, cfg.top_k).nats;
            if (!(at_lo || at_hi) || h_end != p.achieved_entropy) {
                ++endpoint_violations;
            }
        } else {
            worst_residual = std::max(worst_residual, std::abs(p.achieved_entropy - p.target_entropy));
        }
        const double h_t = entropy_topk(rows.row(r), 1.0, cfg.top_k).nats;
        const double target = h_t + entropy_increment(EntropyValue{h_t}, gate);
        if (!same_plan(p, solve_temperature(rows.row(r), target, cfg))) {
            ++mismatches;
        }
    }
    const double secs = seconds_since(t0);
    std::vector<CheckRecord> out;
    out.push_back(check_le("search", "max |achieved - target| over unclamped plans (nats)", worst_residual,
                           cfg.epsilon, kRows - clamped));
    out.push_back(check_le("search", "clamped plans not exactly at the matching endpoint (count)",
                           static_cast<double>(endpoint_violations), 0.0, clamped));
    out.push_back(check_le("search", "batched plans differing from per-row plans (count)",
                           static_cast<double>(mismatches), 0.0, kRows));
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

std::vector<CheckRecord> projection_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, 4));
    const double deltas[] = {0.05, 0.2, 0.4};
    double worst_tv = 0.0;
    double worst_active = 0.0;
    double worst_kkt = 0.0;
    std::size_t unmatched = 0;
    std::size_t cases = 0;
    constexpr std::size_t kBases = 50;
    for (std::size_t b = 0; b < kBases; ++b) {
        const std::size_t v = 3 + rng.below(6);
        const double scale = 0.5 + 2.0 * rng.uniform();
        const ProbDist base = softmax_temp(normal_row(rng, v, scale), 1.0);
        std::vector<double> logp(v);
        for (std::size_t i = 0; i < v; ++i) {
            logp[i] = std::log(base.probs[i]);
        }
        const double h0 = entropy(base).nats;
        for (double delta : deltas) {
            if (h0 + delta >= std::log(static_cast<double>(v)) - 1e-3) {
                continue;  // infeasible or degenerate target for this base
            }
            ++cases;
            const auto res = oracles::constrained_projection_solve(base.probs, delta);
            worst_active = std::max(worst_active, std::abs(res.entropy - res.target_entropy));
            worst_kkt = std::max(worst_kkt, res.kkt_residual);
            const auto tau = oracles::entropy_matched_tau(logp, res.target_entropy, 1.0, 500.0);
            if (!tau) {
                ++unmatched;
                continue;
            }
            const ProbDist scaled = softmax_temp(logp, *tau);
            double tv = 0.0;
            for (std::size_t i = 0; i < v; ++i) {
                tv += std::abs(res.q[i] - scaled.probs[i]);
            }
            worst_tv = std::max(worst_tv, 0.5 * tv);
        }
    }
    const double secs = seconds_since(t0);
    std::vector<CheckRecord> out;
    out.push_back(check_le("projection", "TV(projection optimum, temperature-scaled base at matched tau)",
                           unmatched == 0 ? worst_tv : INFINITY, 1e-3, cases));
    out.push_back(check_le("projection", "|H(q*) - (H(base) + delta)| (constraint active)", worst_active,
                           1e-4, cases));
    out.push_back(check_le("projection", "KKT residual of the projection solver", worst_kkt, 1e-8, cases));
    out.push_back(check_le("projection", "suite runtime (s)", secs, 60.0, cases));
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

double fd_rel_error(const std::function<double(const std::vector<double>&)>& f, std::span<const double> x,
                    std::span<const double> analytic, double step) {
    const oracles::ScalarFn fn = [&](std::span<const double> p) {
        return f(std::vector<double>(p.begin(), p.end()));
    };
    const auto numeric = oracles::finite_difference_grad(fn, x, step);
    return oracles::relative_error(analytic, numeric);
}

std::vector<double> flatten(const ParamSet& ps) {
    std::vector<double> out;
    out.reserve(ps.element_count());
    for (const auto& p : ps) {
        out.insert(out.end(), p.data.begin(), p.data.end());
    }
    return out;
}

void unflatten(std::span<const double> flat, ParamSet& ps) {
    std::size_t k = 0;
    for (auto& p : ps) {
        for (double& x : p.data) {
            x = flat[k++];
        }
    }
}

std::vector<CheckRecord> gradient_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, 5));
    constexpr std::size_t kRows = 6;
    constexpr std::size_t kVocab = 16;
    constexpr double kLossTol = 1e-4;
    std::vector<CheckRecord> out;
    auto random_batch = [&](double scale) { return LogitBatch(kRows, kVocab, normal_row(rng, kRows * kVocab, scale)); };
    std::vector<std::size_t> tokens(kRows);
    for (auto& t : tokens) {
        t = rng.below(kVocab);
    }
    const LogitBatch x0 = random_batch(2.0);
    const LogitBatch base = random_batch(2.0);
    const LogitBatch teacher = random_batch(2.0);
    const auto plans = plan_batch(teacher, GateConfig{}, TempSearchConfig{});
    const double step = 1e-6;

    auto add = [&](const std::string& name, const std::function<LossResult(const LogitBatch&)>& loss) {
        const LossResult at = loss(x0);
        const double rel = fd_rel_error(
            [&](const std::vector<double>& x) { return loss(LogitBatch(kRows, kVocab, x)).value; }, x0.data(),
            at.grad.data(), step);
        out.push_back(check_le("gradients", name + " analytic vs central differences (rel-err)", rel, kLossTol,
                               kRows * kVocab));
    };
    add("sft_loss", [&](const LogitBatch& s) { return sft_loss(s, tokens); });
    add("entropy_loss", [&](const LogitBatch& s) { return entropy_loss(s, 0.7, RegularizerKind::entropy()); });
    add("entropy_loss (top 50% rows)",
        [&](const LogitBatch& s) { return entropy_loss(s, 0.7, RegularizerKind::entropy_top(0.5)); });
    add("kl_to_base_loss", [&](const LogitBatch& s) { return kl_to_base_loss(s, base, 0.7); });
    add("sed_loss", [&](const LogitBatch& s) { return sed_loss(s, teacher, plans, tokens); });
    add("sed_loss (student tau 0.8)", [&](const LogitBatch& s) { return sed_loss(s, teacher, plans, tokens, 0.8); });
    add("total_loss (sft + 0.5 sed)", [&](const LogitBatch& s) {
        const LossResult reg = sed_loss(s, teacher, plans, tokens);
        const LossBreakdown tot = total_loss(sft_loss(s, tokens), std::span<const LossResult>(&reg, 1), 0.5);
        return LossResult{tot.total, tot.grad, {}};
    });

    // Full model: SFT + SED on the model's own logits, all parameters perturbed.
    ModelConfig mc;
    mc.vocab_size = 11;
    mc.context_len = 16;
    mc.d_model = 16;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.init_std = 0.3;
    mc.seed = derive_seed(seed, 6);
    const NanoLM model(mc);
    ParamSet params = model.init_params();
    {
        Rng prng(derive_seed(seed, 7));
        for (auto& p : params) {
            for (double& x : p.data) {
                x += 0.1 * prng.normal();  // move gains and biases off their initial constants
            }
        }
    }
    std::vector<Sequence> batch(2);
    const std::size_t lens[] = {9, 6};
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 0; t < lens[b]; ++t) {
            batch[b].token_ids.push_back(rng.below(mc.vocab_size));
            batch[b].loss_mask.push_back(true);
        }
    }
    std::vector<std::size_t> targets;
    for (const auto& s : batch) {
        for (std::size_t t = 0; t < s.token_ids.size(); ++t) {
            targets.push_back(t + 1 < s.token_ids.size() ? s.token_ids[t + 1] : 0);
        }
    }
    const LogitBatch model_teacher(targets.size(), mc.vocab_size, normal_row(rng, targets.size() * mc.vocab_size, 2.0));
    const auto model_plans = plan_batch(model_teacher, GateConfig{}, TempSearchConfig{});
    auto model_loss = [&](const LogitBatch& logits) {
        const LossResult reg = sed_loss(logits, model_teacher, model_plans, targets);
        return total_loss(sft_loss(logits, targets), std::span<const LossResult>(&reg, 1), 0.5);
    };
    const ForwardPass pass = model.forward_train(params, batch);
    const ParamSet grad = model.backward(params, pass, model_loss(pass.logits).grad);
    ParamSet scratch = params;
    const double rel = fd_rel_error(
        [&](const std::vector<double>& flat) {
            unflatten(flat, scratch);
            return model_loss(model.forward(scratch, batch)).total;
        },
        flatten(params), flatten(grad), 1e-5);
    out.push_back(check_le("gradients", "nano model backward vs central differences (rel-err)", rel, 1e-3,
                           params.element_count()));
    const double secs = seconds_since(t0);
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

std::vector<CheckRecord> ema_suite(std::uint64_t seed) {
    const auto t0 = Clock::now();
    ModelConfig mc;
    mc.vocab_size = 11;
    mc.context_len = 16;
    mc.d_model = 8;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.seed = derive_seed(seed, 8);
    const NanoLM model(mc);
    ParamSet student = model.init_params();
    TeacherConfig tc;
    TeacherState teacher = init_teacher(student, tc);
    Rng rng(derive_seed(seed, 9));
    double worst_sync = 0.0;
    std::size_t drifted = 0;
    std::size_t syncs = 0;
    constexpr std::size_t kSteps = 23;
    for (std::size_t step = 1; step <= kSteps; ++step) {
        for (auto& p : student) {
            for (double& x : p.data) {
                x += 0.05 * rng.normal();
            }
        }
        const ParamSet before = *teacher.params;
        maybe_sync(teacher, student, step);
        if (step % tc.sync_every_n == 0) {
            ++syncs;
            for (std::size_t i = 0; i < before.size(); ++i) {
                for (std::size_t j = 0; j < before[i].data.size(); ++j) {
                    const double expect =
                        (1.0 - tc.decay_mu) * before[i].data[j] + tc.decay_mu * student[i].data[j];
                    const double scale = std::max(std::abs(expect), 1e-300);
                    worst_sync = std::max(worst_sync, std::abs((*teacher.params)[i].data[j] - expect) / scale);
                }
            }
        } else if (!(*teacher.params == before)) {
            ++drifted;
        }
    }
    TeacherConfig shared = tc;
    shared.mode = TeacherMode::shared;
    const bool shared_empty = !init_teacher(student, shared).params.has_value();
    const double secs = seconds_since(t0);
    std::vector<CheckRecord> out;
    out.push_back(check_le("ema", "teacher after sync vs (1-mu) old + mu student (relative, per element)",
                           worst_sync, 0.0, syncs));
    out.push_back(check_le("ema", "teacher changed between syncs (count)", static_cast<double>(drifted), 0.0,
                           kSteps - syncs));
    out.push_back(check_le("ema", "shared mode allocates a teacher copy (0 = no)", shared_empty ? 0.0 : 1.0,
                           0.0, 1));
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

std::vector<CheckRecord> gate_suite(std::uint64_t) {
    const auto t0 = Clock::now();
    const GateConfig gate;
    auto delta = [&](double h) { return entropy_increment(EntropyValue{h}, gate); };
    // Independent sigmoid via tanh.
    auto oracle = [&](double h) { return gate.delta_max * 0.5 * (1.0 + std::tanh(0.5 * gate.gamma * (h - gate.h_pivot))); };
    std::vector<CheckRecord> out;
    out.push_back(check_le("gate", "|Delta(H_pivot) - Delta_max/2|", std::abs(delta(gate.h_pivot) - gate.delta_max / 2.0),
                           0.0, 1));
    std::size_t violations = 0;
    std::size_t n = 0;
    double prev = delta(0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double cur = delta(0.01 * i);
        if (!(cur > prev)) {
            ++violations;
        }
        prev = cur;
        ++n;
    }
    out.push_back(check_le("gate", "non-increasing steps of Delta on H_t in [0, 10] step 0.01 (count)",
                           static_cast<double>(violations), 0.0, n));
    const double d0 = delta(0.0);
    const double d10 = delta(10.0);
    out.push_back(check_le("gate", "Delta(0) strictly inside (0, Delta_max) (0 = yes)",
                           (d0 > 0.0 && d0 < gate.delta_max) ? 0.0 : 1.0, 0.0, 1));
    out.push_back(check_le("gate", "|Delta(0) - sigmoid oracle|", std::abs(d0 - oracle(0.0)), 1e-15, 1));
    out.push_back(check_le("gate", "Delta(10) strictly below Delta_max (0 = yes)", d10 < gate.delta_max ? 0.0 : 1.0,
                           0.0, 1));
    out.push_back(check_le("gate", "Delta_max - Delta(10) (saturation)", gate.delta_max - d10, 1e-7, 1));
    const double secs = seconds_since(t0);
    for (auto& r : out) {
        r.seconds = secs;
    }
    return out;
}

}  // namespace

std::vector<CheckRecord> run_suite(const std::string& name, std::uint64_t seed) {
    if (name == "monotonicity") return monotonicity_suite(seed);
    if (name == "kl-uniform") return kl_uniform_suite(seed);
    if (name == "search") return search_suite(seed);
    if (name == "projection") return projection_suite(seed);
    if (name == "gradients") return gradient_suite(seed);
    if (name == "ema") return ema_suite(seed);
    if (name == "gate") return gate_suite(seed);
    throw ConfigError("unknown verification suite '" + name + "'");
}

std::vector<CheckRecord> run_all_suites(std::uint64_t seed) {
    std::vector<CheckRecord> all;
    for (const auto& name : suite_names()) {
        auto part = run_suite(name, seed);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

}  // namespace entsft
