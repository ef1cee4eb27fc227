// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, detail lines indented.
// Criteria 1-7 are the numerical verification suites; 8-10 train small models.
// Exit status is 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "entsft/checkpoint.hpp"
#include "entsft/eval_metrics.hpp"
#include "entsft/trainer.hpp"
#include "entsft/verify.hpp"

using namespace entsft;
namespace fs = std::filesystem;

namespace {

struct Budget {
    std::size_t steps = 4000;
    std::size_t seeds = 3;
    std::size_t pitfall_steps = 2000;
    std::size_t determinism_steps = 300;
};

int g_failures = 0;

void report(int criterion, const std::string& title, bool passed, const std::string& detail) {
    std::printf("[%s] criterion %d (%s): %s\n", passed ? "PASS" : "FAIL", criterion, title.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!passed) {
        ++g_failures;
    }
}

void note(const std::string& line) {
    std::printf("    %s\n", line.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

void suite_criterion(int criterion, const std::string& suite) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto records = run_suite(suite);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = !records.empty();
    for (const auto& r : records) {
        ok = ok && r.passed;
        std::ostringstream line;
        line << (r.passed ? "ok   " : "FAIL ") << r.claim << ": measured " << r.measured << " vs tolerance "
             << r.tolerance << " over " << r.cases << " cases";
        note(line.str());
    }
    report(criterion, suite, ok, std::to_string(records.size()) + " checks, " + fmt("%.1f s", secs));
}

// Desk-scale addition task shared by the training criteria.
TrainConfig base_config(const std::string& regularizer, std::uint64_t seed, std::size_t steps,
                        const fs::path& out) {
    TrainConfig cfg;
    cfg.regularizer.type = parse_regularizer(regularizer);
    cfg.seed = seed;
    cfg.max_steps = steps;
    cfg.batch_size = 32;
    cfg.optimizer.learning_rate = 3e-3;
    cfg.data.spec.min_len = 2;
    cfg.data.spec.max_len = 3;
    cfg.data.spec.n_train = 4000;
    cfg.data.spec.n_eval = 200;
    cfg.eval_every = 0;
    cfg.eval.prompts = 200;
    cfg.eval.samples = 8;
    cfg.eval.max_new = 64;
    cfg.output_dir = out.string();
    return cfg;
}

EvalReport run_and_eval(const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = train(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const EvalReport& r = *res.final_eval;
    std::ostringstream line;
    line << fs::path(cfg.output_dir).filename().string() << ": entropy " << fmt("%.4f", r.mean_token_entropy)
         << " (separators " << fmt("%.3f", r.connector_entropy) << ", digits " << fmt("%.3f", r.digit_entropy)
         << "), greedy acc " << fmt("%.3f", r.greedy_accuracy) << ", avg@8 " << fmt("%.3f", r.sampled.avg_at_k)
         << ", pass@8 " << fmt("%.3f", r.sampled.pass_at_k) << ", 4-gram diversity "
         << fmt("%.4f", r.ngram_diversity) << ", " << fmt("%.0f s", secs);
    note(line.str());
    return r;
}

void mechanism_criterion(const Budget& b, const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    bool entropy_ok = true;
    bool accuracy_ok = true;
    bool diversity_ok = true;
    double min_gap = INFINITY;
    double worst_acc_gap = -INFINITY;
    double vanilla_acc_min = INFINITY;
    std::vector<EvalReport> vanilla_runs;
    for (std::size_t seed = 1; seed <= b.seeds; ++seed) {
        const auto vanilla = run_and_eval(base_config("none", seed, b.steps, work / ("none-seed" + std::to_string(seed))));
        const auto distilled = run_and_eval(base_config("sed", seed, b.steps, work / ("sed-seed" + std::to_string(seed))));
        const double gap = distilled.mean_token_entropy - vanilla.mean_token_entropy;
        const double acc_gap = vanilla.greedy_accuracy - distilled.greedy_accuracy;
        vanilla_runs.push_back(vanilla);
        min_gap = std::min(min_gap, gap);
        worst_acc_gap = std::max(worst_acc_gap, acc_gap);
        vanilla_acc_min = std::min(vanilla_acc_min, vanilla.greedy_accuracy);
        entropy_ok = entropy_ok && gap >= 0.05;
        accuracy_ok = accuracy_ok && acc_gap <= 0.02;
        diversity_ok = diversity_ok && distilled.ngram_diversity > vanilla.ngram_diversity;
        note("seed " + std::to_string(seed) + ": entropy gap " + fmt("%+.4f", gap) + " nats, accuracy gap " +
             fmt("%+.3f", -acc_gap) + ", diversity " + (distilled.ngram_diversity > vanilla.ngram_diversity ? "higher" : "not higher"));
    }
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    note(std::string("(a) entropy gap >= 0.05 on every seed: ") + (entropy_ok ? "yes" : "no") + fmt(", min %.4f", min_gap));
    note(std::string("(b) greedy accuracy within 2 points: ") + (accuracy_ok ? "yes" : "no") +
         fmt(", worst shortfall %.3f", worst_acc_gap));
    note(std::string("(c) 4-gram diversity higher on every seed: ") + (diversity_ok ? "yes" : "no"));
    note(fmt("vanilla greedy accuracy, lowest seed: %.3f", vanilla_acc_min));
    const bool time_ok = mins <= 30.0;

    // Supplementary observations on the same runs (reported, not gated).
    {
        const auto cfg = base_config("none", 1, b.steps, work / "none-seed1");
        const NanoLM model(cfg.model);
        const Dataset data = load_dataset(cfg);
        const auto init = load_checkpoint(work / "none-seed1" / "checkpoints" / "step_000000.ckpt");
        const double h0 = eval_entropy(model, init.student, data.eval, cfg.search.top_k).nats;
        note(fmt("also: vanilla eval entropy at init %.4f", h0) +
             fmt(", after training %.4f", vanilla_runs.front().mean_token_entropy) +
             (vanilla_runs.front().mean_token_entropy < h0 ? " (lower)" : " (not lower)"));
        if (vanilla_runs.size() >= 2) {
            const double d = std::abs(vanilla_runs[0].sampled.avg_at_k - vanilla_runs[1].sampled.avg_at_k);
            note(fmt("also: vanilla avg@8 difference between seeds 1 and 2: %.3f", d) +
                 (d <= 0.02 ? " (within 0.02)" : " (exceeds 0.02)"));
        }
    }
    note(fmt("runtime %.1f min (limit 30)", mins));
    report(8, "mechanism reproduction", entropy_ok && accuracy_ok && diversity_ok && time_ok,
           std::to_string(b.seeds) + " seeds x {none, sed}, " + std::to_string(b.steps) + " steps each");
}

EntropyProfile final_profile(const TrainConfig& cfg) {
    const auto res = train(cfg);
    const auto ckpt = load_checkpoint(res.final_checkpoint);
    const NanoLM model(cfg.model);
    const Dataset data = load_dataset(cfg);
    return eval_entropy_profile(model, ckpt.student, data.eval, cfg.search.top_k);
}

void pitfall_criterion(const Budget& b, const fs::path& work) {
    auto small = base_config("entropy", 1, b.pitfall_steps, work / "entropy-a0.06");
    small.alpha = 0.06;
    auto large = base_config("entropy", 1, b.pitfall_steps, work / "entropy-a0.2");
    large.alpha = 0.2;
    const auto ps = final_profile(small);
    const auto pl = final_profile(large);
    const double ratio = pl.mean / ps.mean;

    // Positions ranked by the smaller-alpha run's entropy; bottom 80% kept.
    std::vector<std::size_t> order(ps.per_position.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return ps.per_position[i] < ps.per_position[j]; });
    const std::size_t keep = (order.size() * 8) / 10;
    double low_small = 0.0;
    double low_large = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        low_small += ps.per_position[order[i]];
        low_large += pl.per_position[order[i]];
    }
    low_small /= static_cast<double>(keep);
    low_large /= static_cast<double>(keep);
    note(fmt("mean eval entropy: alpha 0.06 -> %.4f", ps.mean) + fmt(", alpha 0.2 -> %.4f", pl.mean) +
         fmt(", ratio %.2f", ratio));
    note(fmt("bottom-80%% positions (%.0f): ", static_cast<double>(keep)) + fmt("alpha 0.06 -> %.4f", low_small) +
         fmt(", alpha 0.2 -> %.4f", low_large));
    report(9, "entropy-bonus pitfall", ratio >= 2.0 && low_large > low_small,
           std::to_string(b.pitfall_steps) + " steps per run");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void determinism_criterion(const Budget& b, const fs::path& work) {
    auto a = base_config("sed", 7, b.determinism_steps, work / "determinism-a");
    auto c = base_config("sed", 7, b.determinism_steps, work / "determinism-b");
    a.eval_every = c.eval_every = 100;
    const auto ra = train(a);
    const auto rc = train(c);
    const bool metrics_same = slurp(ra.metrics_path) == slurp(rc.metrics_path);
    const bool eval_same = slurp(ra.eval_path) == slurp(rc.eval_path);
    const bool ckpt_same = slurp(ra.final_checkpoint) == slurp(rc.final_checkpoint);
    note(std::string("metrics.jsonl identical: ") + (metrics_same ? "yes" : "no") + ", eval.jsonl identical: " +
         (eval_same ? "yes" : "no") + ", final checkpoint identical: " + (ckpt_same ? "yes" : "no"));
    report(10, "determinism", metrics_same && eval_same && ckpt_same,
           std::to_string(b.determinism_steps) + "-step sed runs, byte comparison");
}

// The copy example: a model trained on the copy task completes "abc".
void copy_observation(const fs::path& work) {
    TrainConfig cfg = base_config("none", 1, 1500, work / "copy");
    cfg.data.spec.task = TaskKind::copy;
    cfg.data.spec.min_len = 3;
    cfg.data.spec.max_len = 6;
    cfg.eval.prompts = 50;
    cfg.eval.max_new = 12;
    const auto res = train(cfg);
    const auto ckpt = load_checkpoint(res.final_checkpoint);
    const NanoLM model(cfg.model);
    const Example ex{"abc", "abc<END>", "abc"};
    const auto prompt = prompt_tokens(ex);
    const auto out = greedy_decode(model, ckpt.student, prompt, 8, vocab::kEnd);
    const std::string completion =
        vocab::decode(std::span<const std::size_t>(out).subspan(prompt.size()));
    note("also: copy model, prompt \"abc<SEP>\" -> \"" + completion + "\"" +
         fmt(", copy eval greedy accuracy %.3f", res.final_eval->greedy_accuracy));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    fs::path work = "acceptance_work";
    Budget budget;
    std::vector<int> only;
    app.add_option("--work", work, "Scratch directory for training runs");
    app.add_option("--steps", budget.steps, "Steps per run for the mechanism criterion");
    app.add_option("--seeds", budget.seeds, "Seeds for the mechanism criterion");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);

    const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::string> suites{"monotonicity", "kl-uniform", "search", "projection",
                                          "gradients",    "ema",        "gate"};
    for (int c = 1; c <= 7; ++c) {
        if (wanted(c)) {
            suite_criterion(c, suites[static_cast<std::size_t>(c - 1)]);
        }
    }
    if (wanted(8)) {
        mechanism_criterion(budget, work);
    }
    if (wanted(9)) {
        pitfall_criterion(budget, work);
    }
    if (wanted(10)) {
        determinism_criterion(budget, work);
    }
    if (only.empty()) {
        copy_observation(work);
    }
    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ALL PASS" : "NOT ALL PASS", g_failures);
    return g_failures == 0 ? 0 : 1;
}
