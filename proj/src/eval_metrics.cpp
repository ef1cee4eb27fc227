// SPDX-License-Identifier: Apache-2.0
#include "entsft/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "entsft/errors.hpp"
#include "entsft/rng.hpp"

namespace entsft {

namespace {

constexpr std::size_t kEvalChunk = 64;

double round6(double x) { return std::round(x * 1e6) / 1e6; }

std::vector<std::vector<std::size_t>> strip_end(std::vector<std::vector<std::size_t>> seqs) {
    for (auto& s : seqs) {
        if (const auto it = std::find(s.begin(), s.end(), vocab::kEnd); it != s.end()) {
            s.erase(it, s.end());
        }
    }
    return seqs;
}

}  // namespace

EntropyProfile eval_entropy_profile(const NanoLM& model, const ParamSet& params,
                                    std::span<const Example> examples, std::size_t k_top) {
    if (examples.empty()) {
        throw DomainError("eval_entropy needs at least one example");
    }
    EntropyProfile out;
    double connector_sum = 0.0;
    double digit_sum = 0.0;
    std::size_t connector_n = 0;
    std::size_t digit_n = 0;
    for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
        const std::size_t end = std::min(examples.size(), start + kEvalChunk);
        std::vector<Sequence> batch;
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(to_sequence(examples[i]));
        }
        const LogitBatch logits = model.forward(params, batch);
        std::size_t row = 0;
        for (const auto& s : batch) {
            for (std::size_t t = 0; t < s.token_ids.size(); ++t, ++row) {
                if (t + 1 >= s.token_ids.size() || !s.loss_mask[t + 1]) {
                    continue;
                }
                const double h = entropy_topk(logits.row(row), 1.0, k_top).nats;
                const std::size_t target = s.token_ids[t + 1];
                out.per_position.push_back(h);
                out.targets.push_back(target);
                if (vocab::is_connector_token(target)) {
                    connector_sum += h;
                    ++connector_n;
                } else if (vocab::is_digit_token(target)) {
                    digit_sum += h;
                    ++digit_n;
                }
            }
        }
    }
    double sum = 0.0;
    for (double h : out.per_position) {
        sum += h;
    }
    out.mean = out.per_position.empty() ? 0.0 : sum / static_cast<double>(out.per_position.size());
    out.connector_mean = connector_n == 0 ? 0.0 : connector_sum / static_cast<double>(connector_n);
    out.digit_mean = digit_n == 0 ? 0.0 : digit_sum / static_cast<double>(digit_n);
    return out;
}

EntropyValue eval_entropy(const NanoLM& model, const ParamSet& params,
                          std::span<const Example> examples, std::size_t k_top) {
    return {eval_entropy_profile(model, params, examples, k_top).mean};
}

PassAtK pass_at_k_from_pool(const std::vector<std::vector<bool>>& correct, std::size_t k) {
    if (k < 1) {
        throw DomainError("pass@k needs k >= 1");
    }
    PassAtK out;
    out.k = k;
    if (correct.empty()) {
        return out;
    }
    double pass = 0.0;
    double avg = 0.0;
    for (const auto& row : correct) {
        if (row.size() < k) {
            throw DomainError("sample pool smaller than k");
        }
        bool any = false;
        std::size_t hits = 0;
        for (std::size_t j = 0; j < k; ++j) {
            any = any || row[j];
            hits += row[j] ? 1 : 0;
        }
        pass += any ? 1.0 : 0.0;
        avg += static_cast<double>(hits) / static_cast<double>(k);
    }
    out.pass_at_k = pass / static_cast<double>(correct.size());
    out.avg_at_k = avg / static_cast<double>(correct.size());
    return out;
}

SampledEval pass_at_k(const NanoLM& model, const ParamSet& params, TaskKind task,
                      std::span<const Example> examples, std::size_t k, double tau, double top_p,
                      std::uint64_t seed, std::size_t max_new) {
    if (k < 1) {
        throw DomainError("pass@k needs k >= 1");
    }
    std::vector<std::vector<std::size_t>> prompts;
    for (const auto& ex : examples) {
        prompts.push_back(prompt_tokens(ex));
    }
    const auto flat = sample_decode_many(model, params, prompts, k, max_new, tau, top_p, seed, vocab::kEnd);
    SampledEval out;
    std::vector<std::vector<bool>> correct(examples.size());
    out.samples.resize(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const auto& c = flat[i * k + j];
            correct[i].push_back(verify(task, examples[i].prompt, vocab::decode(c)));
            out.samples[i].push_back(c);
        }
        out.samples[i] = strip_end(std::move(out.samples[i]));
    }
    out.scores = pass_at_k_from_pool(correct, k);
    return out;
}

double greedy_accuracy(const NanoLM& model, const ParamSet& params, TaskKind task,
                       std::span<const Example> examples, std::size_t max_new) {
    if (examples.empty()) {
        return 0.0;
    }
    std::vector<std::vector<std::size_t>> prompts;
    for (const auto& ex : examples) {
        prompts.push_back(prompt_tokens(ex));
    }
    const auto completions = greedy_decode_many(model, params, prompts, max_new, vocab::kEnd);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        hits += verify(task, examples[i].prompt, vocab::decode(completions[i])) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

double ngram_diversity(const std::vector<std::vector<std::vector<std::size_t>>>& samples_per_prompt,
                       std::size_t n) {
    if (n < 1) {
        throw DomainError("n-gram order must be >= 1");
    }
    using Gram = std::vector<std::size_t>;
    double total = 0.0;
    std::size_t prompts = 0;
    for (const auto& samples : samples_per_prompt) {
        if (samples.size() < 2) {
            throw DomainError("n-gram diversity needs at least two samples per prompt");
        }
        std::vector<std::set<Gram>> sets;
        for (const auto& s : samples) {
            std::set<Gram> grams;
            if (s.size() < n) {
                grams.insert(s);
            } else {
                for (std::size_t i = 0; i + n <= s.size(); ++i) {
                    grams.emplace(s.begin() + static_cast<std::ptrdiff_t>(i),
                                  s.begin() + static_cast<std::ptrdiff_t>(i + n));
                }
            }
            sets.push_back(std::move(grams));
        }
        double sim = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < sets.size(); ++a) {
            for (std::size_t b = a + 1; b < sets.size(); ++b) {
                std::size_t inter = 0;
                for (const auto& g : sets[a]) {
                    inter += sets[b].count(g);
                }
                const std::size_t uni = sets[a].size() + sets[b].size() - inter;
                sim += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
                ++pairs;
            }
        }
        total += 1.0 - sim / static_cast<double>(pairs);
        ++prompts;
    }
    return prompts == 0 ? 0.0 : total / static_cast<double>(prompts);
}

EvalReport run_eval(const NanoLM& model, const ParamSet& params, TaskKind task,
                    std::span<const Example> examples, const EvalConfig& cfg, std::size_t k_top,
                    std::size_t step) {
    const auto subset = examples.subspan(0, std::min(examples.size(), cfg.prompts));
    EvalReport r;
    r.step = step;
    const EntropyProfile prof = eval_entropy_profile(model, params, subset, k_top);
    r.mean_token_entropy = prof.mean;
    r.connector_entropy = prof.connector_mean;
    r.digit_entropy = prof.digit_mean;
    r.greedy_accuracy = greedy_accuracy(model, params, task, subset, cfg.max_new);
    const SampledEval sampled = pass_at_k(model, params, task, subset, cfg.samples, cfg.tau, cfg.top_p,
                                          derive_seed(cfg.seed, step), cfg.max_new);
    r.sampled = sampled.scores;
    r.ngram_diversity = cfg.samples >= 2 ? ngram_diversity(sampled.samples, cfg.ngram) : 0.0;
    return r;
}

Json to_json(const EvalReport& r) {
    Json j;
    j["step"] = r.step;
    j["greedy_accuracy"] = r.greedy_accuracy;
    j["pass_at_k"] = r.sampled.pass_at_k;
    j["avg_at_k"] = r.sampled.avg_at_k;
    j["k"] = r.sampled.k;
    j["mean_token_entropy"] = round6(r.mean_token_entropy);
    j["connector_entropy"] = round6(r.connector_entropy);
    j["digit_entropy"] = round6(r.digit_entropy);
    j["ngram_diversity"] = r.ngram_diversity;
    return j;
}

}  // namespace entsft
