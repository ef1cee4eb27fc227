// SPDX-License-Identifier: Apache-2.0
//
// Evaluation diagnostics: teacher-forced token entropy, pass@k / avg@k with
// nucleus sampling, and n-gram diversity across samples.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "entsft/config.hpp"
#include "entsft/dist_core.hpp"
#include "entsft/nano_lm.hpp"
#include "entsft/synth_data.hpp"

namespace entsft {

struct EntropyProfile {
    double mean = 0.0;
    std::vector<double> per_position;      // one entry per supervised response position
    std::vector<std::size_t> targets;      // expert token at that position
    double connector_mean = 0.0;           // positions whose target is a step separator
    double digit_mean = 0.0;               // positions whose target is a digit
};

/// Mean top-k entropy (tau = 1) of the model at every expert-response
/// position, teacher-forced. Uses the same top-k routine as training.
EntropyProfile eval_entropy_profile(const NanoLM& model, const ParamSet& params,
                                    std::span<const Example> examples, std::size_t k_top);
EntropyValue eval_entropy(const NanoLM& model, const ParamSet& params,
                          std::span<const Example> examples, std::size_t k_top);

struct PassAtK {
    std::size_t k = 0;
    double pass_at_k = 0.0;  // fraction of prompts with >= 1 verified sample among k
    double avg_at_k = 0.0;   // mean per-sample verify rate
};

/// pass@k and avg@k over a fixed pool: correct[prompt][sample], first k samples used.
PassAtK pass_at_k_from_pool(const std::vector<std::vector<bool>>& correct, std::size_t k);

struct SampledEval {
    PassAtK scores;
    std::vector<std::vector<std::vector<std::size_t>>> samples;  // [prompt][sample] completion tokens
};

SampledEval pass_at_k(const NanoLM& model, const ParamSet& params, TaskKind task,
                      std::span<const Example> examples, std::size_t k, double tau, double top_p,
                      std::uint64_t seed, std::size_t max_new);

double greedy_accuracy(const NanoLM& model, const ParamSet& params, TaskKind task,
                       std::span<const Example> examples, std::size_t max_new);

/// 1 - mean pairwise Jaccard similarity of n-gram sets, averaged over prompts.
/// A sample shorter than n is compared by whole-sequence identity.
double ngram_diversity(const std::vector<std::vector<std::vector<std::size_t>>>& samples_per_prompt,
                       std::size_t n = 4);

struct EvalReport {
    std::size_t step = 0;
    double greedy_accuracy = 0.0;
    PassAtK sampled;
    double mean_token_entropy = 0.0;
    double connector_entropy = 0.0;
    double digit_entropy = 0.0;
    double ngram_diversity = 0.0;
};

EvalReport run_eval(const NanoLM& model, const ParamSet& params, TaskKind task,
                    std::span<const Example> examples, const EvalConfig& cfg, std::size_t k_top,
                    std::size_t step);

Json to_json(const EvalReport& r);

}  // namespace entsft
