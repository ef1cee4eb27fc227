// SPDX-License-Identifier: Apache-2.0
//
// Miniature pre-norm decoder-only transformer with learned positional
// embeddings and a hand-derived backward pass. Everything runs in double
// precision on the CPU.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "entsft/dist_core.hpp"
#include "entsft/param_set.hpp"

namespace entsft {

struct ModelConfig {
    std::size_t vocab_size = 50;
    std::size_t context_len = 128;
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 0;  // 0 means 4 * d_model
    std::uint64_t seed = 1;
    double init_std = 0.02;
    bool tie_embeddings = false;
    bool zero_init_head = false;

    std::size_t ff_dim() const noexcept { return d_ff == 0 ? 4 * d_model : d_ff; }
    void validate() const;
};

/// Token ids plus a per-position mask that is true on response tokens.
struct Sequence {
    std::vector<std::size_t> token_ids;
    std::vector<bool> loss_mask;
};

struct ForwardCache;

/// Result of a forward pass that keeps the activations needed by backward.
/// Logit rows are laid out sequence-major: all positions of sequence 0, then
/// sequence 1, and so on (no padding rows).
struct ForwardPass {
    LogitBatch logits;
    std::vector<std::size_t> offsets;  // first row of each sequence
    std::vector<std::size_t> lengths;
    std::shared_ptr<const ForwardCache> cache;
};

class NanoLM {
public:
    explicit NanoLM(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }

    /// Seeded initialization: normal(0, init_std), residual output projections
    /// scaled by 1/sqrt(2 n_layers), zero biases, unit layer-norm gains.
    ParamSet init_params() const;

    /// Closed-form parameter count implied by the configuration.
    std::size_t expected_param_count() const noexcept;

    LogitBatch forward(const ParamSet& params, std::span<const Sequence> batch) const;
    ForwardPass forward_train(const ParamSet& params, std::span<const Sequence> batch) const;

    /// Reverse-mode gradient of sum(upstream * logits) with respect to every parameter.
    ParamSet backward(const ParamSet& params, const ForwardPass& pass, const LogitBatch& upstream) const;
    ParamSet backward(const ParamSet& params, std::span<const Sequence> batch,
                      const LogitBatch& upstream) const;

    /// Logits for the next token after each position, computed incrementally
    /// with a key/value cache. `streams` sequences advance in lock-step.
    class Session {
    public:
        Session(const NanoLM& model, const ParamSet& params, std::size_t streams);
        ~Session();
        Session(Session&&) noexcept;
        Session& operator=(Session&&) noexcept;

        /// Feeds one token per stream at the current position; returns the
        /// [streams x vocab] logits for the following position.
        LogitBatch step(std::span<const std::size_t> tokens);
        std::size_t position() const noexcept;

    private:
        struct Impl;
        std::unique_ptr<Impl> impl_;
    };

private:
    struct Layout {
        std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
        struct Block {
            std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_in, b_in, w_out, b_out;
        };
        std::vector<Block> blocks;
    };

    void check_params(const ParamSet& params) const;
    void check_batch(std::span<const Sequence> batch) const;

    ModelConfig config_;
    Layout layout_;
    ParamSet prototype_;
};

/// Appends greedy tokens until `max_new` tokens or `end_token` is produced.
/// Returns prompt + completion.
std::vector<std::size_t> greedy_decode(const NanoLM& model, const ParamSet& params,
                                       std::span<const std::size_t> prompt, std::size_t max_new,
                                       std::optional<std::size_t> end_token = std::nullopt);

/// Nucleus sampling at temperature `tau`; reproducible for a given seed.
/// Returns prompt + completion.
std::vector<std::size_t> sample_decode(const NanoLM& model, const ParamSet& params,
                                       std::span<const std::size_t> prompt, std::size_t max_new,
                                       double tau, double top_p, std::uint64_t seed,
                                       std::optional<std::size_t> end_token = std::nullopt);

/// Batched greedy completions (completion tokens only, end token included).
std::vector<std::vector<std::size_t>> greedy_decode_many(
    const NanoLM& model, const ParamSet& params, const std::vector<std::vector<std::size_t>>& prompts,
    std::size_t max_new, std::optional<std::size_t> end_token);

/// `samples_per_prompt` nucleus completions for each prompt. Stream seeds are
/// derived from (seed, prompt index, sample index). Output is prompt-major.
std::vector<std::vector<std::size_t>> sample_decode_many(
    const NanoLM& model, const ParamSet& params, const std::vector<std::vector<std::size_t>>& prompts,
    std::size_t samples_per_prompt, std::size_t max_new, double tau, double top_p,
    std::uint64_t seed, std::optional<std::size_t> end_token);

class Rng;
/// Draws from the smallest top-probability set with mass >= top_p.
std::size_t sample_nucleus(LogitView row, double tau, double top_p, Rng& rng);

}  // namespace entsft
