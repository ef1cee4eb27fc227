// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <numeric>

#include "entsft/errors.hpp"
#include "entsft/nano_lm.hpp"
#include "entsft/rng.hpp"

namespace entsft {

namespace {

// Runs all prompts through one lock-step session. `choose(stream, logits)`
// picks the next token for a stream that is generating.
template <class Choose>
std::vector<std::vector<std::size_t>> run_streams(const NanoLM& model, const ParamSet& params,
                                                  const std::vector<std::vector<std::size_t>>& prompts,
                                                  std::size_t max_new,
                                                  std::optional<std::size_t> end_token,
                                                  Choose&& choose) {
    const std::size_t n = prompts.size();
    std::vector<std::vector<std::size_t>> completions(n);
    if (n == 0 || max_new == 0) {
        return completions;
    }
    const std::size_t ctx = model.config().context_len;
    for (const auto& p : prompts) {
        if (p.empty() || p.size() > ctx) {
            throw DomainError("prompt must be non-empty and fit the context");
        }
    }
    std::vector<bool> done(n, false);
    NanoLM::Session session(model, params, n);
    std::vector<std::size_t> feed(n);
    for (std::size_t pos = 0; pos < ctx; ++pos) {
        bool any_active = false;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& prompt = prompts[s];
            if (pos < prompt.size()) {
                feed[s] = prompt[pos];
                any_active = true;
            } else if (!done[s]) {
                feed[s] = completions[s][pos - prompt.size()];
                any_active = true;
            } else {
                feed[s] = prompt.back();  // stream finished; output ignored
            }
        }
        if (!any_active) {
            break;
        }
        const LogitBatch logits = session.step(feed);
        bool all_done = true;
        for (std::size_t s = 0; s < n; ++s) {
            if (done[s] || pos + 1 < prompts[s].size()) {
                all_done = all_done && done[s];
                continue;
            }
            const std::size_t token = choose(s, logits.row(s));
            completions[s].push_back(token);
            if ((end_token && token == *end_token) || completions[s].size() >= max_new ||
                prompts[s].size() + completions[s].size() >= ctx) {
                done[s] = true;
            }
            all_done = all_done && done[s];
        }
        if (all_done) {
            break;
        }
    }
    return completions;
}

}  // namespace

std::size_t sample_nucleus(LogitView row, double tau, double top_p, Rng& rng) {
    if (!(tau > 0.0)) {
        throw DomainError("sampling temperature must be > 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw DomainError("top_p must lie in (0, 1]");
    }
    const ProbDist dist = softmax_temp(row, tau);
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist.probs[a] > dist.probs[b]; });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < order.size()) {
        mass += dist.probs[order[keep]];
        ++keep;
        if (mass >= top_p) {
            break;
        }
    }
    double u = rng.uniform() * mass;
    for (std::size_t i = 0; i < keep; ++i) {
        u -= dist.probs[order[i]];
        if (u < 0.0) {
            return order[i];
        }
    }
    return order[keep - 1];
}

std::vector<std::vector<std::size_t>> greedy_decode_many(
    const NanoLM& model, const ParamSet& params, const std::vector<std::vector<std::size_t>>& prompts,
    std::size_t max_new, std::optional<std::size_t> end_token) {
    return run_streams(model, params, prompts, max_new, end_token,
                       [](std::size_t, LogitView logits) { return argmax(logits); });
}

std::vector<std::vector<std::size_t>> sample_decode_many(
    const NanoLM& model, const ParamSet& params, const std::vector<std::vector<std::size_t>>& prompts,
    std::size_t samples_per_prompt, std::size_t max_new, double tau, double top_p,
    std::uint64_t seed, std::optional<std::size_t> end_token) {
    std::vector<std::vector<std::size_t>> streams;
    std::vector<Rng> rngs;
    streams.reserve(prompts.size() * samples_per_prompt);
    rngs.reserve(prompts.size() * samples_per_prompt);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        for (std::size_t j = 0; j < samples_per_prompt; ++j) {
            streams.push_back(prompts[i]);
            rngs.emplace_back(derive_seed(seed, i, j));
        }
    }
    return run_streams(model, params, streams, max_new, end_token,
                       [&](std::size_t s, LogitView logits) {
                           return sample_nucleus(logits, tau, top_p, rngs[s]);
                       });
}

std::vector<std::size_t> greedy_decode(const NanoLM& model, const ParamSet& params,
                                       std::span<const std::size_t> prompt, std::size_t max_new,
                                       std::optional<std::size_t> end_token) {
    std::vector<std::size_t> out(prompt.begin(), prompt.end());
    const auto c = greedy_decode_many(model, params, {out}, max_new, end_token);
    out.insert(out.end(), c.front().begin(), c.front().end());
    return out;
}

std::vector<std::size_t> sample_decode(const NanoLM& model, const ParamSet& params,
                                       std::span<const std::size_t> prompt, std::size_t max_new,
                                       double tau, double top_p, std::uint64_t seed,
                                       std::optional<std::size_t> end_token) {
    std::vector<std::size_t> out(prompt.begin(), prompt.end());
    Rng rng(seed);
    const auto c = run_streams(model, params, {out}, max_new, end_token,
                               [&](std::size_t, LogitView logits) {
                                   return sample_nucleus(logits, tau, top_p, rng);
                               });
    out.insert(out.end(), c.front().begin(), c.front().end());
    return out;
}

}  // namespace entsft
