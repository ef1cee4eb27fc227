// SPDX-License-Identifier: Apache-2.0
//
// Synthetic, machine-verifiable corpora with explicit multi-step responses.
// Tokenization is character level with three reserved ids.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "entsft/nano_lm.hpp"

namespace entsft {

enum class TaskKind { copy, reverse, multi_digit_add };

std::string to_string(TaskKind task);
TaskKind parse_task(const std::string& name);  // "copy", "reverse", "add"

namespace vocab {

inline constexpr std::size_t kSep = 0;
inline constexpr std::size_t kEnd = 1;
inline constexpr std::size_t kPad = 2;

std::size_t size();
/// Encodes text; "<SEP>", "<END>" and "<PAD>" map to the reserved ids.
/// Throws DomainError on characters outside the vocabulary.
std::vector<std::size_t> encode(std::string_view text);
std::string decode(std::span<const std::size_t> ids);
bool is_digit_token(std::size_t id);
/// Step separators (';' and ','), the positions where responses branch.
bool is_connector_token(std::size_t id);

}  // namespace vocab

struct TaskSpec {
    TaskKind task = TaskKind::multi_digit_add;
    std::size_t min_len = 2;  // digits per operand, or string length
    std::size_t max_len = 4;
    std::size_t n_train = 20000;
    std::size_t n_eval = 1000;
    std::uint64_t seed = 7;
    /// Probability of writing a step separator as ", " instead of "; ".
    double connector_variation = 0.0;
    /// Probability that a step writes its digits as "b+a" rather than "a+b".
    double operand_order_variation = 0.0;

    void validate() const;
};

struct Example {
    std::string prompt;    // question text, without the separator token
    std::string response;  // expert response, ending in "<END>"
    std::string answer;    // canonical final answer
};

struct Dataset {
    std::vector<Example> train;
    std::vector<Example> eval;
};

/// Deterministic given the seed; train and eval instances are disjoint.
Dataset generate(const TaskSpec& spec);

/// Expert steps for a + b with canonical "; " separators, without the end marker.
std::string addition_steps(std::uint64_t a, std::uint64_t b);

/// Checks only the final answer segment of a completion.
bool verify(TaskKind task, std::string_view prompt, std::string_view completion);

/// prompt + <SEP> + response, loss mask on the response tokens.
Sequence to_sequence(const Example& ex);
std::vector<std::size_t> prompt_tokens(const Example& ex);

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> read_jsonl(const std::filesystem::path& path);

}  // namespace entsft
