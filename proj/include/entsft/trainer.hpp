// SPDX-License-Identifier: Apache-2.0
//
// The training loop. One step runs, in order: student logits, teacher logits,
// base entropy H_t, gate increment, temperature search, teacher distribution,
// regularizer, total loss, optimizer update, conditional teacher sync. Other
// regularizers replace everything between the student logits and the total loss.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "entsft/checkpoint.hpp"
#include "entsft/config.hpp"
#include "entsft/eval_metrics.hpp"
#include "entsft/nano_lm.hpp"
#include "entsft/optimizer.hpp"
#include "entsft/synth_data.hpp"
#include "entsft/teacher.hpp"

namespace entsft {

struct MetricsRecord {
    std::size_t step = 0;
    double loss_sft = 0.0;
    double loss_reg = 0.0;
    double loss_total = 0.0;
    double mean_token_entropy = 0.0;  // nats, student rows at tau = 1
    double mean_delta_t = 0.0;
    double mean_tau_hat = 0.0;
    double clamped_fraction = 0.0;
    double grad_norm = 0.0;  // before clipping
    double learning_rate = 0.0;
    double wall_ms = 0.0;
};

Json to_json(const MetricsRecord& m);

/// Non-finite loss or gradient; `snapshot` describes the offending batch.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, Json snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
    const Json& snapshot() const noexcept { return snapshot_; }

private:
    Json snapshot_;
};

/// Loads the configured dataset from JSONL paths, or generates it.
Dataset load_dataset(const TrainConfig& cfg);

class Trainer {
public:
    Trainer(TrainConfig cfg, Dataset data);
    /// Restores parameters, teacher, optimizer state and step from a checkpoint.
    Trainer(TrainConfig cfg, Dataset data, const Checkpoint& ckpt);

    MetricsRecord train_step(std::span<const Sequence> batch);

    /// Deterministic batch for a 1-based step: a seeded shuffle per epoch.
    std::vector<Sequence> batch_for_step(std::size_t step) const;
    std::size_t total_steps() const noexcept;
    std::size_t step() const noexcept { return step_; }

    EvalReport evaluate() const;
    Checkpoint checkpoint() const;

    const TrainConfig& config() const noexcept { return cfg_; }
    const NanoLM& model() const noexcept { return model_; }
    const ParamSet& params() const noexcept { return params_; }
    const TeacherState& teacher() const noexcept { return teacher_; }
    const Dataset& data() const noexcept { return data_; }

private:
    TrainConfig cfg_;
    Dataset data_;
    std::vector<Sequence> train_seqs_;
    NanoLM model_;
    ParamSet params_;
    TeacherState teacher_;
    std::optional<ParamSet> base_;
    AdamW optimizer_;
    std::size_t step_ = 0;
    mutable std::size_t order_epoch_ = static_cast<std::size_t>(-1);
    mutable std::vector<std::size_t> order_;
};

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_path;
    std::filesystem::path eval_path;
    std::size_t steps = 0;
    std::optional<EvalReport> final_eval;
};

/// Runs the configured budget, writing metrics.jsonl, eval.jsonl and
/// checkpoints/step_NNNNNN.ckpt under cfg.output_dir. With `resume_from`, the
/// run continues from that checkpoint; records past its step are dropped first.
TrainResult train(const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// The configuration echoed into the metrics header (output_dir omitted).
Json run_header(const TrainConfig& cfg);

}  // namespace entsft
