// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and its JSON form. Unknown keys are rejected at every
// nesting level; missing keys keep their defaults.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "entsft/losses.hpp"
#include "entsft/nano_lm.hpp"
#include "entsft/optimizer.hpp"
#include "entsft/synth_data.hpp"
#include "entsft/teacher.hpp"
#include "entsft/temp_select.hpp"

namespace entsft {

struct DataConfig {
    TaskSpec spec = default_spec();
    std::string train_path;  // optional JSONL files; generated from `spec` when empty
    std::string eval_path;

    static TaskSpec default_spec() {
        TaskSpec s;
        s.connector_variation = 0.3;
        s.operand_order_variation = 0.3;
        return s;
    }
};

struct EvalConfig {
    std::size_t prompts = 256;
    std::size_t samples = 8;
    double tau = 0.6;
    double top_p = 0.95;
    std::size_t ngram = 4;
    std::size_t max_new = 96;
    std::uint64_t seed = 1234;
};

struct TrainConfig {
    ModelConfig model = default_model();
    GateConfig gate;
    TempSearchConfig search;
    RegularizerKind regularizer = RegularizerKind::sed();
    double alpha = 1.0;
    std::optional<double> fixed_tau;  // non-adaptive teacher temperature ablation
    double student_tau = 1.0;
    TeacherConfig teacher;
    OptimizerConfig optimizer;
    std::size_t epochs = 3;
    std::optional<std::size_t> max_steps;  // overrides the epoch budget when set
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;
    std::size_t eval_every = 200;       // 0 disables periodic eval (final eval still runs)
    std::size_t checkpoint_every = 0;   // 0 writes only the initial and final checkpoints
    bool record_wall_time = false;      // wall_ms is 0 when off, keeping metrics reproducible
    DataConfig data;
    EvalConfig eval;
    std::string output_dir = "runs/default";

    static ModelConfig default_model();
    void validate() const;
};

using Json = nlohmann::ordered_json;

Json to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON dump of the configuration.
std::uint64_t config_hash(const TrainConfig& cfg);
std::string hex64(std::uint64_t v);

}  // namespace entsft
