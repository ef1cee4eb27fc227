// SPDX-License-Identifier: Apache-2.0
//
// Teacher parameters for self-exploratory distillation. In `separate` mode the
// teacher keeps its own parameter copy, blended toward the student every n
// steps with phi <- (1 - mu) * phi + mu * theta. In `shared` mode no copy
// exists and teacher logits are the student logits treated as constants.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "entsft/nano_lm.hpp"
#include "entsft/param_set.hpp"

namespace entsft {

enum class TeacherMode { separate, shared };

std::string to_string(TeacherMode mode);
TeacherMode parse_teacher_mode(const std::string& name);

struct TeacherConfig {
    std::size_t sync_every_n = 5;
    double decay_mu = 0.99;
    TeacherMode mode = TeacherMode::separate;

    void validate() const;
};

struct TeacherState {
    std::optional<ParamSet> params;  // empty in shared mode
    std::size_t sync_every_n = 5;
    double decay_mu = 0.99;
    std::size_t steps_since_sync = 0;
    TeacherMode mode = TeacherMode::separate;
};

TeacherState init_teacher(const ParamSet& student, const TeacherConfig& cfg);

/// Applies the EMA blend when step % n == 0 (steps count from 1); otherwise
/// only the counter advances.
void maybe_sync(TeacherState& state, const ParamSet& student, std::size_t step);

/// Teacher logits for a batch. `student_logits` are returned as-is in shared
/// mode; the result is never differentiated.
LogitBatch teacher_logits(const TeacherState& state, std::span<const Sequence> batch,
                          const NanoLM& model, const LogitBatch& student_logits);

}  // namespace entsft
