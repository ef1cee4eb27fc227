// SPDX-License-Identifier: Apache-2.0
#include "entsft/teacher.hpp"

#include "entsft/errors.hpp"

namespace entsft {

std::string to_string(TeacherMode mode) {
    return mode == TeacherMode::separate ? "separate" : "shared";
}

TeacherMode parse_teacher_mode(const std::string& name) {
    if (name == "separate") {
        return TeacherMode::separate;
    }
    if (name == "shared") {
        return TeacherMode::shared;
    }
    throw ConfigError("unknown teacher mode '" + name + "'");
}

void TeacherConfig::validate() const {
    if (sync_every_n < 1) {
        throw ConfigError("teacher sync_every_n must be >= 1");
    }
    if (!(decay_mu >= 0.0 && decay_mu <= 1.0)) {
        throw ConfigError("teacher decay_mu must lie in [0, 1]");
    }
}

TeacherState init_teacher(const ParamSet& student, const TeacherConfig& cfg) {
    cfg.validate();
    if (!student.all_finite()) {
        throw DomainError("cannot initialize teacher from non-finite student parameters");
    }
    TeacherState state;
    state.sync_every_n = cfg.sync_every_n;
    state.decay_mu = cfg.decay_mu;
    state.mode = cfg.mode;
    if (cfg.mode == TeacherMode::separate) {
        state.params = student;
    }
    return state;
}

void maybe_sync(TeacherState& state, const ParamSet& student, std::size_t step) {
    if (state.mode == TeacherMode::shared) {
        return;
    }
    ParamSet& teacher = *state.params;
    teacher.require_same_layout(student, "teacher sync");
    ++state.steps_since_sync;
    if (step % state.sync_every_n != 0) {
        return;
    }
    const double mu = state.decay_mu;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher[i].data;
        const auto& s = student[i].data;
        for (std::size_t j = 0; j < t.size(); ++j) {
            t[j] = (1.0 - mu) * t[j] + mu * s[j];
        }
    }
    state.steps_since_sync = 0;
}

LogitBatch teacher_logits(const TeacherState& state, std::span<const Sequence> batch,
                          const NanoLM& model, const LogitBatch& student_logits) {
    if (state.mode == TeacherMode::shared) {
        return student_logits;
    }
    return model.forward(*state.params, batch);
}

}  // namespace entsft
