// SPDX-License-Identifier: Apache-2.0
#include "entsft/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "entsft/errors.hpp"
#include "entsft/losses.hpp"
#include "entsft/rng.hpp"
#include "entsft/temp_select.hpp"

namespace entsft {

namespace {

namespace fs = std::filesystem;

double round6(double x) { return std::round(x * 1e6) / 1e6; }

// Rows of a full forward pass that predict a response token, and those tokens.
struct Supervision {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> targets;
};

Supervision supervised_rows(std::span<const Sequence> batch) {
    Supervision sup;
    std::size_t offset = 0;
    for (const auto& s : batch) {
        for (std::size_t t = 0; t + 1 < s.token_ids.size(); ++t) {
            if (s.loss_mask[t + 1]) {
                sup.rows.push_back(offset + t);
                sup.targets.push_back(s.token_ids[t + 1]);
            }
        }
        offset += s.token_ids.size();
    }
    return sup;
}

LogitBatch gather(const LogitBatch& full, std::span<const std::size_t> rows) {
    LogitBatch out(rows.size(), full.vocab());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = full.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

LogitBatch scatter(const LogitBatch& compact, std::span<const std::size_t> rows, std::size_t total_rows) {
    LogitBatch out(total_rows, compact.vocab());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = compact.row(i);
        std::copy(src.begin(), src.end(), out.row(rows[i]).begin());
    }
    return out;
}

std::string step_name(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06zu.ckpt", step);
    return buf;
}

// Keeps the header line and records with step <= max_step.
void truncate_records(const fs::path& path, std::size_t max_step, bool has_header) {
    if (!fs::exists(path)) {
        return;
    }
    std::ifstream in(path);
    std::vector<std::string> keep;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (first && has_header) {
            keep.push_back(line);
            first = false;
            continue;
        }
        first = false;
        const auto j = nlohmann::json::parse(line);
        if (j.at("step").get<std::size_t>() <= max_step) {
            keep.push_back(line);
        }
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) {
        out << l << '\n';
    }
}

void append_line(const fs::path& path, const Json& j) {
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw std::runtime_error("cannot append to " + path.string());
    }
    out << j.dump() << '\n';
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace

Json to_json(const MetricsRecord& m) {
    Json j;
    j["step"] = m.step;
    j["loss_sft"] = m.loss_sft;
    j["loss_reg"] = m.loss_reg;
    j["loss_total"] = m.loss_total;
    j["mean_token_entropy"] = round6(m.mean_token_entropy);
    j["mean_delta_t"] = round6(m.mean_delta_t);
    j["mean_tau_hat"] = m.mean_tau_hat;
    j["clamped_fraction"] = m.clamped_fraction;
    j["grad_norm"] = m.grad_norm;
    j["learning_rate"] = m.learning_rate;
    j["wall_ms"] = m.wall_ms;
    return j;
}

Json run_header(const TrainConfig& cfg) {
    Json c = to_json(cfg);
    c.erase("output_dir");
    Json j;
    j["config"] = std::move(c);
    j["config_hash"] = hex64(config_hash(cfg));
    return j;
}

Dataset load_dataset(const TrainConfig& cfg) {
    if (cfg.data.train_path.empty() != cfg.data.eval_path.empty()) {
        throw ConfigError("data.train_path and data.eval_path must be given together");
    }
    if (!cfg.data.train_path.empty()) {
        return {read_jsonl(cfg.data.train_path), read_jsonl(cfg.data.eval_path)};
    }
    return generate(cfg.data.spec);
}

Trainer::Trainer(TrainConfig cfg, Dataset data)
    : cfg_(std::move(cfg)), data_(std::move(data)), model_(cfg_.model) {
    cfg_.validate();
    for (const auto& ex : data_.train) {
        train_seqs_.push_back(to_sequence(ex));
    }
    params_ = model_.init_params();
    TeacherConfig tcfg = cfg_.teacher;
    if (cfg_.regularizer.type != RegularizerType::sed) {
        tcfg.mode = TeacherMode::shared;  // no teacher copy outside the distillation objective
    }
    teacher_ = init_teacher(params_, tcfg);
    if (cfg_.regularizer.type == RegularizerType::kl_to_base) {
        base_ = params_;
    }
    optimizer_ = AdamW(cfg_.optimizer, params_);
}

Trainer::Trainer(TrainConfig cfg, Dataset data, const Checkpoint& ckpt) : Trainer(std::move(cfg), std::move(data)) {
    if (ckpt.config_hash != config_hash(cfg_)) {
        throw ConfigError("checkpoint was written with a different configuration (hash " +
                          hex64(ckpt.config_hash) + ", expected " + hex64(config_hash(cfg_)) + ")");
    }
    params_.require_same_layout(ckpt.student, "checkpoint student");
    params_ = ckpt.student;
    if (teacher_.mode == TeacherMode::separate) {
        if (!ckpt.teacher) {
            throw std::runtime_error("checkpoint lacks teacher parameters");
        }
        teacher_.params = *ckpt.teacher;
        teacher_.steps_since_sync = ckpt.teacher_steps_since_sync;
    }
    if (base_) {
        if (!ckpt.base) {
            throw std::runtime_error("checkpoint lacks base parameters");
        }
        base_ = *ckpt.base;
    }
    optimizer_.first_moment() = ckpt.adam_m;
    optimizer_.second_moment() = ckpt.adam_v;
    optimizer_.set_steps_taken(ckpt.adam_steps);
    step_ = ckpt.step;
}

std::size_t Trainer::total_steps() const noexcept {
    if (cfg_.max_steps) {
        return *cfg_.max_steps;
    }
    const std::size_t n = train_seqs_.size();
    const std::size_t per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    return cfg_.epochs * per_epoch;
}

std::vector<Sequence> Trainer::batch_for_step(std::size_t step) const {
    const std::size_t n = train_seqs_.size();
    if (n == 0) {
        throw DomainError("training set is empty");
    }
    const std::size_t per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    const std::size_t epoch = (step - 1) / per_epoch;
    const std::size_t within = (step - 1) % per_epoch;
    if (epoch != order_epoch_) {
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(derive_seed(cfg_.seed, 0xba7c, epoch));
        shuffle(order_, rng);
        order_epoch_ = epoch;
    }
    std::vector<Sequence> batch;
    const std::size_t begin = within * cfg_.batch_size;
    const std::size_t end = std::min(n, begin + cfg_.batch_size);
    for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(train_seqs_[order_[i]]);
    }
    return batch;
}

MetricsRecord Trainer::train_step(std::span<const Sequence> batch) {
    if (batch.empty()) {
        throw DomainError("training batch is empty");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t step = step_ + 1;

    const ForwardPass pass = model_.forward_train(params_, batch);
    const Supervision sup = supervised_rows(batch);
    if (sup.rows.empty()) {
        throw DomainError("training batch has no response tokens");
    }
    const LogitBatch student = gather(pass.logits, sup.rows);
    const LossResult sft = sft_loss(student, sup.targets);

    MetricsRecord rec;
    rec.step = step;
    std::vector<LossResult> regs;
    switch (cfg_.regularizer.type) {
        case RegularizerType::none:
            break;
        case RegularizerType::entropy:
        case RegularizerType::entropy_top_fraction:
            regs.push_back(entropy_loss(student, 1.0, cfg_.regularizer));
            break;
        case RegularizerType::kl_to_base: {
            const LogitBatch base = gather(model_.forward(*base_, batch), sup.rows);
            regs.push_back(kl_to_base_loss(student, base, 1.0));
            break;
        }
        case RegularizerType::sed: {
            const LogitBatch teacher = gather(teacher_logits(teacher_, batch, model_, pass.logits), sup.rows);
            const std::vector<TokenTempPlan> plans =
                cfg_.fixed_tau ? fixed_temperature_plans(teacher, *cfg_.fixed_tau, cfg_.search.top_k)
                               : plan_batch(teacher, cfg_.gate, cfg_.search);
            regs.push_back(sed_loss(student, teacher, plans, sup.targets, cfg_.student_tau));
            double delta = 0.0;
            double tau = 0.0;
            std::size_t clamped = 0;
            for (const auto& p : plans) {
                delta += p.increment;
                tau += p.solved_tau;
                clamped += p.clamped ? 1 : 0;
            }
            const auto n = static_cast<double>(plans.size());
            rec.mean_delta_t = delta / n;
            rec.mean_tau_hat = tau / n;
            rec.clamped_fraction = static_cast<double>(clamped) / n;
            break;
        }
    }
    const LossBreakdown loss = total_loss(sft, regs, cfg_.alpha);

    double entropy_sum = 0.0;
    for (std::size_t i = 0; i < student.rows(); ++i) {
        entropy_sum += entropy_topk(student.row(i), 1.0, cfg_.search.top_k).nats;
    }
    rec.mean_token_entropy = entropy_sum / static_cast<double>(student.rows());
    rec.loss_sft = loss.sft;
    rec.loss_reg = loss.regularizer;
    rec.loss_total = loss.total;

    auto abort_with = [&](const std::string& why) {
        Json snap;
        snap["step"] = step;
        snap["reason"] = why;
        snap["loss_sft"] = loss.sft;
        snap["loss_reg"] = loss.regularizer;
        Json seqs = Json::array();
        for (const auto& s : batch) {
            seqs.push_back(vocab::decode(s.token_ids));
        }
        snap["batch"] = std::move(seqs);
        throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + why, std::move(snap));
    };
    if (!std::isfinite(loss.total)) {
        abort_with("non-finite loss");
    }

    ParamSet grads = model_.backward(params_, pass, scatter(loss.grad, sup.rows, pass.logits.rows()));
    if (!grads.all_finite()) {
        abort_with("non-finite gradient");
    }
    rec.grad_norm = clip_grad_norm(grads, cfg_.optimizer.grad_clip);
    rec.learning_rate = learning_rate_at(cfg_.optimizer, step, total_steps());
    optimizer_.step(params_, grads, rec.learning_rate);
    maybe_sync(teacher_, params_, step);
    step_ = step;

    if (cfg_.record_wall_time) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return rec;
}

EvalReport Trainer::evaluate() const {
    return run_eval(model_, params_, cfg_.data.spec.task, data_.eval, cfg_.eval, cfg_.search.top_k, step_);
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.step = step_;
    c.config_hash = config_hash(cfg_);
    c.config = run_header(cfg_)["config"];
    c.student = params_;
    c.teacher = teacher_.params;
    c.teacher_steps_since_sync = teacher_.steps_since_sync;
    c.base = base_;
    c.adam_m = optimizer_.first_moment();
    c.adam_v = optimizer_.second_moment();
    c.adam_steps = optimizer_.steps_taken();
    return c;
}

TrainResult train(const TrainConfig& cfg, const std::optional<fs::path>& resume_from) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir / "checkpoints");
    TrainResult result;
    result.metrics_path = dir / "metrics.jsonl";
    result.eval_path = dir / "eval.jsonl";

    Dataset data = load_dataset(cfg);
    std::optional<Trainer> trainer;
    if (resume_from) {
        const Checkpoint ckpt = load_checkpoint(*resume_from);
        trainer.emplace(cfg, std::move(data), ckpt);
        truncate_records(result.metrics_path, ckpt.step, true);
        truncate_records(result.eval_path, ckpt.step, false);
    } else {
        trainer.emplace(cfg, std::move(data));
        std::ofstream(result.metrics_path, std::ios::trunc) << run_header(cfg).dump() << '\n';
        std::ofstream(result.eval_path, std::ios::trunc);
        save_checkpoint(dir / "checkpoints" / step_name(0), trainer->checkpoint());
    }

    const std::size_t total = trainer->total_steps();
    result.final_checkpoint = dir / "checkpoints" / step_name(trainer->step());
    while (trainer->step() < total) {
        const std::size_t step = trainer->step() + 1;
        MetricsRecord rec;
        try {
            rec = trainer->train_step(trainer->batch_for_step(step));
        } catch (const TrainingAborted& e) {
            std::ofstream(dir / "abort_snapshot.json") << e.snapshot().dump(2) << '\n';
            throw;
        }
        append_line(result.metrics_path, to_json(rec));
        const bool last = step == total;
        if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || last) {
            const EvalReport report = trainer->evaluate();
            append_line(result.eval_path, to_json(report));
            if (last) {
                result.final_eval = report;
            }
        }
        if ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || last) {
            result.final_checkpoint = dir / "checkpoints" / step_name(step);
            save_checkpoint(result.final_checkpoint, trainer->checkpoint());
        }
    }
    result.steps = trainer->step();
    return result;
}

}  // namespace entsft
