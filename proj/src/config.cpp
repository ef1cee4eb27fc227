// SPDX-License-Identifier: Apache-2.0
#include "entsft/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "entsft/errors.hpp"

namespace entsft {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    if (!obj.is_object()) {
        throw ConfigError("config section '" + path + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (allowed.count(key) == 0) {
            throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
        }
    }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& path) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + path + key + "': " + e.what());
    }
}

ModelConfig model_from(const json& j) {
    ModelConfig m = TrainConfig::default_model();
    check_keys(j, {"vocab_size", "context_len", "d_model", "n_layers", "n_heads", "d_ff", "seed",
                   "init_std", "tie_embeddings", "zero_init_head"},
               "model");
    read(j, "vocab_size", m.vocab_size, "model.");
    read(j, "context_len", m.context_len, "model.");
    read(j, "d_model", m.d_model, "model.");
    read(j, "n_layers", m.n_layers, "model.");
    read(j, "n_heads", m.n_heads, "model.");
    read(j, "d_ff", m.d_ff, "model.");
    read(j, "seed", m.seed, "model.");
    read(j, "init_std", m.init_std, "model.");
    read(j, "tie_embeddings", m.tie_embeddings, "model.");
    read(j, "zero_init_head", m.zero_init_head, "model.");
    return m;
}

}  // namespace

ModelConfig TrainConfig::default_model() {
    ModelConfig m;
    m.vocab_size = vocab::size();
    m.context_len = 128;
    m.d_model = 32;
    m.n_layers = 2;
    m.n_heads = 4;
    return m;
}

void TrainConfig::validate() const {
    model.validate();
    if (model.vocab_size != vocab::size()) {
        throw ConfigError("model.vocab_size must equal the tokenizer size (" +
                          std::to_string(vocab::size()) + ")");
    }
    gate.validate();
    search.validate();
    teacher.validate();
    optimizer.validate();
    try {
        data.spec.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("data: ") + e.what());
    }
    if (!(alpha >= 0.0)) {
        throw ConfigError("alpha must be >= 0");
    }
    if (fixed_tau && !(*fixed_tau > 0.0)) {
        throw ConfigError("fixed_tau must be > 0");
    }
    if (!(student_tau > 0.0)) {
        throw ConfigError("student_tau must be > 0");
    }
    if (regularizer.type == RegularizerType::entropy_top_fraction &&
        !(regularizer.fraction > 0.0 && regularizer.fraction <= 1.0)) {
        throw ConfigError("top_fraction must lie in (0, 1]");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (eval.samples < 1 || eval.ngram < 1 || !(eval.tau > 0.0) || !(eval.top_p > 0.0 && eval.top_p <= 1.0)) {
        throw ConfigError("invalid eval settings");
    }
}

Json to_json(const TrainConfig& c) {
    Json j;
    j["model"] = {{"vocab_size", c.model.vocab_size}, {"context_len", c.model.context_len},
                  {"d_model", c.model.d_model},       {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},       {"d_ff", c.model.d_ff},
                  {"seed", c.model.seed},             {"init_std", c.model.init_std},
                  {"tie_embeddings", c.model.tie_embeddings},
                  {"zero_init_head", c.model.zero_init_head}};
    j["gate"] = {{"delta_max", c.gate.delta_max}, {"gamma", c.gate.gamma}, {"h_pivot", c.gate.h_pivot}};
    j["search"] = {{"tau_min", c.search.tau_min}, {"tau_max", c.search.tau_max},
                   {"epsilon", c.search.epsilon}, {"max_iters", c.search.max_iters},
                   {"top_k", c.search.top_k}};
    j["regularizer"] = to_string(c.regularizer.type);
    j["top_fraction"] = c.regularizer.fraction;
    j["alpha"] = c.alpha;
    j["fixed_tau"] = c.fixed_tau ? Json(*c.fixed_tau) : Json(nullptr);
    j["student_tau"] = c.student_tau;
    j["teacher"] = {{"sync_every_n", c.teacher.sync_every_n}, {"decay_mu", c.teacher.decay_mu},
                    {"mode", to_string(c.teacher.mode)}};
    j["optimizer"] = {{"kind", c.optimizer.kind},
                      {"learning_rate", c.optimizer.learning_rate},
                      {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
                      {"eps", c.optimizer.eps},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"warmup_steps", c.optimizer.warmup_steps},
                      {"schedule", c.optimizer.schedule},
                      {"grad_clip", c.optimizer.grad_clip}};
    j["epochs"] = c.epochs;
    j["max_steps"] = c.max_steps ? Json(*c.max_steps) : Json(nullptr);
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["eval_every"] = c.eval_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["record_wall_time"] = c.record_wall_time;
    j["data"] = {{"task", to_string(c.data.spec.task)},
                 {"digits", {c.data.spec.min_len, c.data.spec.max_len}},
                 {"n_train", c.data.spec.n_train},
                 {"n_eval", c.data.spec.n_eval},
                 {"seed", c.data.spec.seed},
                 {"connector_variation", c.data.spec.connector_variation},
                 {"operand_order_variation", c.data.spec.operand_order_variation},
                 {"train_path", c.data.train_path},
                 {"eval_path", c.data.eval_path}};
    j["eval"] = {{"prompts", c.eval.prompts}, {"samples", c.eval.samples}, {"tau", c.eval.tau},
                 {"top_p", c.eval.top_p},     {"ngram", c.eval.ngram},     {"max_new", c.eval.max_new},
                 {"seed", c.eval.seed}};
    j["output_dir"] = c.output_dir;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    check_keys(j, {"model", "gate", "search", "regularizer", "top_fraction", "alpha", "fixed_tau",
                   "student_tau", "teacher", "optimizer", "epochs", "max_steps", "batch_size", "seed",
                   "eval_every", "checkpoint_every", "record_wall_time", "data", "eval", "output_dir"},
               "");
    if (j.contains("model")) {
        c.model = model_from(j.at("model"));
    }
    if (j.contains("gate")) {
        const auto& g = j.at("gate");
        check_keys(g, {"delta_max", "gamma", "h_pivot"}, "gate");
        read(g, "delta_max", c.gate.delta_max, "gate.");
        read(g, "gamma", c.gate.gamma, "gate.");
        read(g, "h_pivot", c.gate.h_pivot, "gate.");
    }
    if (j.contains("search")) {
        const auto& s = j.at("search");
        check_keys(s, {"tau_min", "tau_max", "epsilon", "max_iters", "top_k"}, "search");
        read(s, "tau_min", c.search.tau_min, "search.");
        read(s, "tau_max", c.search.tau_max, "search.");
        read(s, "epsilon", c.search.epsilon, "search.");
        read(s, "max_iters", c.search.max_iters, "search.");
        read(s, "top_k", c.search.top_k, "search.");
    }
    if (j.contains("regularizer")) {
        c.regularizer.type = parse_regularizer(j.at("regularizer").get<std::string>());
    }
    read(j, "top_fraction", c.regularizer.fraction, "");
    read(j, "alpha", c.alpha, "");
    if (j.contains("fixed_tau") && !j.at("fixed_tau").is_null()) {
        c.fixed_tau = j.at("fixed_tau").get<double>();
    }
    read(j, "student_tau", c.student_tau, "");
    if (j.contains("teacher")) {
        const auto& t = j.at("teacher");
        check_keys(t, {"sync_every_n", "decay_mu", "mode"}, "teacher");
        read(t, "sync_every_n", c.teacher.sync_every_n, "teacher.");
        read(t, "decay_mu", c.teacher.decay_mu, "teacher.");
        if (t.contains("mode")) {
            c.teacher.mode = parse_teacher_mode(t.at("mode").get<std::string>());
        }
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        check_keys(o, {"kind", "learning_rate", "betas", "eps", "weight_decay", "warmup_steps",
                       "schedule", "grad_clip"},
                   "optimizer");
        read(o, "kind", c.optimizer.kind, "optimizer.");
        read(o, "learning_rate", c.optimizer.learning_rate, "optimizer.");
        if (o.contains("betas")) {
            const auto& b = o.at("betas");
            if (!b.is_array() || b.size() != 2) {
                throw ConfigError("optimizer.betas must be a two-element array");
            }
            c.optimizer.beta1 = b[0].get<double>();
            c.optimizer.beta2 = b[1].get<double>();
        }
        read(o, "eps", c.optimizer.eps, "optimizer.");
        read(o, "weight_decay", c.optimizer.weight_decay, "optimizer.");
        read(o, "warmup_steps", c.optimizer.warmup_steps, "optimizer.");
        read(o, "schedule", c.optimizer.schedule, "optimizer.");
        read(o, "grad_clip", c.optimizer.grad_clip, "optimizer.");
    }
    read(j, "epochs", c.epochs, "");
    if (j.contains("max_steps") && !j.at("max_steps").is_null()) {
        c.max_steps = j.at("max_steps").get<std::size_t>();
    }
    read(j, "batch_size", c.batch_size, "");
    read(j, "seed", c.seed, "");
    read(j, "eval_every", c.eval_every, "");
    read(j, "checkpoint_every", c.checkpoint_every, "");
    read(j, "record_wall_time", c.record_wall_time, "");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"task", "digits", "n_train", "n_eval", "seed", "connector_variation",
                       "operand_order_variation", "train_path", "eval_path"},
                   "data");
        if (d.contains("task")) {
            c.data.spec.task = parse_task(d.at("task").get<std::string>());
        }
        if (d.contains("digits")) {
            const auto& r = d.at("digits");
            if (!r.is_array() || r.size() != 2) {
                throw ConfigError("data.digits must be a two-element array");
            }
            c.data.spec.min_len = r[0].get<std::size_t>();
            c.data.spec.max_len = r[1].get<std::size_t>();
        }
        read(d, "n_train", c.data.spec.n_train, "data.");
        read(d, "n_eval", c.data.spec.n_eval, "data.");
        read(d, "seed", c.data.spec.seed, "data.");
        read(d, "connector_variation", c.data.spec.connector_variation, "data.");
        read(d, "operand_order_variation", c.data.spec.operand_order_variation, "data.");
        read(d, "train_path", c.data.train_path, "data.");
        read(d, "eval_path", c.data.eval_path, "data.");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, {"prompts", "samples", "tau", "top_p", "ngram", "max_new", "seed"}, "eval");
        read(e, "prompts", c.eval.prompts, "eval.");
        read(e, "samples", c.eval.samples, "eval.");
        read(e, "tau", c.eval.tau, "eval.");
        read(e, "top_p", c.eval.top_p, "eval.");
        read(e, "ngram", c.eval.ngram, "eval.");
        read(e, "max_new", c.eval.max_new, "eval.");
        read(e, "seed", c.eval.seed, "eval.");
    }
    read(j, "output_dir", c.output_dir, "");
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    Json j = to_json(cfg);
    j.erase("output_dir");  // where a run writes is not part of what it computes
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace entsft
