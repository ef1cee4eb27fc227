// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "entsft/checkpoint.hpp"
#include "entsft/config.hpp"
#include "entsft/errors.hpp"
#include "entsft/optimizer.hpp"
#include "entsft/trainer.hpp"

using namespace entsft;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const std::string& reg, const fs::path& out) {
    TrainConfig cfg;
    cfg.model.context_len = 64;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.regularizer.type = parse_regularizer(reg);
    cfg.data.spec.min_len = 2;
    cfg.data.spec.max_len = 2;
    cfg.data.spec.n_train = 48;
    cfg.data.spec.n_eval = 6;
    cfg.batch_size = 8;
    cfg.max_steps = 6;
    cfg.eval_every = 3;
    cfg.optimizer.warmup_steps = 2;
    cfg.optimizer.learning_rate = 1e-2;
    cfg.eval.prompts = 4;
    cfg.eval.samples = 2;
    cfg.eval.max_new = 24;
    cfg.output_dir = out.string();
    return cfg;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("entsft_trainer_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config: JSON round trip and strict keys") {
    TrainConfig cfg = tiny_config("sed", "x");
    cfg.fixed_tau = 1.3;
    const auto j = to_json(cfg);
    const auto back = config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(to_json(back).dump() == j.dump());
    CHECK(config_hash(back) == config_hash(cfg));

    auto bad = nlohmann::json::parse(j.dump());
    bad["bogus"] = 1;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    auto nested = nlohmann::json::parse(j.dump());
    nested["model"]["bogus"] = 1;
    CHECK_THROWS_AS(config_from_json(nested), ConfigError);
    auto wrong_type = nlohmann::json::parse(j.dump());
    wrong_type["alpha"] = "big";
    CHECK_THROWS_AS(config_from_json(wrong_type), ConfigError);
    CHECK(config_from_json(nlohmann::json::object()).regularizer.type == RegularizerType::sed);
}

TEST_CASE("config: hash ignores the output directory and tracks everything else") {
    TrainConfig a = tiny_config("sed", "a");
    TrainConfig b = tiny_config("sed", "b");
    CHECK(config_hash(a) == config_hash(b));
    b.alpha = 0.5;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config: validation") {
    TrainConfig cfg = tiny_config("sed", "x");
    cfg.model.vocab_size = 10;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config("sed", "x");
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config("sed", "x");
    cfg.data.spec.max_len = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("learning-rate schedule and gradient clipping") {
    OptimizerConfig o;
    o.learning_rate = 1.0;
    o.warmup_steps = 10;
    CHECK(learning_rate_at(o, 5, 100) == doctest::Approx(0.5));
    CHECK(learning_rate_at(o, 10, 100) == doctest::Approx(1.0));
    CHECK(learning_rate_at(o, 55, 100) == doctest::Approx(0.5));
    CHECK(learning_rate_at(o, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
    o.schedule = "constant";
    CHECK(learning_rate_at(o, 90, 100) == doctest::Approx(1.0));

    ParamSet g;
    g.add("w", {2, 1}, 0.0);
    g[0].data = {3.0, 4.0};
    CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0].data[0] == doctest::Approx(0.6));
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(1.0));
}

TEST_CASE("AdamW decays matrices but not vectors") {
    OptimizerConfig o;
    o.weight_decay = 0.5;
    ParamSet p;
    p.add("m", {2, 2}, 1.0);
    p.add("b", {2}, 1.0);
    AdamW opt(o, p);
    opt.step(p, p.zeros_like(), 0.1);
    CHECK(p[0].data[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(p[1].data[0] == 1.0);
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("zero steps leave the parameters at their initialization") {
    TrainConfig cfg = tiny_config("sed", scratch("zero"));
    cfg.max_steps = 0;
    const auto res = train(cfg);
    CHECK(res.steps == 0);
    const auto ckpt = load_checkpoint(res.final_checkpoint);
    CHECK(ckpt.student == NanoLM(cfg.model).init_params());
    fs::remove_all(cfg.output_dir);
}

TEST_CASE("non-sed runs keep no teacher copy and report zero regularizer for none") {
    const auto cfg = tiny_config("none", "unused");
    Trainer t(cfg, load_dataset(cfg));
    CHECK_FALSE(t.teacher().params.has_value());
    const auto rec = t.train_step(t.batch_for_step(1));
    CHECK(rec.loss_reg == 0.0);
    CHECK(rec.loss_total == rec.loss_sft);
    CHECK(rec.mean_token_entropy > 0.0);
}

TEST_CASE("sed step: telemetry lies in the configured ranges") {
    const auto cfg = tiny_config("sed", "unused");
    Trainer t(cfg, load_dataset(cfg));
    REQUIRE(t.teacher().params.has_value());
    const auto rec = t.train_step(t.batch_for_step(1));
    CHECK(rec.mean_tau_hat >= cfg.search.tau_min);
    CHECK(rec.mean_tau_hat <= cfg.search.tau_max);
    CHECK(rec.mean_delta_t >= 0.0);
    CHECK(rec.mean_delta_t <= cfg.gate.delta_max);
    CHECK(rec.clamped_fraction >= 0.0);
    CHECK(rec.clamped_fraction <= 1.0);
    CHECK(rec.loss_total == doctest::Approx(rec.loss_sft + cfg.alpha * rec.loss_reg));
    CHECK(rec.wall_ms == 0.0);
}

TEST_CASE("batches are deterministic and cover each epoch") {
    const auto cfg = tiny_config("none", "unused");
    Trainer a(cfg, load_dataset(cfg));
    Trainer b(cfg, load_dataset(cfg));
    for (std::size_t s = 1; s <= 7; ++s) {
        const auto x = a.batch_for_step(s);
        const auto y = b.batch_for_step(s);
        REQUIRE(x.size() == y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(x[i].token_ids == y[i].token_ids);
        }
    }
}

TEST_CASE("identical configs give byte-identical metrics and eval files") {
    for (const char* reg : {"sed", "kl-base"}) {
        const auto c1 = tiny_config(reg, scratch(std::string("det1_") + reg));
        const auto c2 = tiny_config(reg, scratch(std::string("det2_") + reg));
        const auto r1 = train(c1);
        const auto r2 = train(c2);
        CHECK(slurp(r1.metrics_path) == slurp(r2.metrics_path));
        CHECK(slurp(r1.eval_path) == slurp(r2.eval_path));
        CHECK(slurp(r1.final_checkpoint) == slurp(r2.final_checkpoint));
        REQUIRE(r1.final_eval.has_value());
        fs::remove_all(c1.output_dir);
        fs::remove_all(c2.output_dir);
    }
}

TEST_CASE("resume from a mid-run checkpoint reproduces the uninterrupted run") {
    auto full = tiny_config("sed", scratch("resume_full"));
    full.checkpoint_every = 3;
    const auto rf = train(full);

    auto part = tiny_config("sed", scratch("resume_part"));
    part.checkpoint_every = 3;
    train(part);
    // Simulate an interruption after step 3, then resume.
    const auto mid = fs::path(part.output_dir) / "checkpoints" / "step_000003.ckpt";
    REQUIRE(fs::exists(mid));
    const auto rp = train(part, mid);
    CHECK(rp.steps == 6);
    CHECK(slurp(rf.metrics_path) == slurp(rp.metrics_path));
    CHECK(slurp(rf.eval_path) == slurp(rp.eval_path));
    CHECK(slurp(rf.final_checkpoint) == slurp(rp.final_checkpoint));

    auto other = part;
    other.alpha = 0.5;
    CHECK_THROWS(train(other, mid));
    fs::remove_all(full.output_dir);
    fs::remove_all(part.output_dir);
}

TEST_CASE("checkpoint round trip and corrupt files") {
    const auto dir = scratch("ckpt");
    fs::create_directories(dir);
    const auto cfg = tiny_config("kl-base", dir);
    Trainer t(cfg, load_dataset(cfg));
    t.train_step(t.batch_for_step(1));
    const auto c = t.checkpoint();
    save_checkpoint(dir / "a.ckpt", c);
    const auto back = load_checkpoint(dir / "a.ckpt");
    CHECK(back.step == 1);
    CHECK(back.config_hash == c.config_hash);
    CHECK(back.student == c.student);
    REQUIRE(back.base.has_value());
    CHECK(*back.base == *c.base);
    CHECK(back.adam_m == c.adam_m);
    CHECK(back.adam_v == c.adam_v);
    CHECK(back.adam_steps == 1);

    std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
    CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
    auto bytes = slurp(dir / "a.ckpt");
    bytes.resize(bytes.size() / 2);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS(load_checkpoint(dir / "short.ckpt"));
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
    fs::remove_all(dir);
}

TEST_CASE("a few dozen SFT steps reduce the loss") {
    auto cfg = tiny_config("none", "unused");
    cfg.max_steps = 40;
    Trainer t(cfg, load_dataset(cfg));
    const double first = t.train_step(t.batch_for_step(1)).loss_sft;
    double last = first;
    for (std::size_t s = 2; s <= 40; ++s) {
        last = t.train_step(t.batch_for_step(s)).loss_sft;
    }
    CHECK(last < 0.7 * first);
}
