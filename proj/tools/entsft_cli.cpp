// SPDX-License-Identifier: Apache-2.0
//
// entsft: data generation, training, evaluation, verification and plot export.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "entsft/checkpoint.hpp"
#include "entsft/config.hpp"
#include "entsft/errors.hpp"
#include "entsft/eval_metrics.hpp"
#include "entsft/synth_data.hpp"
#include "entsft/trainer.hpp"
#include "entsft/verify.hpp"

namespace fs = std::filesystem;
using namespace entsft;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

fs::path home_dir() {
    const char* env = std::getenv("ENTSFT_HOME");
    return env != nullptr && *env != '\0' ? fs::path(env) : fs::current_path();
}

// "2..4" or "3".
std::pair<std::size_t, std::size_t> parse_range(const std::string& text, const std::string& flag) {
    const auto dots = text.find("..");
    try {
        std::size_t used = 0;
        if (dots == std::string::npos) {
            const auto v = std::stoul(text, &used);
            if (used != text.size()) {
                throw std::invalid_argument(text);
            }
            return {v, v};
        }
        const std::string a = text.substr(0, dots);
        const std::string b = text.substr(dots + 2);
        const auto lo = std::stoul(a, &used);
        if (used != a.size()) {
            throw std::invalid_argument(text);
        }
        const auto hi = std::stoul(b, &used);
        if (used != b.size()) {
            throw std::invalid_argument(text);
        }
        if (lo < 1 || hi < lo) {
            throw ConfigError(flag + ": empty or invalid range '" + text + "'");
        }
        return {lo, hi};
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(flag + ": expected N or LO..HI, got '" + text + "'");
    }
}

struct GenDataOpts {
    std::string task = "add";
    std::string digits = "2..4";
    std::size_t n_train = 20000;
    std::size_t n_eval = 1000;
    std::uint64_t seed = 7;
    double connector_variation = 0.0;
    double operand_order_variation = 0.0;
    std::string out;
};

int cmd_gen_data(const GenDataOpts& o) {
    TaskSpec spec;
    spec.task = parse_task(o.task);
    const auto [lo, hi] = parse_range(o.digits, "--digits");
    spec.min_len = lo;
    spec.max_len = hi;
    spec.n_train = o.n_train;
    spec.n_eval = o.n_eval;
    spec.seed = o.seed;
    spec.connector_variation = o.connector_variation;
    spec.operand_order_variation = o.operand_order_variation;
    try {
        spec.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("--digits/--*-variation: ") + e.what());
    }
    const fs::path dir = o.out.empty() ? home_dir() / "data" : fs::path(o.out);
    fs::create_directories(dir);
    const Dataset data = generate(spec);
    write_jsonl(dir / "train.jsonl", data.train);
    write_jsonl(dir / "eval.jsonl", data.eval);
    std::cout << Json{{"train", (dir / "train.jsonl").string()},
                      {"eval", (dir / "eval.jsonl").string()},
                      {"n_train", data.train.size()},
                      {"n_eval", data.eval.size()}}
                     .dump()
              << '\n';
    return 0;
}

struct TrainOpts {
    std::string config;
    std::optional<std::string> regularizer;
    std::optional<double> alpha;
    std::optional<std::string> teacher_mode;
    std::optional<double> fixed_tau;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> eval_every;
    std::optional<std::string> train_data;
    std::optional<std::string> eval_data;
    std::optional<std::string> out;
    std::optional<std::string> resume;
};

int cmd_train(const TrainOpts& o) {
    TrainConfig cfg;
    if (!o.config.empty()) {
        cfg = load_config(o.config);
    }
    if (o.regularizer) {
        cfg.regularizer.type = parse_regularizer(*o.regularizer);
    }
    if (o.alpha) cfg.alpha = *o.alpha;
    if (o.teacher_mode) cfg.teacher.mode = parse_teacher_mode(*o.teacher_mode);
    if (o.fixed_tau) cfg.fixed_tau = *o.fixed_tau;
    if (o.seed) cfg.seed = *o.seed;
    if (o.steps) cfg.max_steps = *o.steps;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.eval_every) cfg.eval_every = *o.eval_every;
    if (o.train_data) cfg.data.train_path = *o.train_data;
    if (o.eval_data) cfg.data.eval_path = *o.eval_data;
    if (o.out) {
        cfg.output_dir = *o.out;
    } else if (o.config.empty()) {
        cfg.output_dir = (home_dir() / "runs" / (to_string(cfg.regularizer.type) + "-seed" +
                                                 std::to_string(cfg.seed)))
                             .string();
    }
    cfg.validate();
    std::optional<fs::path> resume;
    if (o.resume) {
        if (!fs::exists(*o.resume)) {
            throw ConfigError("--resume: no checkpoint at " + *o.resume);
        }
        resume = *o.resume;
    }
    const TrainResult res = train(cfg, resume);
    Json summary{{"output_dir", cfg.output_dir},
                 {"steps", res.steps},
                 {"final_checkpoint", res.final_checkpoint.string()},
                 {"metrics", res.metrics_path.string()}};
    if (res.final_eval) {
        summary["final_eval"] = to_json(*res.final_eval);
    }
    std::cout << summary.dump() << '\n';
    return 0;
}

struct EvalOpts {
    std::string checkpoint;
    std::optional<std::size_t> prompts;
    std::optional<std::size_t> samples;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_eval(const EvalOpts& o) {
    if (!fs::is_regular_file(o.checkpoint)) {
        throw ConfigError("--checkpoint: no checkpoint file at '" + o.checkpoint + "'");
    }
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    TrainConfig cfg = config_from_json(ckpt.config);
    if (o.prompts) cfg.eval.prompts = *o.prompts;
    if (o.samples) cfg.eval.samples = *o.samples;
    if (o.seed) cfg.eval.seed = *o.seed;
    const Dataset data = load_dataset(cfg);
    const NanoLM model(cfg.model);
    const EvalReport report =
        run_eval(model, ckpt.student, cfg.data.spec.task, data.eval, cfg.eval, cfg.search.top_k, ckpt.step);
    const std::string line = to_json(report).dump();
    if (o.out.empty()) {
        std::cout << line << '\n';
    } else {
        std::ofstream(o.out, std::ios::app) << line << '\n';
    }
    return 0;
}

struct VerifyOpts {
    std::string only;
    std::uint64_t seed = 2024;
    std::string report;
};

int cmd_verify(const VerifyOpts& o) {
    const std::vector<CheckRecord> records = o.only.empty() ? run_all_suites(o.seed) : run_suite(o.only, o.seed);
    std::ofstream file;
    if (!o.report.empty()) {
        file.open(o.report, std::ios::trunc);
    }
    std::ostream& os = o.report.empty() ? std::cout : file;
    bool all = true;
    for (const auto& r : records) {
        os << to_json(r).dump() << '\n';
        all = all && r.passed;
    }
    if (!o.report.empty()) {
        std::cerr << (all ? "all checks passed" : "some checks FAILED") << " (" << records.size()
                  << " checks)\n";
    }
    return all ? 0 : kExitRuntime;
}

struct ExportOpts {
    std::vector<std::string> runs;
    std::string out;
};

int cmd_export_plots(const ExportOpts& o) {
    const fs::path out = o.out.empty() ? home_dir() / "plots" : fs::path(o.out);
    fs::create_directories(out);
    for (const auto& run : o.runs) {
        const fs::path evals = fs::path(run) / "eval.jsonl";
        std::ifstream in(evals);
        if (!in) {
            throw ConfigError("--runs: no eval.jsonl in '" + run + "'");
        }
        std::map<std::size_t, Json> by_step;
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) {
                continue;
            }
            const Json j = Json::parse(line);
            by_step[j.at("step").get<std::size_t>()] = j;
        }
        std::string name = fs::path(run).filename().string();
        if (name.empty()) {
            name = fs::path(run).parent_path().filename().string();
        }
        std::ofstream tsv(out / (name + ".tsv"), std::ios::trunc);
        tsv << "step\tentropy\taccuracy\tavg_at_k\tpass_at_k\tdiversity\n";
        for (const auto& [step, j] : by_step) {
            tsv << step << '\t' << j.at("mean_token_entropy").get<double>() << '\t'
                << j.at("greedy_accuracy").get<double>() << '\t' << j.at("avg_at_k").get<double>() << '\t'
                << j.at("pass_at_k").get<double>() << '\t' << j.at("ngram_diversity").get<double>() << '\n';
        }
        std::cout << (out / (name + ".tsv")).string() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entsft: entropy-preserving fine-tuning of a nano language model"};
    app.require_subcommand(1);

    GenDataOpts gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic train/eval corpus");
    g->add_option("--task", gen.task, "copy, reverse or add")->capture_default_str();
    g->add_option("--digits", gen.digits, "Operand digits (or string length), N or LO..HI")->capture_default_str();
    g->add_option("--n-train", gen.n_train)->capture_default_str();
    g->add_option("--n-eval", gen.n_eval)->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--connector-variation", gen.connector_variation)->capture_default_str();
    g->add_option("--operand-order-variation", gen.operand_order_variation)->capture_default_str();
    g->add_option("--out", gen.out, "Output directory (default $ENTSFT_HOME/data)");

    TrainOpts tr;
    auto* t = app.add_subcommand("train", "Train a model; flags override the config file");
    t->add_option("--config", tr.config, "JSON config file");
    t->add_option("--regularizer", tr.regularizer, "none, entropy, entropy-top, kl-base or sed");
    t->add_option("--alpha", tr.alpha);
    t->add_option("--teacher-mode", tr.teacher_mode, "separate or shared");
    t->add_option("--fixed-tau", tr.fixed_tau, "Use one teacher temperature instead of the entropy search");
    t->add_option("--seed", tr.seed);
    t->add_option("--steps", tr.steps, "Step budget (overrides epochs)");
    t->add_option("--batch-size", tr.batch_size);
    t->add_option("--eval-every", tr.eval_every);
    t->add_option("--train-data", tr.train_data, "JSONL training set");
    t->add_option("--eval-data", tr.eval_data, "JSONL eval set");
    t->add_option("--out", tr.out, "Run directory (default $ENTSFT_HOME/runs/<regularizer>-seed<seed>)");
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");

    EvalOpts ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--prompts", ev.prompts);
    e->add_option("--samples", ev.samples);
    e->add_option("--seed", ev.seed);
    e->add_option("--out", ev.out, "Append the report to this JSONL file");

    VerifyOpts vf;
    auto* v = app.add_subcommand("verify", "Run the numerical verification suites");
    v->add_option("--only", vf.only, "Run one suite")
        ->check(CLI::IsMember(suite_names()));
    v->add_option("--seed", vf.seed)->capture_default_str();
    v->add_option("--report", vf.report, "Write the JSONL report here instead of stdout");

    ExportOpts ex;
    auto* x = app.add_subcommand("export-plots", "Write per-run TSV series from eval records");
    x->add_option("--runs", ex.runs, "Run directories")->required();
    x->add_option("--out", ex.out, "Output directory (default $ENTSFT_HOME/plots)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitConfig;
    }

    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*v) return cmd_verify(vf);
        if (*x) return cmd_export_plots(ex);
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}
