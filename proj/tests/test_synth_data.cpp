// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <set>
#include <string>

#include "entsft/errors.hpp"
#include "entsft/synth_data.hpp"

using namespace entsft;

TEST_CASE("vocabulary: reserved ids, round trip and rejection") {
    CHECK(vocab::size() == 50);
    const std::string text = "12+7=19 carry 1; ANSWER=19<END>";
    const auto ids = vocab::encode(text);
    CHECK(ids.back() == vocab::kEnd);
    CHECK(vocab::decode(ids) == text);
    CHECK(vocab::encode("<SEP>").front() == vocab::kSep);
    CHECK(vocab::encode("<PAD>").front() == vocab::kPad);
    CHECK_THROWS_AS(vocab::encode("\x01"), DomainError);
    CHECK(vocab::is_digit_token(vocab::encode("7").front()));
    CHECK_FALSE(vocab::is_digit_token(vocab::encode("+").front()));
    CHECK(vocab::is_connector_token(vocab::encode(";").front()));
    CHECK(vocab::is_connector_token(vocab::encode(",").front()));
    CHECK_FALSE(vocab::is_connector_token(vocab::encode("=").front()));
}

TEST_CASE("addition_steps: canonical expert responses") {
    CHECK(addition_steps(75, 38) == "5+8=13 carry 1; 7+3+1=11 carry 1; ANSWER=113");
    CHECK(addition_steps(41, 329) == "1+9=10 carry 1; 4+2+1=7; 0+3=3; ANSWER=370");
    CHECK(addition_steps(0, 0) == "0+0=0; ANSWER=0");
}

TEST_CASE("verify checks only the final answer") {
    CHECK(verify(TaskKind::multi_digit_add, "75+38", "junk; ANSWER=113<END>"));
    CHECK(verify(TaskKind::multi_digit_add, "75+38", "ANSWER=113"));
    CHECK_FALSE(verify(TaskKind::multi_digit_add, "75+38", "ANSWER=112<END>"));
    CHECK_FALSE(verify(TaskKind::multi_digit_add, "75+38", "no answer"));
    CHECK_FALSE(verify(TaskKind::multi_digit_add, "75+38", "ANSWER=113x<END>"));
    CHECK(verify(TaskKind::copy, "abc", "abc<END>"));
    CHECK(verify(TaskKind::reverse, "abc", "cba<END>"));
    CHECK_FALSE(verify(TaskKind::reverse, "abc", "abc<END>"));
}

TEST_CASE("generate: deterministic, disjoint, and every response verifies") {
    TaskSpec spec;
    spec.min_len = 2;
    spec.max_len = 3;
    spec.n_train = 300;
    spec.n_eval = 50;
    spec.connector_variation = 0.3;
    spec.operand_order_variation = 0.3;
    const auto a = generate(spec);
    const auto b = generate(spec);
    REQUIRE(a.train.size() == 300);
    REQUIRE(a.eval.size() == 50);
    std::set<std::string> train_prompts;
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].prompt == b.train[i].prompt);
        CHECK(a.train[i].response == b.train[i].response);
        CHECK(verify(spec.task, a.train[i].prompt, a.train[i].response));
        train_prompts.insert(a.train[i].prompt);
    }
    for (const auto& ex : a.eval) {
        CHECK(train_prompts.count(ex.prompt) == 0);
        CHECK(verify(spec.task, ex.prompt, ex.response));
    }
}

TEST_CASE("generate: variation knobs produce both connector spellings and both operand orders") {
    TaskSpec spec;
    spec.n_train = 400;
    spec.n_eval = 10;
    spec.connector_variation = 0.3;
    spec.operand_order_variation = 0.3;
    const auto ds = generate(spec);
    std::size_t commas = 0;
    std::size_t semis = 0;
    std::size_t non_canonical = 0;
    for (const auto& ex : ds.train) {
        commas += std::count(ex.response.begin(), ex.response.end(), ',');
        semis += std::count(ex.response.begin(), ex.response.end(), ';');
        const auto plus = ex.prompt.find('+');
        const auto a = std::stoull(ex.prompt.substr(0, plus));
        const auto b = std::stoull(ex.prompt.substr(plus + 1));
        non_canonical += ex.response != addition_steps(a, b) + "<END>" ? 1 : 0;
    }
    CHECK(commas > 0);
    CHECK(semis > commas);
    CHECK(non_canonical > 0);

    TaskSpec plain = spec;
    plain.connector_variation = 0.0;
    plain.operand_order_variation = 0.0;
    for (const auto& ex : generate(plain).train) {
        const auto plus = ex.prompt.find('+');
        CHECK(ex.response ==
              addition_steps(std::stoull(ex.prompt.substr(0, plus)), std::stoull(ex.prompt.substr(plus + 1))) + "<END>");
    }
}

TEST_CASE("generate: copy and reverse tasks") {
    for (auto task : {TaskKind::copy, TaskKind::reverse}) {
        TaskSpec spec;
        spec.task = task;
        spec.min_len = 3;
        spec.max_len = 5;
        spec.n_train = 50;
        spec.n_eval = 5;
        for (const auto& ex : generate(spec).train) {
            CHECK(ex.prompt.size() >= 3);
            CHECK(ex.prompt.size() <= 5);
            CHECK(verify(task, ex.prompt, ex.response));
        }
    }
    CHECK(parse_task("add") == TaskKind::multi_digit_add);
    CHECK(parse_task(to_string(TaskKind::reverse)) == TaskKind::reverse);
}

TEST_CASE("TaskSpec validation") {
    TaskSpec spec;
    spec.min_len = 4;
    spec.max_len = 2;
    CHECK_THROWS_AS(spec.validate(), DomainError);
    spec = TaskSpec{};
    spec.connector_variation = 1.5;
    CHECK_THROWS_AS(spec.validate(), DomainError);
    spec = TaskSpec{};
    spec.min_len = 1;
    spec.max_len = 1;
    spec.n_train = 200;
    spec.n_eval = 0;
    CHECK_THROWS_AS(generate(spec), DomainError);
}

TEST_CASE("to_sequence masks exactly the response tokens") {
    const Example ex{"12+3", addition_steps(12, 3) + "<END>", "15"};
    const auto seq = to_sequence(ex);
    const auto prompt = prompt_tokens(ex);
    REQUIRE(seq.token_ids.size() == prompt.size() + vocab::encode(ex.response).size());
    for (std::size_t i = 0; i < seq.token_ids.size(); ++i) {
        CHECK(seq.loss_mask[i] == (i >= prompt.size()));
    }
    CHECK(prompt.back() == vocab::kSep);
}

TEST_CASE("jsonl round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "entsft_synth_test";
    std::filesystem::create_directories(dir);
    const std::vector<Example> exs{{"1+2", addition_steps(1, 2) + "<END>", "3"}, {"40+2", addition_steps(40, 2) + "<END>", "42"}};
    write_jsonl(dir / "x.jsonl", exs);
    const auto back = read_jsonl(dir / "x.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].prompt == "40+2");
    CHECK(back[1].response == exs[1].response);
    CHECK(back[1].answer == "42");
    CHECK_THROWS(read_jsonl(dir / "missing.jsonl"));
    std::filesystem::remove_all(dir);
}
