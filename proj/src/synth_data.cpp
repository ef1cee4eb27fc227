// SPDX-License-Identifier: Apache-2.0
#include "entsft/synth_data.hpp"

#include <array>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

#include "entsft/errors.hpp"
#include "entsft/rng.hpp"

namespace entsft {

namespace {

constexpr std::string_view kChars = "0123456789+=;, abcdefghijklmnopqrstuvwxyzANSWER";
constexpr std::size_t kReserved = 3;
constexpr std::array<std::string_view, 3> kSpecials = {"<SEP>", "<END>", "<PAD>"};

std::array<int, 256> build_char_table() {
    std::array<int, 256> table{};
    table.fill(-1);
    int next = static_cast<int>(kReserved);
    for (char c : kChars) {
        auto& slot = table[static_cast<unsigned char>(c)];
        if (slot < 0) {
            slot = next++;
        }
    }
    return table;
}

const std::array<int, 256>& char_table() {
    static const auto table = build_char_table();
    return table;
}

const std::vector<char>& id_to_char() {
    static const std::vector<char> chars = [] {
        std::vector<char> out(kReserved, '\0');
        const auto& t = char_table();
        for (char c : kChars) {
            if (static_cast<std::size_t>(t[static_cast<unsigned char>(c)]) == out.size()) {
                out.push_back(c);
            }
        }
        return out;
    }();
    return chars;
}

std::uint64_t pow10(std::size_t n) {
    std::uint64_t p = 1;
    for (std::size_t i = 0; i < n; ++i) {
        p *= 10;
    }
    return p;
}

std::uint64_t draw_number(Rng& rng, std::size_t digits) {
    if (digits == 1) {
        return rng.below(10);
    }
    const std::uint64_t lo = pow10(digits - 1);
    return lo + rng.below(pow10(digits) - lo);
}

std::string addition_steps_with(std::uint64_t a, std::uint64_t b, Rng* rng, double variation,
                                double order_variation) {
    auto draw = [&](double p) { return rng != nullptr && p > 0.0 && rng->uniform() < p; };
    auto connector = [&]() -> std::string { return draw(variation) ? ", " : "; "; };
    std::string out;
    std::uint64_t carry = 0;
    std::uint64_t x = a;
    std::uint64_t y = b;
    bool first = true;
    do {
        const std::uint64_t da = x % 10;
        const std::uint64_t db = y % 10;
        const std::uint64_t s = da + db + carry;
        if (!first) {
            out += connector();
        }
        first = false;
        if (draw(order_variation)) {
            out += std::to_string(db) + "+" + std::to_string(da);
        } else {
            out += std::to_string(da) + "+" + std::to_string(db);
        }
        if (carry != 0) {
            out += "+1";
        }
        out += "=" + std::to_string(s);
        carry = s >= 10 ? 1 : 0;
        if (carry != 0) {
            out += " carry 1";
        }
        x /= 10;
        y /= 10;
    } while (x != 0 || y != 0);
    out += connector() + "ANSWER=" + std::to_string(a + b);
    return out;
}

Example make_example(TaskKind task, Rng& rng, const TaskSpec& spec) {
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    Example ex;
    if (task == TaskKind::multi_digit_add) {
        const std::size_t len_b = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        const std::uint64_t a = draw_number(rng, len);
        const std::uint64_t b = draw_number(rng, len_b);
        ex.prompt = std::to_string(a) + "+" + std::to_string(b);
        ex.response = addition_steps_with(a, b, &rng, spec.connector_variation, spec.operand_order_variation) + "<END>";
        ex.answer = std::to_string(a + b);
        return ex;
    }
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        s.push_back(static_cast<char>('a' + rng.below(26)));
    }
    ex.prompt = s;
    ex.answer = task == TaskKind::copy ? s : std::string(s.rbegin(), s.rend());
    ex.response = ex.answer + "<END>";
    return ex;
}

std::string strip_markers(std::string_view text) {
    std::string out(text);
    for (auto m : kSpecials) {
        for (auto p = out.find(m); p != std::string::npos; p = out.find(m)) {
            out.erase(p, m.size());
        }
    }
    return out;
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
    if (s.empty() || s.size() > 18) {
        return false;
    }
    out = 0;
    for (char c : s) {
        if (c < '0' || c > '9') {
            return false;
        }
        out = out * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return true;
}

}  // namespace

std::string to_string(TaskKind task) {
    switch (task) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::multi_digit_add: return "add";
    }
    return "add";
}

TaskKind parse_task(const std::string& name) {
    if (name == "copy") {
        return TaskKind::copy;
    }
    if (name == "reverse") {
        return TaskKind::reverse;
    }
    if (name == "add" || name == "multi_digit_add") {
        return TaskKind::multi_digit_add;
    }
    throw ConfigError("unknown task '" + name + "'");
}

namespace vocab {

std::size_t size() { return id_to_char().size(); }

std::vector<std::size_t> encode(std::string_view text) {
    std::vector<std::size_t> ids;
    ids.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        bool special = false;
        for (std::size_t k = 0; k < kSpecials.size(); ++k) {
            if (text.substr(i, kSpecials[k].size()) == kSpecials[k]) {
                ids.push_back(k);
                i += kSpecials[k].size();
                special = true;
                break;
            }
        }
        if (special) {
            continue;
        }
        const int id = char_table()[static_cast<unsigned char>(text[i])];
        if (id < 0) {
            throw DomainError(std::string("character '") + text[i] + "' is not in the vocabulary");
        }
        ids.push_back(static_cast<std::size_t>(id));
        ++i;
    }
    return ids;
}

std::string decode(std::span<const std::size_t> ids) {
    std::string out;
    const auto& chars = id_to_char();
    for (std::size_t id : ids) {
        if (id < kReserved) {
            out += kSpecials[id];
        } else if (id < chars.size()) {
            out.push_back(chars[id]);
        } else {
            out += "<?>";
        }
    }
    return out;
}

bool is_digit_token(std::size_t id) {
    const auto& chars = id_to_char();
    return id >= kReserved && id < chars.size() && chars[id] >= '0' && chars[id] <= '9';
}

bool is_connector_token(std::size_t id) {
    const auto& chars = id_to_char();
    return id >= kReserved && id < chars.size() && (chars[id] == ';' || chars[id] == ',');
}

}  // namespace vocab

void TaskSpec::validate() const {
    if (min_len < 1 || max_len < min_len) {
        throw DomainError("empty length range " + std::to_string(min_len) + ".." + std::to_string(max_len));
    }
    if (task == TaskKind::multi_digit_add && max_len > 9) {
        throw DomainError("addition operands are limited to 9 digits");
    }
    if (!(connector_variation >= 0.0 && connector_variation <= 1.0)) {
        throw DomainError("connector_variation must lie in [0, 1]");
    }
    if (!(operand_order_variation >= 0.0 && operand_order_variation <= 1.0)) {
        throw DomainError("operand_order_variation must lie in [0, 1]");
    }
}

std::string addition_steps(std::uint64_t a, std::uint64_t b) {
    return addition_steps_with(a, b, nullptr, 0.0, 0.0);
}

Dataset generate(const TaskSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0xda7a));
    Dataset ds;
    std::unordered_set<std::string> seen;
    const std::size_t total = spec.n_train + spec.n_eval;
    std::size_t misses = 0;
    while (ds.train.size() + ds.eval.size() < total) {
        Example ex = make_example(spec.task, rng, spec);
        if (!seen.insert(ex.prompt).second) {
            if (++misses > 64 * total + 1024) {
                throw DomainError("length range too small for the requested number of distinct instances");
            }
            continue;
        }
        if (ds.train.size() < spec.n_train) {
            ds.train.push_back(std::move(ex));
        } else {
            ds.eval.push_back(std::move(ex));
        }
    }
    return ds;
}

bool verify(TaskKind task, std::string_view prompt, std::string_view completion) {
    const std::string q = strip_markers(prompt);
    std::string c(completion);
    if (const auto end = c.find("<END>"); end != std::string::npos) {
        c.resize(end);
    }
    if (task != TaskKind::multi_digit_add) {
        const std::string expected = task == TaskKind::copy ? q : std::string(q.rbegin(), q.rend());
        return c == expected;
    }
    const auto plus = q.find('+');
    std::uint64_t a = 0;
    std::uint64_t b = 0;
    if (plus == std::string::npos || !parse_uint(std::string_view(q).substr(0, plus), a) ||
        !parse_uint(std::string_view(q).substr(plus + 1), b)) {
        return false;
    }
    const auto at = c.rfind("ANSWER=");
    std::uint64_t got = 0;
    if (at == std::string::npos || !parse_uint(std::string_view(c).substr(at + 7), got)) {
        return false;
    }
    return got == a + b;
}

std::vector<std::size_t> prompt_tokens(const Example& ex) {
    auto ids = vocab::encode(ex.prompt);
    ids.push_back(vocab::kSep);
    return ids;
}

Sequence to_sequence(const Example& ex) {
    Sequence s;
    s.token_ids = prompt_tokens(ex);
    s.loss_mask.assign(s.token_ids.size(), false);
    for (std::size_t id : vocab::encode(ex.response)) {
        s.token_ids.push_back(id);
        s.loss_mask.push_back(true);
    }
    return s;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const auto& ex : examples) {
        const nlohmann::ordered_json j = {{"prompt", ex.prompt}, {"response", ex.response}, {"answer", ex.answer}};
        out << j.dump() << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::vector<Example> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open dataset " + path.string());
    }
    std::vector<Example> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        out.push_back({j.at("prompt").get<std::string>(), j.at("response").get<std::string>(),
                       j.at("answer").get<std::string>()});
    }
    return out;
}

}  // namespace entsft
