#pragma once

#include <algorithm>
#include <atomic>
#include <compare>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/backend.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

/// Compression rates available to budgeted compression, in percent.
inline constexpr int kRateLadder[] = {50, 60, 70, 80, 90, 100};

class CompressionLevel {
public:
    enum class Kind { original, short_free, short_budgeted, expanded };

    static CompressionLevel original() { return CompressionLevel(Kind::original, 0); }
    static CompressionLevel short_free() { return CompressionLevel(Kind::short_free, 0); }
    static CompressionLevel expanded() { return CompressionLevel(Kind::expanded, 0); }
    static CompressionLevel no_cot() { return budgeted(100); }
    static CompressionLevel budgeted(int rate) {
        if (std::find(std::begin(kRateLadder), std::end(kRateLadder), rate) == std::end(kRateLadder))
            throw PreconditionError("compression rate " + std::to_string(rate) +
                                    "% is not on the 50..100 ladder");
        return CompressionLevel(Kind::short_budgeted, rate);
    }

    /// Accepts original | short | expanded | nocot | short@<rate>.
    static CompressionLevel parse(std::string_view s) {
        if (s == "original") return original();
        if (s == "short") return short_free();
        if (s == "expanded") return expanded();
        if (s == "nocot") return no_cot();
        if (text::starts_with(s, "short@")) {
            const std::string rate(s.substr(6));
            if (!rate.empty() && std::all_of(rate.begin(), rate.end(), ::isdigit))
                return budgeted(std::stoi(rate));
        }
        throw ConfigError("unknown compression level: " + std::string(s));
    }

    Kind kind() const noexcept { return kind_; }
    int rate() const noexcept { return rate_; }
    bool is_short() const noexcept { return kind_ == Kind::short_free || kind_ == Kind::short_budgeted; }
    bool is_no_cot() const noexcept { return kind_ == Kind::short_budgeted && rate_ == 100; }

    /// Nominal compression rate in percent, where one is defined.
    std::optional<int> nominal_rate() const {
        if (kind_ == Kind::original) return 0;
        if (kind_ == Kind::short_budgeted) return rate_;
        return std::nullopt;
    }

    std::string name() const {
        switch (kind_) {
        case Kind::original: return "original";
        case Kind::short_free: return "short";
        case Kind::expanded: return "expanded";
        case Kind::short_budgeted: return rate_ == 100 ? "nocot" : "short@" + std::to_string(rate_);
        }
        return "?";
    }

    friend auto operator<=>(const CompressionLevel&, const CompressionLevel&) = default;

private:
    CompressionLevel(Kind k, int r) : kind_(k), rate_(r) {}
    Kind kind_;
    int rate_;
};

/// Words allowed for a rate: the original count scaled by the retained
/// fraction, floored, at least one. Not defined for the 100% level.
inline std::size_t word_budget_for(std::size_t original_words, int rate) {
    if (rate >= 100) throw PreconditionError("the 100% level has no word budget");
    const std::size_t b = original_words * static_cast<std::size_t>(100 - rate) / 100;
    return std::max<std::size_t>(1, b);
}

struct CompressionRequest {
    Sample sample;
    CompressionLevel level = CompressionLevel::short_free();
    std::optional<std::size_t> word_budget;

    static CompressionRequest make(const Sample& s, CompressionLevel level) {
        CompressionRequest r{s, level, std::nullopt};
        if (level.kind() == CompressionLevel::Kind::short_budgeted && !level.is_no_cot())
            r.word_budget = word_budget_for(text::word_count(s.rationale_long), level.rate());
        return r;
    }
};

struct RationaleVariant {
    std::string sample_id;
    CompressionLevel level = CompressionLevel::original();
    std::string text;
    std::string producer;
    std::string prompt_digest;
    /// Budget written into the accepted prompt (budgeted levels only).
    std::optional<std::size_t> prompt_budget;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["sample_id"] = sample_id;
        j["level"] = level.name();
        j["text"] = text;
        j["producer"] = producer;
        j["prompt_digest"] = prompt_digest;
        if (prompt_budget) j["prompt_budget"] = *prompt_budget;
        return j;
    }

    static RationaleVariant from_json(const nlohmann::json& j) {
        RationaleVariant v;
        v.sample_id = j.at("sample_id").get<std::string>();
        v.level = CompressionLevel::parse(j.at("level").get<std::string>());
        v.text = j.at("text").get<std::string>();
        v.producer = j.value("producer", "");
        v.prompt_digest = j.value("prompt_digest", "");
        if (j.contains("prompt_budget")) v.prompt_budget = j.at("prompt_budget").get<std::size_t>();
        return v;
    }

    friend bool operator==(const RationaleVariant&, const RationaleVariant&) = default;
};

using VariantKey = std::pair<std::string, CompressionLevel>;
using VariantTable = std::map<VariantKey, RationaleVariant>;

// ---------------------------------------------------------------------------
// Prompt templates.

struct PromptTemplate {
    std::string_view name;
    std::string_view version;
    std::string_view body;
};

inline constexpr PromptTemplate kCompressTemplate{
    "compress", "v1",
    "You have a question now:\n"
    "\n"
    "QUESTION:\n"
    "<Here is Instruction>\n"
    "\n"
    "THOUGHT PROCESS:\n"
    "<Here is Original CoT>\n"
    "\n"
    "ANSWER:\n"
    "<Here is Final Answer>\n"
    "\n"
    "Now you need to simplify the THOUGHT PROCESS as short as possible to only include the key "
    "information needed to solve the question.\n"
    "And do not add additional information that is not included in the original THOUGHT "
    "PROCESS.\n"
    "\n"
    "SIMPLIFIED THOUGHT PROCESS:"};

inline constexpr PromptTemplate kBudgetedCompressTemplate{
    "compress-budgeted", "v1",
    "You have a question now:\n"
    "\n"
    "QUESTION:\n"
    "<Here is Instruction>\n"
    "\n"
    "THOUGHT PROCESS:\n"
    "<Here is Original CoT>\n"
    "\n"
    "ANSWER:\n"
    "<Here is Final Answer>\n"
    "\n"
    "Now you need to simplify the THOUGHT PROCESS to no more than <Here is Word Numbers> words "
    "and retain the key information needed to solve the question.\n"
    "And do not add additional information that is not included in the original THOUGHT "
    "PROCESS.\n"
    "\n"
    "SIMPLIFIED THOUGHT PROCESS:"};

inline constexpr PromptTemplate kExpandTemplate{
    "expand", "v1",
    "You have a question now:\n"
    "\n"
    "QUESTION:\n"
    "<Here is Instruction>\n"
    "\n"
    "THOUGHT PROCESS:\n"
    "<Here is Original CoT>\n"
    "\n"
    "ANSWER:\n"
    "<Here is Final Answer>\n"
    "\n"
    "Now you need to expand the THOUGHT PROCESS according to the following STRATEGIES.\n"
    "Do not remove anything from the original THOUGHT PROCESS.\n"
    "\n"
    "STRATEGIES:\n"
    "1. Think About The Word: pick important words in the QUESTION and interpret them.\n"
    "2. Read the Question Again: read the QUESTION repeatedly to reduce the interference of "
    "other texts on the chain of thought.\n"
    "3. Repeat State: add a small summary of the current state after a long chain of "
    "reasoning.\n"
    "4. Self-Verification: before getting the answer, add a self-verification process to judge "
    "whether the answer is reasonable based on some basic information.\n"
    "5. Make Equation: make equations whenever calculations are needed.\n"
    "\n"
    "EXPANDED THOUGHT PROCESS:"};

/// Single-pass placeholder substitution: substituted values are never
/// rescanned, so sample text containing "<Here is ...>" is inserted verbatim.
inline std::string render_template(std::string_view body,
                                   const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < body.size()) {
        bool matched = false;
        if (body[i] == '<') {
            for (const auto& [placeholder, value] : values) {
                if (body.compare(i, placeholder.size(), placeholder) == 0) {
                    out += value;
                    i += placeholder.size();
                    matched = true;
                    break;
                }
            }
        }
        if (!matched) out += body[i++];
    }
    return out;
}

namespace detail {

inline std::map<std::string, std::string> sample_slots(const Sample& s) {
    if (text::is_blank(s.instruction))
        throw PreconditionError("sample " + s.id + ": empty instruction");
    if (text::is_blank(s.rationale_long))
        throw PreconditionError("sample " + s.id + ": empty rationale");
    return {{"<Here is Instruction>", s.instruction},
            {"<Here is Original CoT>", s.rationale_long},
            {"<Here is Final Answer>", s.answer.value}};
}

} // namespace detail

inline std::string render_compress_prompt(const Sample& s) {
    return render_template(kCompressTemplate.body, detail::sample_slots(s));
}

inline std::string render_budgeted_prompt(const Sample& s, std::size_t word_budget) {
    if (word_budget == 0)
        throw PreconditionError("word budget must be at least 1; use the no-CoT level instead");
    auto slots = detail::sample_slots(s);
    slots["<Here is Word Numbers>"] = std::to_string(word_budget);
    return render_template(kBudgetedCompressTemplate.body, slots);
}

inline std::string render_expand_prompt(const Sample& s) {
    return render_template(kExpandTemplate.body, detail::sample_slots(s));
}

// ---------------------------------------------------------------------------
// Deterministic extractive compressor.

namespace detail {

inline int sentence_score(std::string_view sentence, const AnswerValue& answer) {
    int score = 0;
    if (std::any_of(sentence.begin(), sentence.end(),
                    [](char c) { return c >= '0' && c <= '9'; }))
        ++score;
    if (sentence.find('=') != std::string_view::npos) ++score;
    if (answer.kind != AnswerKind::choice_letter && !answer.value.empty() &&
        text::to_lower_ascii(sentence).find(answer.value) != std::string::npos)
        ++score;
    return score;
}

} // namespace detail

/// Keeps the highest-scoring sentences (digits, '=', the final answer; later
/// sentences win ties) in original order until `word_budget` words are used,
/// truncating the sentence that crosses the budget.
inline std::string reference_compress_text(const Sample& s, std::size_t word_budget) {
    if (word_budget == 0) return {};
    const std::size_t total = text::word_count(s.rationale_long);
    if (word_budget >= total) return s.rationale_long;

    const auto sentences = text::split_sentences(s.rationale_long);
    std::vector<std::size_t> order(sentences.size());
    std::vector<int> scores(sentences.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        order[i] = i;
        scores[i] = detail::sentence_score(sentences[i], s.answer);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a > b;
    });

    std::map<std::size_t, std::size_t> kept;  // sentence index -> words kept
    std::size_t used = 0;
    for (std::size_t idx : order) {
        const std::size_t remaining = word_budget - used;
        if (remaining == 0) break;
        const std::size_t n = text::word_count(sentences[idx]);
        const std::size_t take = std::min(n, remaining);
        kept[idx] = take;
        used += take;
        if (take < n) break;
    }

    std::vector<std::string_view> words;
    for (const auto& [idx, take] : kept) {
        const auto w = text::split_words(sentences[idx]);
        words.insert(words.end(), w.begin(), w.begin() + static_cast<std::ptrdiff_t>(take));
    }
    return text::join(words, " ");
}

inline RationaleVariant reference_compress(const Sample& s, std::size_t word_budget,
                                           CompressionLevel level = CompressionLevel::short_free()) {
    RationaleVariant v;
    v.sample_id = s.id;
    v.level = level;
    v.text = reference_compress_text(s, word_budget);
    v.producer = "reference-extractive";
    v.prompt_budget = word_budget;
    return v;
}

// ---------------------------------------------------------------------------
// LLM-backed compression.

class CompressionError : public Error {
public:
    CompressionError(std::string sample_id, CompressionLevel level, const std::string& what)
        : Error("compress " + sample_id + " at " + level.name() + ": " + what),
          sample_id_(std::move(sample_id)), level_(level) {}
    const std::string& sample_id() const noexcept { return sample_id_; }
    const CompressionLevel& level() const noexcept { return level_; }

private:
    std::string sample_id_;
    CompressionLevel level_;
};

struct CompressPolicy {
    int max_attempts = 2;
    /// Accepted overshoot of a word budget.
    double budget_slack = 0.10;
};

namespace detail {

inline std::string clean_completion(std::string_view raw, std::string_view header) {
    std::string out = text::trim(raw);
    if (text::starts_with(out, header)) out = text::trim(std::string_view(out).substr(header.size()));
    return out;
}

} // namespace detail

/// Produces a validated variant of `s` at `level`. Original and no-CoT levels
/// never call the backend.
inline RationaleVariant compress(const Sample& s, CompressionLevel level,
                                 const BackendHandle& backend, const CompressPolicy& policy = {}) {
    RationaleVariant v;
    v.sample_id = s.id;
    v.level = level;
    if (level.kind() == CompressionLevel::Kind::original) {
        v.text = s.rationale_long;
        v.producer = "identity";
        return v;
    }
    if (level.is_no_cot()) {
        v.producer = "none";
        return v;
    }

    const auto request = CompressionRequest::make(s, level);
    const std::size_t original_words = text::word_count(s.rationale_long);
    std::optional<std::size_t> prompt_budget = request.word_budget;
    std::string previous_prompt;
    std::string failure = "no attempts";

    for (int attempt = 1; attempt <= std::max(1, policy.max_attempts); ++attempt) {
        std::string prompt;
        std::string_view header;
        try {
            if (level.kind() == CompressionLevel::Kind::expanded) {
                prompt = render_expand_prompt(s);
                header = "EXPANDED THOUGHT PROCESS:";
            } else if (prompt_budget) {
                prompt = render_budgeted_prompt(s, *prompt_budget);
                header = "SIMPLIFIED THOUGHT PROCESS:";
            } else {
                prompt = render_compress_prompt(s);
                header = "SIMPLIFIED THOUGHT PROCESS:";
            }
        } catch (const PreconditionError& e) {
            throw CompressionError(s.id, level, e.what());
        }

        std::string out;
        try {
            out = detail::clean_completion(backend.complete(prompt, prompt == previous_prompt),
                                           header);
        } catch (const BackendError& e) {
            throw CompressionError(s.id, level, e.what());
        }
        previous_prompt = prompt;

        const std::size_t words = text::word_count(out);
        if (words == 0) {
            failure = "empty output";
            continue;
        }
        if (level.is_short() && words >= original_words) {
            failure = "variant has " + std::to_string(words) + " words, original has " +
                      std::to_string(original_words);
            continue;
        }
        if (request.word_budget) {
            const double limit = static_cast<double>(*request.word_budget) * (1.0 + policy.budget_slack);
            if (static_cast<double>(words) > limit) {
                failure = "variant has " + std::to_string(words) + " words, budget is " +
                          std::to_string(*request.word_budget);
                const std::size_t overshoot = words - *request.word_budget;
                prompt_budget = *prompt_budget > overshoot ? *prompt_budget - overshoot : 1;
                continue;
            }
        }
        v.text = out;
        v.producer = backend.identity();
        v.prompt_digest = text::sha256_hex(prompt);
        v.prompt_budget = prompt_budget;
        return v;
    }
    throw CompressionError(s.id, level, "validation failed: " + failure);
}

/// Compresses every sample with bounded parallelism. Results are keyed by
/// sample id, so completion order does not matter.
inline std::map<std::string, RationaleVariant>
compress_all(const Corpus& corpus, CompressionLevel level, const BackendHandle& backend,
             const CompressPolicy& policy = {}, int jobs = 1) {
    std::vector<std::optional<RationaleVariant>> results(corpus.size());
    std::vector<std::exception_ptr> errors(corpus.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < corpus.size(); i = next++) {
            try {
                results[i] = compress(corpus.samples[i], level, backend, policy);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::max(1, std::min<int>(jobs, static_cast<int>(corpus.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::map<std::string, RationaleVariant> out;
    for (auto& r : results) out.emplace(r->sample_id, std::move(*r));
    return out;
}

// ---------------------------------------------------------------------------
// Variant files (JSONL).

inline void write_variants(const std::string& path, const VariantTable& table) {
    text::ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    for (const auto& [key, v] : table) out << v.to_json().dump() << '\n';
}

inline VariantTable read_variants(const std::string& path) {
    VariantTable table;
    detail::for_each_record(path, [&](const nlohmann::json& rec, std::size_t lineno) {
        try {
            auto v = RationaleVariant::from_json(rec);
            VariantKey key{v.sample_id, v.level};
            table.emplace(std::move(key), std::move(v));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
    });
    return table;
}

inline void add_variants(VariantTable& table, const std::map<std::string, RationaleVariant>& by_id) {
    for (const auto& [id, v] : by_id) table.insert_or_assign(VariantKey{id, v.level}, v);
}

// ---------------------------------------------------------------------------

/// Offline compressor service: answers the compression and expansion prompts
/// by parsing them back and running the extractive compressor. Free
/// compression keeps `free_ratio` of the words.
class ReferenceCompressorTransport : public Transport {
public:
    explicit ReferenceCompressorTransport(double free_ratio = 0.45) : free_ratio_(free_ratio) {}

    std::string kind() const override { return "reference"; }
    std::string endpoint() const override { return "reference://extractive?free_ratio=" + std::to_string(free_ratio_); }

    std::string complete(const std::string&, const DecodingParams&, const std::string& prompt) override {
        ++calls_;
        const auto section = [&](std::string_view open, std::string_view close) {
            const auto b = prompt.find(open);
            if (b == std::string::npos) throw BackendError("unrecognized prompt", false);
            const auto start = b + open.size();
            const auto e = prompt.find(close, start);
            if (e == std::string::npos) throw BackendError("unrecognized prompt", false);
            return prompt.substr(start, e - start);
        };
        Sample s;
        s.id = "prompt";
        s.instruction = section("QUESTION:\n", "\n\nTHOUGHT PROCESS:\n");
        s.rationale_long = section("THOUGHT PROCESS:\n", "\n\nANSWER:\n");
        s.answer = AnswerValue{AnswerKind::numeric, text::to_lower_ascii(section("ANSWER:\n", "\n\nNow you need to "))};
        const std::size_t words = text::word_count(s.rationale_long);

        if (prompt.find("EXPANDED THOUGHT PROCESS:") != std::string::npos) {
            return "Read the question again: " + s.instruction + "\n" + s.rationale_long +
                   "\nLet me verify: " + s.rationale_long;
        }
        std::size_t budget;
        static constexpr std::string_view kNoMore = "THOUGHT PROCESS to no more than ";
        if (const auto at = prompt.rfind(kNoMore); at != std::string::npos) {
            budget = std::stoul(prompt.substr(at + kNoMore.size()));
        } else {
            budget = static_cast<std::size_t>(static_cast<double>(words) * free_ratio_);
            budget = std::max<std::size_t>(1, std::min(budget, words > 0 ? words - 1 : 0));
        }
        return reference_compress_text(s, budget);
    }

    std::string train(const std::string&, const TrainJob&) override {
        throw BackendError("reference compressor cannot train", false);
    }

    int calls() const { return calls_.load(); }

private:
    double free_ratio_;
    std::atomic<int> calls_{0};
};

} // namespace c3ot
