#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "c3ot/c3ot.hpp"

namespace c3ot::testing {

namespace fs = std::filesystem;

inline fs::path data_dir() { return fs::path(C3OT_TEST_SOURCE_DIR) / "data"; }
inline fs::path golden_dir() { return fs::path(C3OT_TEST_SOURCE_DIR) / "golden"; }
inline std::string data(const std::string& name) { return (data_dir() / name).string(); }
inline std::string golden(const std::string& name) { return text::read_file((golden_dir() / name).string()); }

class TempDir {
public:
    TempDir() : path_(detail::unique_temp("c3ot-test")) { fs::create_directories(path_); }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

inline Sample natalia() {
    Sample s;
    s.id = "gsm8k-train-00000";
    s.instruction = "Natalia sold clips to 48 of her friends in April, and then she sold half as many clips "
                    "in May. How many clips did Natalia sell altogether in April and May?";
    s.rationale_long = "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48+24 = <<48+24=72>>72 "
                       "clips altogether in April and May.";
    s.answer = AnswerValue::make(AnswerKind::numeric, "72");
    s.source = Family::gsm8k;
    return s;
}

/// Arithmetic-flavoured corpus with 3-8 sentence rationales of varied length.
inline Corpus synthetic_corpus(std::size_t n, std::uint64_t seed = 7, Family family = Family::gsm8k) {
    static const std::vector<std::string> filler = {
        "first", "we", "note", "that", "the", "total", "count", "of", "items", "is", "given",
        "so", "each", "group", "holds", "some", "more", "then", "after", "adding", "them", "up"};
    std::mt19937_64 rng(seed);
    Corpus c;
    c.family = family;
    c.split = Split::train;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.id = "syn-" + std::to_string(i);
        const long a = static_cast<long>(text::bounded(rng, 90)) + 10;
        const long b = static_cast<long>(text::bounded(rng, 90)) + 10;
        s.instruction = "Problem " + std::to_string(i) + ": a crate holds " + std::to_string(a) +
                        " apples and another holds " + std::to_string(b) + ". How many apples are there?";
        const std::size_t sentences = 3 + text::bounded(rng, 6);
        std::string r;
        for (std::size_t k = 0; k < sentences; ++k) {
            const std::size_t words = 4 + text::bounded(rng, 12);
            std::string sentence;
            for (std::size_t w = 0; w < words; ++w) {
                if (w) sentence += ' ';
                sentence += filler[text::bounded(rng, filler.size())];
            }
            if (k == sentences - 1) sentence += " so " + std::to_string(a) + "+" + std::to_string(b) + " = " + std::to_string(a + b);
            if (!r.empty()) r += ' ';
            r += sentence + ".";
        }
        s.rationale_long = r;
        s.answer = AnswerValue::make(AnswerKind::numeric, std::to_string(a + b));
        s.source = family;
        c.samples.push_back(std::move(s));
    }
    return c;
}

/// Reference-compressor variants of every sample at each level.
inline VariantTable reference_variants(const Corpus& corpus, const std::vector<CompressionLevel>& levels) {
    VariantTable t;
    for (const auto& level : levels) {
        for (const auto& s : corpus.samples) {
            const auto n = text::word_count(s.rationale_long);
            std::size_t budget = n;
            if (level.is_no_cot()) budget = 0;
            else if (level.kind() == CompressionLevel::Kind::short_budgeted) budget = word_budget_for(n, level.rate());
            else if (level.kind() == CompressionLevel::Kind::short_free) budget = n * 45 / 100;
            t.emplace(VariantKey{s.id, level}, reference_compress(s, budget, level));
        }
    }
    return t;
}

/// Oracle thresholds for the standard ladder: harder samples need longer CoT.
inline std::map<CompressionLevel, double> standard_thresholds() {
    return {{CompressionLevel::original(), 1.0},      {CompressionLevel::expanded(), 1.0},
            {CompressionLevel::short_free(), 0.85},   {CompressionLevel::budgeted(50), 0.9},
            {CompressionLevel::budgeted(60), 0.8},    {CompressionLevel::budgeted(70), 0.65},
            {CompressionLevel::budgeted(80), 0.5},    {CompressionLevel::budgeted(90), 0.35},
            {CompressionLevel::no_cot(), 0.2}};
}

/// Difficulty (i + 0.5) / n for the i-th sample.
inline std::map<std::string, double> spread_difficulty(const Corpus& corpus) {
    std::map<std::string, double> d;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        d[corpus.samples[i].id] = (static_cast<double>(i) + 0.5) / static_cast<double>(corpus.size());
    return d;
}

/// Canonical train/test corpora, an oracle difficulty file and backend specs
/// for end-to-end runs. The test split has its own ids and questions.
class ExperimentFixture {
public:
    explicit ExperimentFixture(std::size_t n_train = 40, std::size_t n_test = 30) {
        train = synthetic_corpus(n_train, 21);
        test = synthetic_corpus(n_test, 22);
        test.split = Split::test;
        for (auto& s : test.samples) {
            s.id = "tst-" + s.id.substr(4);
            s.instruction = "Held out. " + s.instruction;
        }
        write_corpus(train, dir / "train.jsonl");
        write_corpus(test, dir / "test.jsonl");
        auto difficulty = spread_difficulty(train);
        for (const auto& [id, d] : spread_difficulty(test)) difficulty[id] = d;
        std::ofstream(dir / "difficulty.json") << nlohmann::json(difficulty).dump();
    }

    nlohmann::json oracle_spec() const {
        nlohmann::json thresholds;
        for (const auto& [level, t] : standard_thresholds()) thresholds[level.name()] = t;
        return {{"kind", "oracle"}, {"oracle", {{"difficulty_file", dir / "difficulty.json"}, {"thresholds", thresholds}}}};
    }

    nlohmann::json config(const std::string& method, const std::string& run) const {
        nlohmann::json j = {{"name", method},
                            {"family", "gsm8k"},
                            {"method", method},
                            {"train", {{"path", dir / "train.jsonl"}, {"format", "canonical"}}},
                            {"test", {{"path", dir / "test.jsonl"}, {"format", "canonical"}}},
                            {"compressor", {{"kind", "reference"}}},
                            {"trainer", oracle_spec()},
                            {"seeds", {{"shuffle", 3}, {"probe", {1, 2, 3}}}},
                            {"folds", 5},
                            {"run_dir", dir / ("runs/" + run)},
                            {"cache_dir", dir / "cache"},
                            {"jobs", 4}};
        if (method == "c3ot_mixed" || method == "c3ot_adapt")
            j["ladder"] = {"nocot", "short@90", "short@80", "short@70", "short@60", "short@50", "original"};
        return j;
    }

    TempDir dir;
    Corpus train, test;
};

} // namespace c3ot::testing
