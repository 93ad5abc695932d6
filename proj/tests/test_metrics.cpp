#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace c3ot;
using namespace c3ot::testing;

namespace {
LengthMeasure w(double v) { return {LengthUnit::words, v}; }
}  // namespace

TEST(Rate, Formula) {
    EXPECT_NEAR(compression_rate(w(100), w(50)), 0.5, 1e-12);
    for (double L : {1.0, 7.5, 124.0, 1e6}) EXPECT_NEAR(compression_rate(w(L), w(0)), 1.0, 1e-12);
    EXPECT_NEAR(compression_rate(w(100), w(410.17)), -3.1017, 1e-12);
    EXPECT_EQ(format_percent(compression_rate(w(100), w(410.17))), "-310.17");
    EXPECT_EQ(format_percent(compression_rate(w(124), w(56))), "54.84");
}

TEST(Rate, ScaleInvariant) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(0.5, 500.0);
    for (int i = 0; i < 200; ++i) {
        const double L = d(rng), l = d(rng);
        for (double k : {2.0, 10.0, 1000.0})
            EXPECT_NEAR(compression_rate(w(L), w(l)), compression_rate(w(k * L), w(k * l)), 1e-12);
    }
}

TEST(Rate, Guards) {
    EXPECT_THROW(compression_rate(w(0), w(1)), PreconditionError);
    EXPECT_THROW(compression_rate(w(10), {LengthUnit::characters, 5}), PreconditionError);
    EXPECT_THROW(measure("abc", LengthUnit::backend_tokens), ConfigError);
}

TEST(Measure, StripAnswerLine) {
    EXPECT_EQ(strip_answer_line("a b c\n#### 5"), "a b c");
    EXPECT_EQ(strip_answer_line("#### 5\n"), "");
    EXPECT_EQ(strip_answer_line("no marker here"), "no marker here");
    EXPECT_EQ(measure("héllo wörld", LengthUnit::characters).value, 11.0);
}

TEST(Accuracy, ExactMatchAndLengths) {
    Corpus gold{Family::gsm8k, Split::test, {natalia()}};
    auto second = natalia();
    second.id = "b";
    second.answer = AnswerValue::make(AnswerKind::numeric, "10");
    gold.samples.push_back(second);
    const auto r = accuracy(gold, {{natalia().id, "24 + 48 = 72\n#### 72"}, {"b", "It is 12\n#### 12"}});
    EXPECT_EQ(r.n, 2u);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(r.mean_length(), 4.0);
    EXPECT_FALSE(r.compression_rate);
    EXPECT_THROW(accuracy(gold, {{"b", "x"}}), DataError);
}

TEST(Accuracy, NoCotHasZeroLength) {
    Corpus gold{Family::gsm8k, Split::test, {natalia()}};
    auto r = accuracy(gold, {{natalia().id, "#### 72"}});
    r.set_baseline(19, false);
    EXPECT_DOUBLE_EQ(*r.compression_rate, 1.0);
}

TEST(Accuracy, JsonRoundTripRecomputes) {
    Corpus gold{Family::gsm8k, Split::test, {natalia()}};
    auto r = accuracy(gold, {{natalia().id, "one two three four five\n#### 72"}});
    r.set_baseline(10, true);
    const auto back = EvalResult::from_json(nlohmann::json::parse(r.to_json().dump()));
    EXPECT_DOUBLE_EQ(back.accuracy, 1.0);
    EXPECT_NEAR(*back.compression_rate, 0.5, 1e-12);
    EXPECT_TRUE(back.baseline_is_proxy);
}

TEST(Summary, CorpusRateAndDeciles) {
    const auto corpus = synthetic_corpus(50);
    std::map<std::string, RationaleVariant> half;
    double total = 0, kept = 0;
    for (const auto& s : corpus.samples) {
        const auto n = text::word_count(s.rationale_long);
        half.emplace(s.id, reference_compress(s, n / 2));
        total += static_cast<double>(n);
        kept += static_cast<double>(n / 2);
    }
    const auto sum = corpus_compression_summary(corpus, half);
    EXPECT_NEAR(sum.rate, (total - kept) / total, 1e-12);
    ASSERT_EQ(sum.deciles.size(), 10u);
    for (std::size_t i = 1; i < sum.deciles.size(); ++i)
        EXPECT_LE(sum.deciles[i - 1].mean_original, sum.deciles[i].mean_original);
}
