#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace c3ot;
using namespace c3ot::testing;

namespace {

bool is_word_subsequence(std::string_view candidate, std::string_view original) {
    const auto c = text::split_words(candidate);
    const auto o = text::split_words(original);
    std::size_t j = 0;
    for (const auto& w : o)
        if (j < c.size() && c[j] == w) ++j;
    return j == c.size();
}

BackendHandle reference_backend(double ratio = 0.45) {
    return BackendHandle(std::make_shared<ReferenceCompressorTransport>(ratio), "extractive",
                         {Capability::complete}, {}, {});
}

} // namespace

TEST(Level, ParseAndOrder) {
    EXPECT_EQ(CompressionLevel::parse("short@70"), CompressionLevel::budgeted(70));
    EXPECT_EQ(CompressionLevel::parse("nocot"), CompressionLevel::no_cot());
    EXPECT_TRUE(CompressionLevel::no_cot().is_no_cot());
    EXPECT_THROW(CompressionLevel::budgeted(55), PreconditionError);
    EXPECT_THROW(CompressionLevel::parse("tiny"), Error);
    for (const auto* n : {"original", "short", "expanded", "nocot", "short@50", "short@90"})
        EXPECT_EQ(CompressionLevel::parse(n).name(), n);
}

TEST(Level, WordBudgetKeepsTheRetainedShare) {
    EXPECT_EQ(word_budget_for(100, 50), 50u);
    EXPECT_EQ(word_budget_for(100, 90), 10u);
    EXPECT_EQ(word_budget_for(7, 90), 1u);
    const auto r = CompressionRequest::make(natalia(), CompressionLevel::budgeted(60));
    ASSERT_TRUE(r.word_budget);
    EXPECT_EQ(*r.word_budget, 7u);  // 19 words, 40% kept
    EXPECT_FALSE(CompressionRequest::make(natalia(), CompressionLevel::no_cot()).word_budget);
    EXPECT_FALSE(CompressionRequest::make(natalia(), CompressionLevel::short_free()).word_budget);
}

TEST(Prompts, CompressMatchesGolden) {
    EXPECT_EQ(render_compress_prompt(natalia()), golden("compress_natalia.txt"));
}

TEST(Prompts, BudgetedMatchesGolden) {
    const auto p = render_budgeted_prompt(natalia(), 20);
    EXPECT_EQ(p, golden("compress_budgeted_natalia_20.txt"));
    EXPECT_NE(p.find("no more than 20 words"), std::string::npos);
    EXPECT_NE(render_budgeted_prompt(natalia(), 1).find("no more than 1 words"), std::string::npos);
    EXPECT_THROW(render_budgeted_prompt(natalia(), 0), PreconditionError);
}

TEST(Prompts, ExpandMatchesGoldenWithAllStrategies) {
    const auto p = render_expand_prompt(natalia());
    EXPECT_EQ(p, golden("expand_natalia.txt"));
    for (const auto* heading : {"1. Think About The Word:", "2. Read the Question Again:", "3. Repeat State:",
                                "4. Self-Verification:", "5. Make Equation:"})
        EXPECT_NE(p.find(heading), std::string::npos) << heading;
}

TEST(Prompts, StructureAndGuards) {
    const auto p = render_compress_prompt(natalia());
    for (const auto* part : {"QUESTION:", "THOUGHT PROCESS:", "ANSWER:\n72\n"})
        EXPECT_NE(p.find(part), std::string::npos);
    EXPECT_TRUE(p.ends_with("SIMPLIFIED THOUGHT PROCESS:"));
    auto empty = natalia();
    empty.rationale_long = "  ";
    EXPECT_THROW(render_compress_prompt(empty), PreconditionError);
    EXPECT_THROW(render_expand_prompt(empty), PreconditionError);
}

TEST(Prompts, PlaceholderTextInSampleIsNotRescanned) {
    auto s = natalia();
    s.instruction = "What is <Here is Final Answer>?";
    const auto p = render_compress_prompt(s);
    EXPECT_NE(p.find("What is <Here is Final Answer>?"), std::string::npos);
}

TEST(Prompts, DigestRecomputableFromTemplate) {
    const auto v = compress(natalia(), CompressionLevel::short_free(), reference_backend());
    EXPECT_EQ(v.prompt_digest, text::sha256_hex(render_compress_prompt(natalia())));
}

TEST(Reference, BoundaryBudgets) {
    const auto s = natalia();
    EXPECT_EQ(reference_compress_text(s, 0), "");
    EXPECT_EQ(reference_compress_text(s, 19), s.rationale_long);
    EXPECT_EQ(reference_compress_text(s, 500), s.rationale_long);
}

TEST(Reference, PrefersAnswerBearingSentence) {
    // Second sentence scores digit + '=' + answer; the first lacks the answer.
    EXPECT_EQ(reference_compress_text(natalia(), 11),
              "Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May.");
    // One spare word goes to the head of the next-best sentence.
    EXPECT_EQ(reference_compress_text(natalia(), 12),
              "Natalia Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May.");
}

TEST(Reference, RandomizedProperties) {
    std::mt19937_64 rng(2024);
    const auto corpus = synthetic_corpus(250, 99);
    for (int i = 0; i < 1000; ++i) {
        const auto& s = corpus.samples[text::bounded(rng, corpus.size())];
        const std::size_t len = text::word_count(s.rationale_long);
        const std::size_t b1 = text::bounded(rng, len + 5);
        const std::size_t b2 = b1 + text::bounded(rng, len + 5);
        const auto out1 = reference_compress_text(s, b1);
        const auto out2 = reference_compress_text(s, b2);
        ASSERT_TRUE(is_word_subsequence(out1, s.rationale_long)) << s.id << " budget " << b1;
        ASSERT_LE(text::word_count(out1), b1);
        ASSERT_LE(text::word_count(out1), text::word_count(out2));
        if (b1 >= len) {
            ASSERT_EQ(out1, s.rationale_long);
        } else {
            ASSERT_EQ(text::word_count(out1), b1);
        }
    }
}

TEST(Compress, OriginalAndNoCotNeedNoBackend) {
    auto mock = std::make_shared<MockTransport>();
    BackendHandle h(mock, "m", {Capability::complete}, {}, {});
    EXPECT_EQ(compress(natalia(), CompressionLevel::original(), h).text, natalia().rationale_long);
    EXPECT_EQ(compress(natalia(), CompressionLevel::no_cot(), h).text, "");
    EXPECT_EQ(mock->calls(), 0);
}

TEST(Compress, RejectsOutputThatDoesNotShrink) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, natalia().rationale_long);
    BackendHandle h(mock, "m", {Capability::complete}, {}, {});
    EXPECT_THROW(compress(natalia(), CompressionLevel::short_free(), h), CompressionError);
    // The retry re-asks the identical prompt with a cache refresh.
    EXPECT_EQ(mock->calls(), 2);
}

TEST(Compress, BudgetOvershootTightensTheNextPrompt) {
    const auto s = natalia();
    auto mock = std::make_shared<MockTransport>();
    const auto budget = *CompressionRequest::make(s, CompressionLevel::budgeted(60)).word_budget;  // 7
    mock->set_fixture(render_budgeted_prompt(s, budget), "one two three four five six seven eight nine ten");
    mock->set_fixture(render_budgeted_prompt(s, budget - 3), "48+24 = 72 clips");
    BackendHandle h(mock, "m", {Capability::complete}, {}, {});
    const auto v = compress(s, CompressionLevel::budgeted(60), h);
    EXPECT_EQ(v.text, "48+24 = 72 clips");
    EXPECT_EQ(v.prompt_budget, budget - 3);
    EXPECT_EQ(mock->calls(), 2);
}

TEST(Compress, StripsEchoedHeader) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{},
                                                "SIMPLIFIED THOUGHT PROCESS:\n48/2 = 24. 48+24 = 72.");
    BackendHandle h(mock, "m", {Capability::complete}, {}, {});
    EXPECT_EQ(compress(natalia(), CompressionLevel::short_free(), h).text, "48/2 = 24. 48+24 = 72.");
}

TEST(Compress, ReferenceBackendRoundTripsPrompts) {
    const auto h = reference_backend();
    const auto s = natalia();
    const auto free = compress(s, CompressionLevel::short_free(), h);
    EXPECT_EQ(text::word_count(free.text), 8u);  // floor(19 * 0.45)
    const auto b = compress(s, CompressionLevel::budgeted(80), h);
    EXPECT_LE(text::word_count(b.text), 3u);
    const auto e = compress(s, CompressionLevel::expanded(), h);
    EXPECT_GT(text::word_count(e.text), 2 * text::word_count(s.rationale_long));
}

TEST(Compress, AllIsOrderIndependent) {
    const auto corpus = synthetic_corpus(40, 3);
    const auto h = reference_backend();
    const auto serial = compress_all(corpus, CompressionLevel::budgeted(70), h, {}, 1);
    const auto parallel = compress_all(corpus, CompressionLevel::budgeted(70), h, {}, 8);
    ASSERT_EQ(serial.size(), 40u);
    for (const auto& [id, v] : serial) EXPECT_EQ(parallel.at(id).text, v.text);
}

TEST(Variants, FileRoundTrip) {
    TempDir tmp;
    const auto corpus = synthetic_corpus(5, 1);
    VariantTable t;
    add_variants(t, compress_all(corpus, CompressionLevel::short_free(), reference_backend()));
    add_variants(t, compress_all(corpus, CompressionLevel::no_cot(), reference_backend()));
    write_variants(tmp / "v.jsonl", t);
    const auto back = read_variants(tmp / "v.jsonl");
    ASSERT_EQ(back.size(), 10u);
    for (const auto& [k, v] : t) {
        EXPECT_EQ(back.at(k).text, v.text);
        EXPECT_EQ(back.at(k).prompt_digest, v.prompt_digest);
    }
}
