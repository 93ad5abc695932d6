#include <gtest/gtest.h>

#include "support.hpp"

using namespace c3ot;
using namespace c3ot::testing;

namespace {

const StageRecord& stage_of(const RunManifest& m, const std::string& name) {
    for (const auto& s : m.stages)
        if (s.name == name) return s;
    throw std::runtime_error("no stage " + name);
}

std::string words(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += i ? " w" : "w";
    return s;
}

RunManifest manifest_with(Method method, std::optional<EvalResult> eval, Family family = Family::gsm8k) {
    RunManifest m;
    m.name = std::string(to_string(method));
    m.method = method;
    m.family = family;
    m.eval = std::move(eval);
    return m;
}

} // namespace

TEST(Config, ValidationErrors) {
    ExperimentFixture f(4, 2);
    auto expect_invalid = [](nlohmann::json j) { EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError) << j.dump(); };
    auto adapt = f.config("c3ot_adapt", "x");
    adapt.erase("ladder");
    expect_invalid(adapt);
    auto no_test = f.config("c3ot", "x");
    no_test.erase("test");
    expect_invalid(no_test);
    auto tokens = f.config("c3ot", "x");
    tokens["length_unit"] = "backend-tokens";
    expect_invalid(tokens);
    auto no_compressor = f.config("c3ot", "x");
    no_compressor.erase("compressor");
    expect_invalid(no_compressor);
    auto bad_method = f.config("c3ot", "x");
    bad_method["method"] = "c4ot";
    expect_invalid(bad_method);
    auto no_seeds = f.config("c3ot", "x");
    no_seeds["seeds"]["probe"] = nlohmann::json::array();
    expect_invalid(no_seeds);
    auto bad_ladder = f.config("c3ot_mixed", "x");
    bad_ladder["ladder"] = {"short@50", "nocot", "original"};
    expect_invalid(bad_ladder);
    auto no_long = f.config("long_cot", "x");
    no_long.erase("compressor");
    EXPECT_NO_THROW(ExperimentConfig::from_json(no_long));
}

TEST(Config, LoadResolvesRelativePathsAndDefaults) {
    ExperimentFixture f(4, 2);
    auto j = f.config("c3ot", "x");
    j["train"]["path"] = "train.jsonl";
    j["run_dir"] = "runs/rel";
    std::ofstream(f.dir / "exp.json") << j.dump();
    const auto c = ExperimentConfig::load(f.dir / "exp.json");
    EXPECT_EQ(c.train.path, f.dir / "train.jsonl");
    EXPECT_EQ(c.run_dir, f.dir / "runs/rel");
    EXPECT_EQ(c.inference(), Condition::short_cot());
    EXPECT_EQ(c.target_level(), "short");
    std::ofstream(f.dir / "broken.json") << "{";
    EXPECT_THROW(ExperimentConfig::load(f.dir / "broken.json"), ConfigError);
}

TEST(Run, EveryMethodProducesAnEvaluatedManifest) {
    ExperimentFixture f(24, 20);
    for (const auto* method : {"long_cot", "short_cot", "c3ot", "c3ot_expansion", "c3ot_mixed", "c3ot_adapt"}) {
        auto cfg = f.config(method, method);
        cfg["folds"] = 3;
        const auto m = run_experiment(ExperimentConfig::from_json(cfg));
        const fs::path run = f.dir / (std::string("runs/") + method);
        EXPECT_EQ(m.status, "ok") << method;
        ASSERT_TRUE(m.eval) << method;
        EXPECT_EQ(m.eval->n, 20u);
        for (const auto* file : {"manifest.json", "report.txt", "report.json", "artifacts/train.jsonl",
                                 "artifacts/generations.jsonl", "artifacts/eval.json", "artifacts/model.json"})
            EXPECT_TRUE(fs::exists(run / file)) << method << " " << file;
        for (const auto& [name, digest] : m.artifacts) EXPECT_EQ(text::file_digest(run / "artifacts" / name), digest) << name;
        const auto back = RunManifest::load(run.string());
        EXPECT_EQ(back.model_ref, m.model_ref);
        EXPECT_EQ(back.stages.size(), m.stages.size());
        EXPECT_NE(text::read_file(run / "report.txt").find(method), std::string::npos);
    }
    EXPECT_TRUE(fs::exists(f.dir / "runs/c3ot_adapt/artifacts/selection.json"));
    const auto mixed = nlohmann::json::parse(text::read_file(f.dir / "runs/c3ot_mixed/artifacts/train.jsonl.manifest.json"));
    EXPECT_EQ(mixed.at("record_count"), 24 * 7);
}

TEST(Run, TrainingSetSizesPerMethod) {
    ExperimentFixture f(10, 4);
    const std::map<std::string, int> expected = {{"long_cot", 10}, {"short_cot", 10}, {"c3ot", 20}, {"c3ot_expansion", 20}};
    for (const auto& [method, n] : expected) {
        run_experiment(ExperimentConfig::from_json(f.config(method, method)));
        const auto side = nlohmann::json::parse(text::read_file(f.dir / ("runs/" + method + "/artifacts/train.jsonl.manifest.json")));
        EXPECT_EQ(side.at("record_count"), n) << method;
    }
}

TEST(Run, RateAgainstLongCotBaselineManifest) {
    ExperimentFixture f(10, 12);
    const auto base = run_experiment(ExperimentConfig::from_json(f.config("long_cot", "long")));
    ASSERT_TRUE(base.eval);
    EXPECT_DOUBLE_EQ(*base.eval->compression_rate, 0.0);
    EXPECT_DOUBLE_EQ(base.eval->accuracy, 1.0);

    auto cfg = f.config("c3ot", "c3ot");
    cfg["baseline_manifest"] = f.dir / "runs/long";
    const auto m = run_experiment(ExperimentConfig::from_json(cfg));
    double total = 0, kept = 0;
    for (const auto& s : f.test.samples) {
        const auto n = static_cast<double>(text::word_count(s.rationale_long));
        total += n;
        kept += std::round(n * 0.45);
    }
    EXPECT_FALSE(m.eval->baseline_is_proxy);
    EXPECT_NEAR(*m.eval->compression_rate, 1.0 - kept / total, 1e-12);
    // Difficulties (i+0.5)/12 at or below the free-compression threshold 0.85.
    EXPECT_DOUBLE_EQ(m.eval->accuracy, 10.0 / 12.0);

    auto proxy = f.config("c3ot", "proxy");
    EXPECT_TRUE(run_experiment(ExperimentConfig::from_json(proxy)).eval->baseline_is_proxy);

    auto wrong = f.config("c3ot", "wrong");
    wrong["baseline_manifest"] = f.dir / "runs/c3ot";
    EXPECT_THROW(run_experiment(ExperimentConfig::from_json(wrong)), StageError);
}

TEST(Run, AdaptiveCompressesMoreThanTwoClass) {
    ExperimentFixture f(30, 30);
    const auto two = run_experiment(ExperimentConfig::from_json(f.config("c3ot", "two")));
    const auto adapt = run_experiment(ExperimentConfig::from_json(f.config("c3ot_adapt", "adapt")));
    EXPECT_GT(*adapt.eval->compression_rate, *two.eval->compression_rate);
    const auto sel = load_state(f.dir / "runs/adapt/artifacts/selection.json");
    EXPECT_EQ(sel.accepted.size(), 30u);
}

TEST(Run, RerunSkipsStagesAndWarmCacheMakesNoCalls) {
    ExperimentFixture f(12, 10);
    const auto cfg = f.config("c3ot", "first");
    const auto first = run_experiment(ExperimentConfig::from_json(cfg));
    EXPECT_GT(first.completion_calls(), 0);

    const auto again = run_experiment(ExperimentConfig::from_json(cfg));
    for (const auto& s : again.stages) EXPECT_EQ(s.status, "skipped") << s.name;
    EXPECT_EQ(again.completion_calls(), 0);
    EXPECT_EQ(again.artifacts, first.artifacts);

    const auto fresh = run_experiment(ExperimentConfig::from_json(f.config("c3ot", "second")));
    for (const auto& s : fresh.stages) EXPECT_EQ(s.status, "ok") << s.name;
    EXPECT_EQ(fresh.completion_calls(), 0);
    EXPECT_EQ(fresh.artifacts, first.artifacts);
    EXPECT_DOUBLE_EQ(stage_of(fresh, "infer").to_json().at("backend").at("cache_hit_rate").get<double>(), 1.0);
}

TEST(Run, ChangedSeedRerunsOnlyDownstreamStages) {
    ExperimentFixture f(8, 6);
    auto cfg = f.config("c3ot", "run");
    run_experiment(ExperimentConfig::from_json(cfg));
    cfg["seeds"]["shuffle"] = 4;
    const auto m = run_experiment(ExperimentConfig::from_json(cfg));
    EXPECT_EQ(stage_of(m, "ingest").status, "skipped");
    EXPECT_EQ(stage_of(m, "compress").status, "skipped");
    EXPECT_EQ(stage_of(m, "condition").status, "ok");
    EXPECT_EQ(stage_of(m, "train").status, "ok");
}

TEST(Run, TamperedOutputIsRegenerated) {
    ExperimentFixture f(6, 4);
    const auto cfg = f.config("c3ot", "run");
    const auto first = run_experiment(ExperimentConfig::from_json(cfg));
    std::ofstream(f.dir / "runs/run/artifacts/generations.jsonl", std::ios::app) << "\n";
    const auto m = run_experiment(ExperimentConfig::from_json(cfg));
    EXPECT_EQ(stage_of(m, "infer").status, "ok");
    EXPECT_EQ(m.artifacts.at("generations.jsonl"), first.artifacts.at("generations.jsonl"));
}

TEST(Run, FailureIsRecordedInTheManifest) {
    ExperimentFixture f(6, 4);
    auto cfg = f.config("c3ot", "run");
    cfg["trainer"] = {{"kind", "mock"}};  // trains, but cannot answer unknown prompts
    try {
        run_experiment(ExperimentConfig::from_json(cfg));
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "infer");
    }
    const auto m = RunManifest::load(f.dir / "runs/run");
    EXPECT_EQ(m.status, "failed");
    EXPECT_EQ(stage_of(m, "infer").status, "failed");
    EXPECT_FALSE(stage_of(m, "infer").error.empty());
    EXPECT_FALSE(m.eval);
}

TEST(Run, CredentialsAreNotRecorded) {
    ExperimentFixture f(4, 2);
    auto cfg = f.config("c3ot", "run");
    cfg["compressor"]["api_key"] = "sk-secret";
    run_experiment(ExperimentConfig::from_json(cfg));
    EXPECT_EQ(text::read_file(f.dir / "runs/run/manifest.json").find("sk-secret"), std::string::npos);
}

TEST(Run, StrategyQaResplit) {
    TempDir tmp;
    const nlohmann::json cfg = {{"family", "strategyqa"},
                                {"method", "long_cot"},
                                {"train", data("strategyqa_train.json")},
                                {"strategyqa_split", {{"train_size", 2}, {"seed", 1}}},
                                {"trainer", {{"kind", "oracle"}, {"oracle", {{"difficulty", nlohmann::json::object()}, {"thresholds", {{"original", 1.0}}}}}}},
                                {"run_dir", tmp.path()}};
    const auto m = run_experiment(ExperimentConfig::from_json(cfg));
    EXPECT_EQ(m.eval->n, 1u);
    EXPECT_EQ(read_corpus(tmp / "artifacts/corpus.train.jsonl", Split::train).size(), 2u);
}

TEST(Report, TableFormatting) {
    Corpus gold{Family::gsm8k, Split::test, {natalia()}};
    auto expanded = accuracy(gold, {{natalia().id, words(41017) + "\n#### 72"}});
    expanded.set_baseline(10000, false);
    auto plain = accuracy(gold, {{natalia().id, "#### 5"}});
    const auto r = report({manifest_with(Method::c3ot_expansion, expanded), manifest_with(Method::short_cot, plain),
                           manifest_with(Method::c3ot, std::nullopt)});
    EXPECT_EQ(r.table,
              "Method          Acc (%)  Compression Rate (%)\n"
              "--------------  -------  --------------------\n"
              "c3ot_expansion   100.00               -310.17\n"
              "short_cot          0.00                   n/a\n"
              "c3ot                n/a                   n/a\n");
    EXPECT_EQ(r.json.at("rows").at(0).at("compression_rate_pct"), "-310.17");
    EXPECT_THROW(report({manifest_with(Method::c3ot, plain), manifest_with(Method::c3ot, plain, Family::ecqa)}),
                 PreconditionError);
    EXPECT_THROW(report({}), PreconditionError);
}

TEST(Report, RecomputesFromPerSampleRecords) {
    Corpus gold{Family::gsm8k, Split::test, {natalia()}};
    auto e = accuracy(gold, {{natalia().id, "a b c d e\n#### 72"}});
    e.set_baseline(10, false);
    e.accuracy = 0.0;  // stale aggregate
    e.compression_rate = 0.9;
    const auto r = report({manifest_with(Method::c3ot, e)});
    EXPECT_EQ(r.json.at("rows").at(0).at("accuracy_pct"), "100.00");
    EXPECT_EQ(r.json.at("rows").at(0).at("compression_rate_pct"), "50.00");
}

TEST(Run, EmitsOneLogLinePerStage) {
    ExperimentFixture f(4, 2);
    std::vector<nlohmann::ordered_json> lines;
    const auto m = run_experiment(ExperimentConfig::from_json(f.config("c3ot", "run")),
                                  [&](const nlohmann::ordered_json& l) { lines.push_back(l); });
    ASSERT_EQ(lines.size(), m.stages.size());
    EXPECT_EQ(lines.front().at("name"), "ingest");
    EXPECT_EQ(lines.back().at("name"), "evaluate");
    EXPECT_EQ(lines.back().at("run"), "c3ot");
}

TEST(Config, ShippedConfigsValidate) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(fs::path(C3OT_TEST_SOURCE_DIR) / ".." / "configs")) {
        if (e.path().extension() != ".json") continue;
        EXPECT_NO_THROW(ExperimentConfig::load(e.path().string())) << e.path();
        ++n;
    }
    EXPECT_GE(n, 4u);
}
