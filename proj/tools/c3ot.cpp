#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "c3ot/c3ot.hpp"

namespace fs = std::filesystem;
using namespace c3ot;

namespace {

// A backend argument is either a JSON spec file or a bare kind ("reference").
nlohmann::json backend_spec(const std::string& arg) {
    if (fs::is_regular_file(arg)) return nlohmann::json::parse(text::read_file(arg));
    return nlohmann::json{{"kind", arg}};
}

BackendOptions options_for(const std::optional<std::string>& cache_dir, int parallel) {
    BackendOptions o;
    o.cache = std::make_shared<CompletionCache>(cache_dir ? std::optional<fs::path>(*cache_dir) : std::nullopt);
    o.max_parallel = parallel;
    return o;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::string spaced = csv;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::vector<std::uint64_t> out;
    for (auto part : text::split_words(spaced)) {
        try {
            out.push_back(std::stoull(std::string(part)));
        } catch (const std::exception&) {
            throw ConfigError("not an integer list: " + csv);
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditioned compressed chain-of-thought toolkit"};
    app.require_subcommand(1);

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Convert a native dataset file into the canonical corpus format");
    std::string family, split = "train", in_path, out_path;
    std::optional<std::string> test_out;
    std::size_t train_size = 2000;
    std::uint64_t split_seed = 0;
    ingest_cmd->add_option("--family", family, "gsm8k | mathqa | ecqa | strategyqa")->required();
    ingest_cmd->add_option("--split", split, "train | test");
    ingest_cmd->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--out", out_path)->required();
    ingest_cmd->add_option("--test-out", test_out, "Also split off a test corpus (StrategyQA)");
    ingest_cmd->add_option("--train-size", train_size);
    ingest_cmd->add_option("--split-seed", split_seed);

    // compress
    auto* compress_cmd = app.add_subcommand("compress", "Produce rationale variants for a corpus");
    std::string corpus_path, level_name = "short", backend_arg = "reference", variants_out;
    std::optional<int> budget_rate;
    std::optional<std::string> cache_dir;
    int jobs = 1;
    compress_cmd->add_option("--in", corpus_path, "Canonical corpus")->required()->check(CLI::ExistingFile);
    compress_cmd->add_option("--level", level_name, "original | short | expanded | nocot | short@N");
    compress_cmd->add_option("--budget-rate", budget_rate, "Word-budgeted compression rate (50-100)");
    compress_cmd->add_option("--backend", backend_arg, "Backend spec file or kind");
    compress_cmd->add_option("--jobs", jobs);
    compress_cmd->add_option("--cache", cache_dir);
    compress_cmd->add_option("--out", variants_out)->required();

    // condition
    auto* condition_cmd = app.add_subcommand("condition", "Build a conditioned training set");
    std::string mode, variants_in, dataset_out;
    std::optional<std::string> selection_in;
    std::string mixed_levels = "1,2,3,4,5,6";
    std::uint64_t seed = 0;
    condition_cmd->add_option("--mode", mode)->required()->check(CLI::IsMember({"two-class", "mixed", "adaptive"}));
    condition_cmd->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
    condition_cmd->add_option("--variants", variants_in)->check(CLI::ExistingFile);
    condition_cmd->add_option("--selection", selection_in, "Selection state (adaptive)")->check(CLI::ExistingFile);
    condition_cmd->add_option("--levels", mixed_levels, "Short levels for mixed mode");
    condition_cmd->add_option("--seed", seed);
    condition_cmd->add_option("--out", dataset_out)->required();

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "Run adaptive per-sample rate selection");
    std::string ladder_csv = "nocot,short@90,short@80,short@70,short@60,short@50,original", seeds_csv = "1,2,3", workdir = "probe", state_out;
    std::size_t folds = 5;
    bool resume = false;
    adapt_cmd->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
    adapt_cmd->add_option("--variants", variants_in)->required()->check(CLI::ExistingFile);
    adapt_cmd->add_option("--trainer", backend_arg, "Backend spec file")->required();
    adapt_cmd->add_option("--ladder", ladder_csv);
    adapt_cmd->add_option("--seeds", seeds_csv);
    adapt_cmd->add_option("--folds", folds);
    adapt_cmd->add_option("--workdir", workdir);
    adapt_cmd->add_option("--jobs", jobs);
    adapt_cmd->add_option("--cache", cache_dir);
    adapt_cmd->add_flag("--resume", resume, "Continue from the checkpoint in the work directory");
    adapt_cmd->add_option("--out", state_out)->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "Run an experiment end to end");
    std::string config_path;
    run_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

    // report
    auto* report_cmd = app.add_subcommand("report", "Render a results table from run manifests");
    std::vector<std::string> runs;
    std::optional<std::string> json_out;
    report_cmd->add_option("--runs", runs, "Run directories or manifest files")->required();
    report_cmd->add_option("--json", json_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest_cmd) {
            const Family f = parse_family(family);
            Corpus corpus = ingest(in_path, f, parse_split(split));
            if (test_out) {
                auto [train, test] = split_strategyqa(corpus, train_size, split_seed);
                write_corpus(train, out_path);
                write_corpus(test, *test_out);
                std::cout << "train " << train.size() << "  test " << test.size() << "\n";
            } else {
                write_corpus(corpus, out_path);
                std::cout << corpus.size() << " samples\n";
            }
        } else if (*compress_cmd) {
            const auto corpus = read_corpus(corpus_path, Split::train);
            const auto level = budget_rate ? CompressionLevel::budgeted(*budget_rate) : CompressionLevel::parse(level_name);
            const auto handle = make_backend(backend_spec(backend_arg), corpus.samples, options_for(cache_dir, jobs));
            VariantTable table;
            if (fs::exists(variants_out)) table = read_variants(variants_out);
            add_variants(table, compress_all(corpus, level, handle, {}, jobs));
            write_variants(variants_out, table);
            const auto s = handle.stats();
            std::cout << corpus.size() << " variants at " << level.name() << "  calls " << s.completion_calls
                      << "  cache hits " << s.cache_hits << "\n";
        } else if (*condition_cmd) {
            const auto corpus = read_corpus(corpus_path, Split::train);
            const VariantTable variants = variants_in.empty() ? VariantTable{} : read_variants(variants_in);
            ConditionedDataset ds;
            if (mode == "two-class") {
                std::map<std::string, RationaleVariant> shorts;
                for (const auto& [key, v] : variants)
                    if (key.second == CompressionLevel::short_free()) shorts.emplace(key.first, v);
                ds = build_two_class(corpus, shorts, seed);
            } else if (mode == "mixed") {
                std::vector<int> ks;
                for (auto s : parse_seeds(mixed_levels)) ks.push_back(static_cast<int>(s));
                ds = build_mixed(corpus, variants, ks, seed);
            } else {
                if (!selection_in) throw ConfigError("adaptive mode requires --selection");
                ds = build_adaptive(corpus, load_state(*selection_in).assignment(), seed);
            }
            std::cout << ds.records.size() << " records  sha256 " << write_dataset(ds, dataset_out) << "\n";
        } else if (*adapt_cmd) {
            const auto corpus = read_corpus(corpus_path, Split::train);
            const auto trainer = make_backend(backend_spec(backend_arg), corpus.samples, options_for(cache_dir, jobs));
            WaterfallOptions w;
            w.probe.seeds = parse_seeds(seeds_csv);
            w.probe.folds = folds;
            w.probe.workdir = workdir;
            w.probe.jobs = jobs;
            w.checkpoint = fs::path(workdir) / "selection.checkpoint.json";
            w.resume = resume;
            const auto state = run_waterfall(corpus, RateLadder::parse(ladder_csv), read_variants(variants_in), trainer, w);
            save_state(state, state_out);
            for (const auto& [level, n] : state.histogram()) std::cout << level << "\t" << n << "\n";
        } else if (*run_cmd) {
            const auto manifest = run_experiment(ExperimentConfig::load(config_path), [](const nlohmann::ordered_json& line) {
                std::cerr << line.dump() << std::endl;
            });
            std::cout << report({manifest}).table;
        } else if (*report_cmd) {
            std::vector<RunManifest> manifests;
            for (const auto& r : runs) manifests.push_back(RunManifest::load(r));
            const auto r = report(manifests);
            std::cout << r.table;
            if (json_out) {
                std::ofstream out(*json_out);
                out << r.json.dump(2) << "\n";
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
