#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/adaptive.hpp"
#include "c3ot/backend.hpp"
#include "c3ot/backend_http.hpp"
#include "c3ot/compressor.hpp"
#include "c3ot/conditioner.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/error.hpp"
#include "c3ot/metrics.hpp"
#include "c3ot/oracle.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

inline constexpr std::string_view kToolkitVersion = "0.1.0";
inline constexpr std::string_view kManifestSchema = "c3ot-run/1";

enum class Method { short_cot, long_cot, c3ot, c3ot_mixed, c3ot_expansion, c3ot_adapt };

inline std::string_view to_string(Method m) {
    switch (m) {
    case Method::short_cot: return "short_cot";
    case Method::long_cot: return "long_cot";
    case Method::c3ot: return "c3ot";
    case Method::c3ot_mixed: return "c3ot_mixed";
    case Method::c3ot_expansion: return "c3ot_expansion";
    case Method::c3ot_adapt: return "c3ot_adapt";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (Method m : {Method::short_cot, Method::long_cot, Method::c3ot, Method::c3ot_mixed,
                     Method::c3ot_expansion, Method::c3ot_adapt})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown method: " + std::string(s));
}

struct DataSource {
    std::string path;
    bool canonical = false;
};

struct ExperimentConfig {
    std::string name;
    Family family = Family::gsm8k;
    DataSource train;
    std::optional<DataSource> test;
    std::optional<std::pair<std::size_t, std::uint64_t>> strategyqa_split;  // train size, seed
    Method method = Method::c3ot;
    nlohmann::json compressor;
    nlohmann::json trainer;
    std::uint64_t shuffle_seed = 0;
    std::vector<std::uint64_t> probe_seeds = {1, 2, 3};
    std::size_t folds = 5;
    std::optional<RateLadder> ladder;
    std::optional<Condition> inference_condition;
    LengthUnit length_unit = LengthUnit::words;
    std::optional<std::string> baseline_manifest;
    std::string run_dir;
    std::optional<std::string> cache_dir;
    int jobs = 1;
    CompressPolicy compress_policy;
    nlohmann::ordered_json hyperparams = nlohmann::ordered_json::object();
    nlohmann::json raw;

    /// Parses and validates. Relative paths resolve against `base_dir`.
    static ExperimentConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
        ExperimentConfig c;
        c.raw = j;
        auto resolve = [&](const std::string& p) {
            fs::path path(p);
            return (path.is_relative() && !base_dir.empty() ? base_dir / path : path).string();
        };
        auto source = [&](const nlohmann::json& s) {
            if (s.is_string()) return DataSource{resolve(s.get<std::string>()), false};
            return DataSource{resolve(s.at("path").get<std::string>()), s.value("format", "native") == "canonical"};
        };
        try {
            c.name = j.value("name", "experiment");
            c.family = parse_family(j.at("family").get<std::string>());
            c.method = parse_method(j.at("method").get<std::string>());
            c.train = source(j.at("train"));
            if (j.contains("test")) c.test = source(j.at("test"));
            if (j.contains("strategyqa_split")) {
                const auto& s = j.at("strategyqa_split");
                c.strategyqa_split = std::make_pair(s.at("train_size").get<std::size_t>(), s.value("seed", std::uint64_t{0}));
            }
            c.compressor = j.value("compressor", nlohmann::json::object());
            c.trainer = j.at("trainer");
            if (j.contains("seeds")) {
                c.shuffle_seed = j.at("seeds").value("shuffle", c.shuffle_seed);
                if (j.at("seeds").contains("probe"))
                    c.probe_seeds = j.at("seeds").at("probe").get<std::vector<std::uint64_t>>();
            }
            c.folds = j.value("folds", c.folds);
            if (j.contains("ladder")) {
                RateLadder ladder;
                for (const auto& l : j.at("ladder")) ladder.levels.push_back(CompressionLevel::parse(l.get<std::string>()));
                c.ladder = ladder.validated();
            }
            if (j.contains("inference_condition"))
                c.inference_condition = Condition::parse(j.at("inference_condition").get<std::string>());
            c.length_unit = parse_length_unit(j.value("length_unit", "whitespace-words"));
            if (j.contains("baseline_manifest")) c.baseline_manifest = resolve(j.at("baseline_manifest").get<std::string>());
            c.run_dir = resolve(j.at("run_dir").get<std::string>());
            if (j.contains("cache_dir")) c.cache_dir = resolve(j.at("cache_dir").get<std::string>());
            c.jobs = j.value("jobs", 1);
            if (j.contains("compress_policy")) {
                c.compress_policy.max_attempts = j.at("compress_policy").value("max_attempts", c.compress_policy.max_attempts);
                c.compress_policy.budget_slack = j.at("compress_policy").value("budget_slack", c.compress_policy.budget_slack);
            }
            if (j.contains("hyperparams")) c.hyperparams = nlohmann::ordered_json::parse(j.at("hyperparams").dump());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("invalid experiment config: ") + e.what());
        }
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text::read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        return from_json(j, fs::path(path).parent_path());
    }

    void validate() const {
        if ((method == Method::c3ot_mixed || method == Method::c3ot_adapt) && !ladder)
            throw ConfigError(std::string(to_string(method)) + " requires a ladder");
        if (!test && !(family == Family::strategyqa && strategyqa_split))
            throw ConfigError("a test split is required (or strategyqa_split for StrategyQA)");
        if (length_unit == LengthUnit::backend_tokens)
            throw ConfigError("backend-reported token lengths are not available from the configured backends");
        if (method != Method::long_cot && compressor.empty())
            throw ConfigError(std::string(to_string(method)) + " requires a compressor backend");
        if (probe_seeds.empty()) throw ConfigError("at least one probe seed is required");
        if (method == Method::c3ot_mixed) {
            for (const auto& l : ladder->probed())
                if (l.kind() != CompressionLevel::Kind::short_budgeted)
                    throw ConfigError("mixed ladder levels must be budgeted rates");
        }
        if (run_dir.empty()) throw ConfigError("run_dir is required");
    }

    Condition inference() const {
        if (inference_condition) return *inference_condition;
        switch (method) {
        case Method::long_cot:
        case Method::short_cot: return Condition::none();
        case Method::c3ot_mixed: return Condition::short_level(1);
        default: return Condition::short_cot();
        }
    }

    std::string target_level() const {
        switch (method) {
        case Method::long_cot: return "original";
        case Method::c3ot_adapt: return "adaptive";
        default: return "short";
        }
    }
};

// ---------------------------------------------------------------------------

/// Builds a backend handle from a JSON spec:
/// {"kind": mock|reference|oracle|http|subprocess, "model", "endpoint",
///  "command", "train_command", "api_key_env", "decoding", "retry", ...}.
/// Credentials come from the environment variable named by api_key_env
/// (default C3OT_API_KEY), overriding any "api_key" in the file.
inline BackendHandle make_backend(const nlohmann::json& spec, const std::vector<Sample>& known_samples,
                                  BackendOptions options) {
    const std::string kind = spec.value("kind", "");
    if (spec.contains("retry")) {
        const auto& r = spec.at("retry");
        options.retry.max_attempts = r.value("max_attempts", options.retry.max_attempts);
        options.retry.initial_backoff = std::chrono::milliseconds(r.value("initial_backoff_ms", options.retry.initial_backoff.count()));
        options.retry.multiplier = r.value("multiplier", options.retry.multiplier);
        options.retry.max_backoff = std::chrono::milliseconds(r.value("max_backoff_ms", options.retry.max_backoff.count()));
    }
    options.max_parallel = spec.value("max_parallel", options.max_parallel);
    options.rate_per_second = spec.value("rate_per_second", options.rate_per_second);
    options.burst = spec.value("burst", options.burst);
    const auto params = spec.contains("decoding") ? DecodingParams::from_json(spec.at("decoding")) : DecodingParams{};
    const std::string model = spec.value("model", kind + "-model");

    if (kind == "reference") {
        return BackendHandle(std::make_shared<ReferenceCompressorTransport>(spec.value("free_ratio", 0.45)),
                             model, {Capability::complete}, params, std::move(options));
    }
    if (kind == "mock") {
        std::map<std::string, std::string> fixtures;
        if (spec.contains("fixtures"))
            fixtures = nlohmann::json::parse(text::read_file(spec.at("fixtures").get<std::string>()))
                           .get<std::map<std::string, std::string>>();
        std::optional<std::string> fallback;
        if (spec.contains("fallback")) fallback = spec.at("fallback").get<std::string>();
        return BackendHandle(std::make_shared<MockTransport>(std::move(fixtures), fallback), model,
                             {Capability::complete, Capability::train}, params, std::move(options));
    }
    if (kind == "oracle") {
        const auto& o = spec.at("oracle");
        OracleSettings s;
        if (o.contains("difficulty_file"))
            s.difficulty = nlohmann::json::parse(text::read_file(o.at("difficulty_file").get<std::string>()))
                               .get<std::map<std::string, double>>();
        else
            s.difficulty = o.at("difficulty").get<std::map<std::string, double>>();
        for (const auto& [name, t] : o.at("thresholds").items())
            s.thresholds[CompressionLevel::parse(name)] = t.get<double>();
        s.noise_seed = o.value("noise_seed", std::uint64_t{0});
        s.noise_rate = o.value("noise_rate", 0.0);
        s.free_ratio = o.value("free_ratio", s.free_ratio);
        s.expanded_ratio = o.value("expanded_ratio", s.expanded_ratio);
        auto h = mock_oracle(known_samples, std::move(s), std::move(options));
        return spec.contains("model") ? h.with_model(model).with_params(params) : h.with_params(params);
    }
    std::string api_key = spec.value("api_key", "");
    if (const char* env = std::getenv(spec.value("api_key_env", "C3OT_API_KEY").c_str()); env && *env)
        api_key = env;
    if (kind == "http") {
        HttpTransport::Options ho;
        ho.api_key = api_key;
        ho.poll_interval = std::chrono::milliseconds(spec.value("poll_interval_ms", 2000));
        ho.timeout = std::chrono::seconds(spec.value("timeout_s", 600));
        return BackendHandle(std::make_shared<HttpTransport>(spec.at("endpoint").get<std::string>(), ho), model,
                             {Capability::complete, Capability::train}, params, std::move(options));
    }
    if (kind == "subprocess") {
        std::set<Capability> caps;
        if (spec.contains("command")) caps.insert(Capability::complete);
        if (spec.contains("train_command")) caps.insert(Capability::train);
        return BackendHandle(std::make_shared<SubprocessTransport>(spec.value("command", ""), spec.value("train_command", "")),
                             model, caps, params, std::move(options));
    }
    throw ConfigError("unknown backend kind: '" + kind + "'");
}

// ---------------------------------------------------------------------------

struct StageRecord {
    std::string name;
    std::string status;  // ok | skipped | failed
    std::string input_digest;
    std::string output_digest;
    BackendStats stats;
    std::string error;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["name"] = name;
        j["status"] = status;
        j["input_digest"] = input_digest;
        j["output_digest"] = output_digest;
        const long lookups = stats.cache_hits + stats.cache_misses;
        j["backend"] = {{"completion_calls", stats.completion_calls},
                        {"cache_hits", stats.cache_hits},
                        {"cache_misses", stats.cache_misses},
                        {"cache_hit_rate", lookups ? static_cast<double>(stats.cache_hits) / static_cast<double>(lookups) : 1.0},
                        {"train_calls", stats.train_calls},
                        {"train_memo_hits", stats.train_memo_hits}};
        if (!error.empty()) j["error"] = error;
        return j;
    }
};

struct RunManifest {
    std::string name;
    Family family = Family::gsm8k;
    Method method = Method::c3ot;
    LengthUnit length_unit = LengthUnit::words;
    nlohmann::ordered_json config;
    nlohmann::ordered_json backends = nlohmann::ordered_json::object();
    std::string model_ref;
    std::vector<StageRecord> stages;
    std::map<std::string, std::string> artifacts;  // name -> sha256
    std::optional<EvalResult> eval;
    std::string status = "ok";

    long completion_calls() const {
        long n = 0;
        for (const auto& s : stages) n += s.stats.completion_calls;
        return n;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["schema"] = kManifestSchema;
        j["toolkit_version"] = kToolkitVersion;
        j["name"] = name;
        j["family"] = to_string(family);
        j["method"] = to_string(method);
        j["length_unit"] = to_string(length_unit);
        j["status"] = status;
        j["templates"] = {{std::string(kCompressTemplate.name), kCompressTemplate.version},
                          {std::string(kBudgetedCompressTemplate.name), kBudgetedCompressTemplate.version},
                          {std::string(kExpandTemplate.name), kExpandTemplate.version}};
        nlohmann::ordered_json rates = nlohmann::ordered_json::object();
        for (int k = 1; k <= 6; ++k) rates[std::to_string(k)] = rate_for_short_level(k);
        j["short_level_rates"] = rates;
        j["config"] = config;
        j["backends"] = backends;
        j["model_ref"] = model_ref;
        auto st = nlohmann::ordered_json::array();
        for (const auto& s : stages) st.push_back(s.to_json());
        j["stages"] = st;
        j["artifacts"] = artifacts;
        j["eval"] = eval ? eval->to_json() : nlohmann::ordered_json(nullptr);
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.name = j.value("name", "");
        m.family = parse_family(j.at("family").get<std::string>());
        m.method = parse_method(j.at("method").get<std::string>());
        m.length_unit = parse_length_unit(j.at("length_unit").get<std::string>());
        m.status = j.value("status", "ok");
        m.config = nlohmann::ordered_json::parse(j.at("config").dump());
        m.backends = nlohmann::ordered_json::parse(j.at("backends").dump());
        m.model_ref = j.value("model_ref", "");
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.status = s.at("status").get<std::string>();
            r.input_digest = s.value("input_digest", "");
            r.output_digest = s.value("output_digest", "");
            const auto& b = s.at("backend");
            r.stats = {b.value("completion_calls", 0L), b.value("cache_hits", 0L), b.value("cache_misses", 0L),
                       b.value("train_calls", 0L), b.value("train_memo_hits", 0L)};
            r.error = s.value("error", "");
            m.stages.push_back(r);
        }
        m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
        if (!j.at("eval").is_null()) m.eval = EvalResult::from_json(j.at("eval"));
        return m;
    }

    static RunManifest load(const std::string& path) {
        auto p = fs::path(path);
        if (fs::is_directory(p)) p /= "manifest.json";
        return from_json(nlohmann::json::parse(text::read_file(p.string())));
    }
};

class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json redacted(const nlohmann::json& j) {
    auto out = nlohmann::ordered_json::parse(j.dump());
    for (const char* role : {"compressor", "trainer"})
        if (out.contains(role) && out[role].is_object()) out[role].erase("api_key");
    return out;
}

inline BackendStats diff(const BackendStats& a, const BackendStats& b) {
    return {a.completion_calls - b.completion_calls, a.cache_hits - b.cache_hits,
            a.cache_misses - b.cache_misses, a.train_calls - b.train_calls,
            a.train_memo_hits - b.train_memo_hits};
}

inline BackendStats sum(const BackendStats& a, const BackendStats& b) {
    return {a.completion_calls + b.completion_calls, a.cache_hits + b.cache_hits,
            a.cache_misses + b.cache_misses, a.train_calls + b.train_calls,
            a.train_memo_hits + b.train_memo_hits};
}

inline void write_text(const fs::path& path, const std::string& body) {
    text::ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << body;
}

inline std::map<std::string, std::string> read_generations(const std::string& path) {
    std::map<std::string, std::string> out;
    for_each_record(path, [&](const nlohmann::json& rec, std::size_t) {
        out[rec.at("id").get<std::string>()] = rec.at("generation").get<std::string>();
    });
    return out;
}

} // namespace detail

/// Executes one experiment's stage pipeline and writes manifest.json and the
/// report into the run directory. Stages whose input digest matches the
/// previous run's memo (and whose output is intact) are skipped.
class ExperimentRunner {
public:
    using LogSink = std::function<void(const nlohmann::ordered_json&)>;

    explicit ExperimentRunner(ExperimentConfig config, LogSink log = {})
        : config_(std::move(config)), log_(std::move(log)) {}

    RunManifest run() {
        const fs::path run_dir(config_.run_dir);
        fs::create_directories(run_dir / "artifacts");
        fs::create_directories(run_dir / "stages");
        manifest_ = RunManifest{};
        manifest_.name = config_.name;
        manifest_.family = config_.family;
        manifest_.method = config_.method;
        manifest_.length_unit = config_.length_unit;
        manifest_.config = detail::redacted(config_.raw);

        try {
            execute();
        } catch (const StageError&) {
            manifest_.status = "failed";
            write_manifest();
            throw;
        }
        write_manifest();
        return manifest_;
    }

    const RunManifest& manifest() const { return manifest_; }

private:
    fs::path artifact(const std::string& file) const { return fs::path(config_.run_dir) / "artifacts" / file; }

    BackendStats total_stats() const {
        BackendStats s{};
        if (compressor_) s = detail::sum(s, compressor_->stats());
        if (trainer_) s = detail::sum(s, trainer_->stats());
        return s;
    }

    void record(const StageRecord& rec) {
        manifest_.stages.push_back(rec);
        if (log_) {
            auto line = rec.to_json();
            line["run"] = config_.name;
            log_(line);
        }
    }

    /// Runs `produce` unless the stage memo shows identical inputs and an
    /// intact output file. Returns true when the stage ran.
    bool stage(const std::string& name, const std::string& input_digest, const fs::path& output,
               const std::function<void()>& produce) {
        StageRecord rec{name, "ok", input_digest, {}, {}, {}};
        const auto memo_path = fs::path(config_.run_dir) / "stages" / (name + ".json");
        if (fs::exists(memo_path) && fs::exists(output)) {
            const auto memo = nlohmann::json::parse(text::read_file(memo_path.string()));
            if (memo.value("input_digest", "") == input_digest &&
                memo.value("output_digest", "") == text::file_digest(output.string())) {
                rec.status = "skipped";
                rec.output_digest = memo.at("output_digest").get<std::string>();
                record(rec);
                manifest_.artifacts[output.filename().string()] = rec.output_digest;
                return false;
            }
        }
        const auto before = total_stats();
        try {
            produce();
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.error = e.what();
            rec.stats = detail::diff(total_stats(), before);
            record(rec);
            throw StageError(name, e.what());
        }
        rec.stats = detail::diff(total_stats(), before);
        rec.output_digest = text::file_digest(output.string());
        record(rec);
        manifest_.artifacts[output.filename().string()] = rec.output_digest;
        detail::write_text(memo_path, nlohmann::ordered_json{{"input_digest", input_digest},
                                                             {"output_digest", rec.output_digest}}.dump(2) + "\n");
        return true;
    }

    std::vector<CompressionLevel> compression_levels() const {
        switch (config_.method) {
        case Method::long_cot: return {};
        case Method::short_cot:
        case Method::c3ot: return {CompressionLevel::short_free()};
        case Method::c3ot_expansion: return {CompressionLevel::short_free(), CompressionLevel::expanded()};
        case Method::c3ot_mixed:
        case Method::c3ot_adapt: {
            const auto probed = config_.ladder->probed();
            return {probed.begin(), probed.end()};
        }
        }
        return {};
    }

    void execute() {
        // ingest
        Corpus train_corpus, test_corpus;
        {
            std::string sources = config_.train.path + "|" + (config_.test ? config_.test->path : "");
            std::string in = std::string(to_string(config_.family)) + "\n" + text::file_digest(config_.train.path);
            if (config_.test) in += "\n" + text::file_digest(config_.test->path);
            if (config_.strategyqa_split)
                in += "\nsplit:" + std::to_string(config_.strategyqa_split->first) + ":" + std::to_string(config_.strategyqa_split->second);
            const auto train_path = artifact("corpus.train.jsonl");
            const auto test_path = artifact("corpus.test.jsonl");
            stage("ingest", text::sha256_hex(in), test_path, [&] {
                auto load = [&](const DataSource& src, Split split) {
                    return src.canonical ? read_corpus(src.path, split) : ingest(src.path, config_.family, split);
                };
                Corpus tr = load(config_.train, Split::train);
                Corpus te;
                if (config_.test) {
                    te = load(*config_.test, Split::test);
                } else {
                    auto [a, b] = split_strategyqa(tr, config_.strategyqa_split->first, config_.strategyqa_split->second);
                    tr = std::move(a);
                    te = std::move(b);
                }
                write_corpus(tr, train_path.string());
                write_corpus(te, test_path.string());
            });
            manifest_.artifacts["corpus.train.jsonl"] = text::file_digest(train_path.string());
            train_corpus = read_corpus(train_path.string(), Split::train);
            test_corpus = read_corpus(test_path.string(), Split::test);
        }

        std::vector<Sample> known = train_corpus.samples;
        known.insert(known.end(), test_corpus.samples.begin(), test_corpus.samples.end());
        BackendOptions base;
        if (config_.cache_dir) base.cache = std::make_shared<CompletionCache>(fs::path(*config_.cache_dir));
        else base.cache = std::make_shared<CompletionCache>(fs::path(config_.run_dir) / "cache");
        if (config_.method != Method::long_cot) {
            auto o = base;
            o.transcript = fs::path(config_.run_dir) / "transcripts" / "compressor.jsonl";
            compressor_ = make_backend(config_.compressor, known, o);
            manifest_.backends["compressor"] = compressor_->identity();
        }
        {
            auto o = base;
            o.transcript = fs::path(config_.run_dir) / "transcripts" / "trainer.jsonl";
            trainer_ = make_backend(config_.trainer, known, o);
            manifest_.backends["trainer"] = trainer_->identity();
        }
        if (!trainer_->can(Capability::train) || !trainer_->can(Capability::complete))
            throw StageError("configure", "trainer backend needs train and complete capabilities");
        const auto train_digest = manifest_.artifacts.at("corpus.train.jsonl");
        const auto test_digest = manifest_.artifacts.at("corpus.test.jsonl");

        // compress
        VariantTable variants;
        const auto levels = compression_levels();
        const auto variants_path = artifact("variants.jsonl");
        if (!levels.empty()) {
            std::string in = train_digest + "\n" + compressor_->identity();
            for (const auto& l : levels) in += "\n" + l.name();
            in += "\n" + std::to_string(config_.compress_policy.max_attempts) + "/" + std::to_string(config_.compress_policy.budget_slack);
            stage("compress", text::sha256_hex(in), variants_path, [&] {
                VariantTable table;
                for (const auto& level : levels)
                    add_variants(table, compress_all(train_corpus, level, *compressor_, config_.compress_policy, config_.jobs));
                write_variants(variants_path.string(), table);
            });
            variants = read_variants(variants_path.string());
        }

        // select (adaptive only)
        std::optional<SelectionState> selection;
        if (config_.method == Method::c3ot_adapt) {
            const auto selection_path = artifact("selection.json");
            std::string in = train_digest + "\n" + manifest_.artifacts.at("variants.jsonl") + "\n" + trainer_->identity();
            for (const auto& l : config_.ladder->levels) in += "\n" + l.name();
            for (auto s : config_.probe_seeds) in += "\nseed " + std::to_string(s);
            in += "\nfolds " + std::to_string(config_.folds);
            stage("select", text::sha256_hex(in), selection_path, [&] {
                WaterfallOptions w;
                w.probe.seeds = config_.probe_seeds;
                w.probe.folds = config_.folds;
                w.probe.workdir = fs::path(config_.run_dir) / "probe";
                w.probe.jobs = config_.jobs;
                w.probe.hyperparams = config_.hyperparams;
                w.checkpoint = fs::path(config_.run_dir) / "probe" / "selection.checkpoint.json";
                w.resume = true;
                const auto state = run_waterfall(train_corpus, *config_.ladder, variants, *trainer_, w);
                detail::write_text(selection_path, state.to_json().dump(2) + "\n");
            });
            selection = load_state(selection_path);
        }

        // condition
        const auto dataset_path = artifact("train.jsonl");
        {
            std::string in = std::string(to_string(config_.method)) + "\n" + train_digest + "\nseed " +
                             std::to_string(config_.shuffle_seed);
            if (manifest_.artifacts.count("variants.jsonl")) in += "\n" + manifest_.artifacts.at("variants.jsonl");
            if (manifest_.artifacts.count("selection.json")) in += "\n" + manifest_.artifacts.at("selection.json");
            stage("condition", text::sha256_hex(in), dataset_path, [&] {
                write_dataset(build_training_set(train_corpus, variants, selection), dataset_path.string());
            });
        }

        // train
        const auto model_path = artifact("model.json");
        {
            auto hp = config_.hyperparams;
            hp[kTargetLevelKey] = config_.target_level();
            const std::string in = manifest_.artifacts.at("train.jsonl") + "\n" + trainer_->identity() + "\n" + hp.dump();
            stage("train", text::sha256_hex(in), model_path, [&] {
                TrainJob job;
                job.dataset_path = dataset_path.string();
                job.hyperparams = hp;
                trainer_->train(job);
                nlohmann::ordered_json rec;
                rec["dataset_path"] = fs::path(job.dataset_path).filename().string();
                rec["hyperparams"] = job.hyperparams;
                rec["output_model_ref"] = job.output_model_ref;
                detail::write_text(model_path, rec.dump(2) + "\n");
            });
            manifest_.model_ref = nlohmann::json::parse(text::read_file(model_path.string())).at("output_model_ref").get<std::string>();
        }
        const auto model = trainer_->with_model(manifest_.model_ref);
        manifest_.backends["model"] = model.identity();

        // infer
        const auto generations_path = artifact("generations.jsonl");
        const Condition condition = config_.inference();
        {
            const std::string in = model.identity() + "\n" + test_digest + "\n" + condition.name();
            stage("infer", text::sha256_hex(in), generations_path, [&] {
                std::vector<std::string> outputs(test_corpus.size());
                std::vector<std::exception_ptr> errors(test_corpus.size());
                std::atomic<std::size_t> next{0};
                auto worker = [&] {
                    for (std::size_t i = next++; i < test_corpus.size(); i = next++) {
                        try {
                            outputs[i] = model.complete(render_inference_input(test_corpus.samples[i].instruction, condition));
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                };
                std::vector<std::thread> pool;
                for (int t = 1; t < std::max(1, config_.jobs); ++t) pool.emplace_back(worker);
                worker();
                for (auto& t : pool) t.join();
                for (auto& e : errors)
                    if (e) std::rethrow_exception(e);
                std::string body;
                for (std::size_t i = 0; i < outputs.size(); ++i)
                    body += nlohmann::ordered_json{{"id", test_corpus.samples[i].id}, {"generation", outputs[i]}}.dump() + "\n";
                detail::write_text(generations_path, body);
            });
        }

        // evaluate
        const auto eval_path = artifact("eval.json");
        {
            std::optional<std::string> baseline_file;
            if (config_.baseline_manifest) {
                fs::path p(*config_.baseline_manifest);
                if (fs::is_directory(p)) p /= "manifest.json";
                if (!fs::is_regular_file(p)) throw StageError("evaluate", "baseline manifest not found: " + p.string());
                baseline_file = p.string();
            }
            const std::string in = manifest_.artifacts.at("generations.jsonl") + "\n" +
                                   (baseline_file ? text::file_digest(*baseline_file) : "proxy");
            stage("evaluate", text::sha256_hex(in), eval_path, [&] {
                auto result = accuracy(test_corpus, detail::read_generations(generations_path.string()), config_.length_unit);
                if (config_.method == Method::long_cot) {
                    result.set_baseline(result.mean_length(), false);
                } else if (config_.baseline_manifest) {
                    const auto base = RunManifest::load(*baseline_file);
                    if (base.method != Method::long_cot || !base.eval)
                        throw ConfigError("baseline manifest must be a completed long_cot run");
                    if (base.family != config_.family || base.length_unit != config_.length_unit)
                        throw ConfigError("baseline manifest family or length unit differs");
                    result.set_baseline(base.eval->mean_length(), false);
                } else {
                    double total = 0;
                    for (const auto& s : test_corpus.samples) total += measure(s.rationale_long, config_.length_unit).value;
                    result.set_baseline(total / static_cast<double>(test_corpus.size()), true);
                }
                detail::write_text(eval_path, result.to_json().dump(2) + "\n");
            });
            manifest_.eval = EvalResult::from_json(nlohmann::json::parse(text::read_file(eval_path.string())));
        }
        write_report_files();
    }

    ConditionedDataset build_training_set(const Corpus& corpus, const VariantTable& variants,
                                          const std::optional<SelectionState>& selection) const {
        auto at_level = [&](const CompressionLevel& level) {
            std::map<std::string, RationaleVariant> out;
            for (const auto& s : corpus.samples) {
                const auto it = variants.find({s.id, level});
                if (it != variants.end()) out.emplace(s.id, it->second);
            }
            return out;
        };
        switch (config_.method) {
        case Method::long_cot: {
            std::map<std::string, RationaleVariant> originals;
            for (const auto& s : corpus.samples)
                originals.emplace(s.id, RationaleVariant{s.id, CompressionLevel::original(), s.rationale_long, "identity", {}, {}});
            return build_plain(corpus, originals, config_.shuffle_seed);
        }
        case Method::short_cot:
            return build_plain(corpus, at_level(CompressionLevel::short_free()), config_.shuffle_seed);
        case Method::c3ot:
            return build_two_class(corpus, at_level(CompressionLevel::short_free()), config_.shuffle_seed);
        case Method::c3ot_expansion: {
            const auto longs = at_level(CompressionLevel::expanded());
            return build_two_class(corpus, at_level(CompressionLevel::short_free()), config_.shuffle_seed, &longs);
        }
        case Method::c3ot_mixed: {
            std::vector<int> ks;
            for (const auto& l : config_.ladder->probed()) ks.push_back((l.rate() - 40) / 10);
            std::sort(ks.begin(), ks.end());
            return build_mixed(corpus, variants, ks, config_.shuffle_seed);
        }
        case Method::c3ot_adapt:
            return build_adaptive(corpus, selection->assignment(), config_.shuffle_seed);
        }
        throw Error("unreachable");
    }

    void write_report_files() const;

    void write_manifest() const {
        detail::write_text(fs::path(config_.run_dir) / "manifest.json", manifest_.to_json().dump(2) + "\n");
    }

    ExperimentConfig config_;
    LogSink log_;
    RunManifest manifest_;
    std::optional<BackendHandle> compressor_;
    std::optional<BackendHandle> trainer_;
};

inline RunManifest run_experiment(const ExperimentConfig& config, ExperimentRunner::LogSink log = {}) {
    return ExperimentRunner(config, std::move(log)).run();
}

// ---------------------------------------------------------------------------

struct Report {
    std::string table;
    nlohmann::ordered_json json;
};

inline std::string format_percent(double fraction) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
    std::string s(buf);
    if (s == "-0.00") s = "0.00";
    return s;
}

/// Method x (Acc, compression rate) table; aggregates are recomputed from
/// each manifest's per-sample records.
inline Report report(const std::vector<RunManifest>& manifests) {
    if (manifests.empty()) throw PreconditionError("report needs at least one manifest");
    for (const auto& m : manifests) {
        if (m.family != manifests.front().family)
            throw PreconditionError("manifests cover different dataset families");
        if (m.length_unit != manifests.front().length_unit)
            throw PreconditionError("manifests use different length units");
    }
    struct Row { std::string method, acc, rate; };
    std::vector<Row> rows;
    nlohmann::ordered_json j;
    j["family"] = to_string(manifests.front().family);
    j["length_unit"] = to_string(manifests.front().length_unit);
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& m : manifests) {
        Row r{std::string(to_string(m.method)), "n/a", "n/a"};
        nlohmann::ordered_json jr;
        jr["name"] = m.name;
        jr["method"] = to_string(m.method);
        if (m.eval) {
            auto recomputed = EvalResult::from_per_sample(m.eval->per_sample, m.eval->unit);
            if (m.eval->baseline_length) recomputed.set_baseline(*m.eval->baseline_length, m.eval->baseline_is_proxy);
            r.acc = format_percent(recomputed.accuracy);
            if (recomputed.compression_rate) r.rate = format_percent(*recomputed.compression_rate);
            jr["n"] = recomputed.n;
            jr["accuracy"] = recomputed.accuracy;
            jr["compression_rate"] = recomputed.compression_rate ? nlohmann::ordered_json(*recomputed.compression_rate) : nlohmann::ordered_json(nullptr);
            jr["baseline_is_proxy"] = recomputed.baseline_is_proxy;
        }
        jr["accuracy_pct"] = r.acc;
        jr["compression_rate_pct"] = r.rate;
        j["rows"].push_back(jr);
        rows.push_back(std::move(r));
    }
    const std::string h0 = "Method", h1 = "Acc (%)", h2 = "Compression Rate (%)";
    std::size_t w0 = h0.size(), w1 = h1.size(), w2 = h2.size();
    for (const auto& r : rows) {
        w0 = std::max(w0, r.method.size());
        w1 = std::max(w1, r.acc.size());
        w2 = std::max(w2, r.rate.size());
    }
    auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
    auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };
    std::string table = pad_right(h0, w0) + "  " + pad_left(h1, w1) + "  " + pad_left(h2, w2) + "\n";
    table += std::string(w0, '-') + "  " + std::string(w1, '-') + "  " + std::string(w2, '-') + "\n";
    for (const auto& r : rows)
        table += pad_right(r.method, w0) + "  " + pad_left(r.acc, w1) + "  " + pad_left(r.rate, w2) + "\n";
    return {table, j};
}

inline void ExperimentRunner::write_report_files() const {
    const auto r = report({manifest_});
    detail::write_text(fs::path(config_.run_dir) / "report.txt", r.table);
    detail::write_text(fs::path(config_.run_dir) / "report.json", r.json.dump(2) + "\n");
}

} // namespace c3ot
