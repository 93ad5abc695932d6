#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/backend.hpp"
#include "c3ot/compressor.hpp"
#include "c3ot/conditioner.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

/// Levels ordered from most to least compressed; the last one (Original) is
/// the fallback and is never probed.
struct RateLadder {
    std::vector<CompressionLevel> levels;

    static RateLadder standard() {
        return RateLadder{{CompressionLevel::no_cot(), CompressionLevel::budgeted(90),
                           CompressionLevel::budgeted(80), CompressionLevel::budgeted(70),
                           CompressionLevel::budgeted(60), CompressionLevel::budgeted(50),
                           CompressionLevel::original()}}
            .validated();
    }

    /// Comma-separated level names, e.g. "nocot,short@90,original".
    static RateLadder parse(std::string_view csv) {
        RateLadder ladder;
        std::size_t start = 0;
        while (start <= csv.size()) {
            const auto comma = csv.find(',', start);
            const auto item = text::trim(csv.substr(start, comma == std::string_view::npos ? csv.npos : comma - start));
            if (!item.empty()) ladder.levels.push_back(CompressionLevel::parse(item));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return ladder.validated();
    }

    RateLadder validated() const {
        if (levels.size() < 2) throw ConfigError("ladder needs at least one probed level and the fallback");
        if (levels.back() != CompressionLevel::original())
            throw ConfigError("ladder must end with the original level");
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (!levels[i].nominal_rate())
                throw ConfigError("ladder level " + levels[i].name() + " has no nominal rate");
            if (i > 0 && *levels[i].nominal_rate() >= *levels[i - 1].nominal_rate())
                throw ConfigError("ladder rates must strictly decrease");
        }
        return *this;
    }

    std::span<const CompressionLevel> probed() const { return {levels.data(), levels.size() - 1}; }
    const CompressionLevel& fallback() const { return levels.back(); }
};

/// Seeded shuffle, then round-robin into k parts (sizes differ by at most 1).
inline std::vector<std::vector<std::string>> fold_split(std::vector<std::string> ids, std::size_t k,
                                                        std::uint64_t seed) {
    if (k < 2) throw PreconditionError("fold count must be at least 2");
    if (ids.size() < k)
        throw PreconditionError("cannot split " + std::to_string(ids.size()) + " ids into " +
                                std::to_string(k) + " folds");
    text::seeded_shuffle(ids, seed);
    std::vector<std::vector<std::string>> parts(k);
    for (std::size_t i = 0; i < ids.size(); ++i) parts[i % k].push_back(std::move(ids[i]));
    return parts;
}

/// Accepted when correctly predicted in at least one seed's attempt.
inline bool passes(const std::vector<bool>& outcomes) {
    return std::any_of(outcomes.begin(), outcomes.end(), [](bool b) { return b; });
}

struct ProbeConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t folds = 5;
    std::filesystem::path workdir = std::filesystem::temp_directory_path() / "c3ot-probe";
    int jobs = 1;
    nlohmann::ordered_json hyperparams = nlohmann::ordered_json::object();
};

struct ProbeResult {
    std::map<std::string, std::vector<bool>> outcomes;  // id -> one entry per seed
    std::map<std::string, bool> pass;
    nlohmann::ordered_json log;
};

class ProbeError : public Error {
public:
    using Error::Error;
};

/// Cross-validated probe of one ladder level over `subset`: for each seed,
/// train on k-1 folds of Short-conditioned variants and predict the held-out
/// fold under the Short inference prompt.
inline ProbeResult probe_level(const std::vector<Sample>& subset, const CompressionLevel& level,
                               const VariantTable& variants, const BackendHandle& backend,
                               const ProbeConfig& config) {
    if (!backend.can(Capability::train) || !backend.can(Capability::complete))
        throw PreconditionError("probe backend needs complete and train capabilities");
    for (const auto& s : subset)
        if (!variants.count({s.id, level}))
            throw PreconditionError("no " + level.name() + " variant for " + s.id);

    ProbeResult result;
    result.log["level"] = level.name();
    result.log["seeds"] = config.seeds;
    result.log["pending"] = subset.size();
    for (const auto& s : subset) result.outcomes[s.id] = std::vector<bool>(config.seeds.size(), false);

    if (subset.size() < 2) {
        result.log["skipped"] = "fewer than two pending samples";
        for (const auto& s : subset) result.pass[s.id] = false;
        return result;
    }
    const std::size_t k = std::min(config.folds, subset.size());
    result.log["folds"] = k;

    std::map<std::string, const Sample*> by_id;
    std::vector<std::string> ids;
    for (const auto& s : subset) {
        by_id[s.id] = &s;
        ids.push_back(s.id);
    }

    struct Task {
        std::size_t seed_index;
        std::size_t fold;
        std::vector<std::string> held_out;
        std::vector<std::string> train_ids;
        std::string model_ref;
        std::map<std::string, bool> correct;
    };
    std::vector<Task> tasks;
    nlohmann::ordered_json fold_log = nlohmann::ordered_json::array();
    for (std::size_t si = 0; si < config.seeds.size(); ++si) {
        const auto parts = fold_split(ids, k, config.seeds[si]);
        fold_log.push_back(parts);
        for (std::size_t f = 0; f < k; ++f) {
            Task t{si, f, parts[f], {}, {}, {}};
            for (std::size_t g = 0; g < k; ++g)
                if (g != f) t.train_ids.insert(t.train_ids.end(), parts[g].begin(), parts[g].end());
            tasks.push_back(std::move(t));
        }
    }
    result.log["fold_assignments"] = fold_log;

    const auto dir = config.workdir / ("probe-" + level.name());
    std::filesystem::create_directories(dir);

    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            auto& t = tasks[i];
            try {
                const auto seed = config.seeds[t.seed_index];
                std::vector<ConditionedRecord> records;
                for (const auto& id : t.train_ids)
                    records.push_back(detail::train_record(*by_id.at(id), Condition::short_cot(),
                                                           variants.at({id, level}).text));
                text::seeded_shuffle(records, seed);
                const ConditionedDataset ds{"probe", std::move(records), seed};
                const auto path = dir / ("seed" + std::to_string(seed) + "-fold" + std::to_string(t.fold) + ".jsonl");
                write_dataset(ds, path.string());

                TrainJob job;
                job.dataset_path = path.string();
                job.hyperparams = config.hyperparams;
                job.hyperparams[kTargetLevelKey] = level.name();
                job.hyperparams["c3ot.probe_seed"] = seed;
                job.hyperparams["c3ot.fold"] = t.fold;
                const auto model = backend.train(job);
                t.model_ref = job.output_model_ref;
                for (const auto& id : t.held_out) {
                    const Sample& s = *by_id.at(id);
                    const auto out = model.complete(render_inference_input(s.instruction, Condition::short_cot()));
                    const auto got = extract_answer_for(out, s);
                    t.correct[id] = got && *got == s.answer;
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::max(1, std::min<int>(config.jobs, static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& t : tasks) {
        runs.push_back({{"seed", config.seeds[t.seed_index]}, {"fold", t.fold}, {"model_ref", t.model_ref},
                        {"held_out", t.held_out.size()}});
        for (const auto& [id, ok] : t.correct) result.outcomes[id][t.seed_index] = ok;
    }
    result.log["runs"] = runs;

    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        std::string what = "unknown error";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        result.log["error"] = what;
        std::ofstream(dir / "partial-log.json") << result.log.dump(2) << '\n';
        throw ProbeError("probe of level " + level.name() + " aborted: " + what);
    }
    for (const auto& [id, o] : result.outcomes) result.pass[id] = passes(o);
    return result;
}

// ---------------------------------------------------------------------------

struct AcceptedSample {
    CompressionLevel level = CompressionLevel::original();
    RationaleVariant variant;
    std::vector<bool> outcomes;
};

struct SelectionState {
    std::set<std::string> pending;
    std::map<std::string, AcceptedSample> accepted;
    nlohmann::ordered_json round_log = nlohmann::ordered_json::array();
    bool complete = false;

    bool level_done(const CompressionLevel& level) const {
        for (const auto& r : round_log)
            if (r.at("level").get<std::string>() == level.name()) return true;
        return false;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["complete"] = complete;
        j["pending"] = pending;
        auto acc = nlohmann::ordered_json::object();
        for (const auto& [id, a] : accepted)
            acc[id] = {{"level", a.level.name()}, {"variant", a.variant.to_json()}, {"outcomes", a.outcomes}};
        j["accepted"] = acc;
        j["round_log"] = round_log;
        return j;
    }

    static SelectionState from_json(const nlohmann::json& j) {
        SelectionState s;
        s.complete = j.at("complete").get<bool>();
        s.pending = j.at("pending").get<std::set<std::string>>();
        for (const auto& [id, a] : j.at("accepted").items())
            s.accepted[id] = {CompressionLevel::parse(a.at("level").get<std::string>()),
                              RationaleVariant::from_json(a.at("variant")),
                              a.at("outcomes").get<std::vector<bool>>()};
        s.round_log = nlohmann::ordered_json::parse(j.at("round_log").dump());
        return s;
    }

    Assignment assignment() const {
        Assignment out;
        for (const auto& [id, a] : accepted) out.emplace(id, std::make_pair(a.level, a.variant));
        return out;
    }

    /// Accepted-sample count per level name.
    std::map<std::string, std::size_t> histogram() const {
        std::map<std::string, std::size_t> h;
        for (const auto& [id, a] : accepted) ++h[a.level.name()];
        return h;
    }
};

inline void save_state(const SelectionState& state, const std::filesystem::path& path) {
    text::ensure_parent(path);
    auto tmp = path;
    tmp += ".tmp";
    std::ofstream(tmp, std::ios::trunc) << state.to_json().dump(2) << '\n';
    std::filesystem::rename(tmp, path);
}

inline SelectionState load_state(const std::filesystem::path& path) {
    return SelectionState::from_json(nlohmann::json::parse(text::read_file(path.string())));
}

struct WaterfallOptions {
    ProbeConfig probe;
    std::optional<std::filesystem::path> checkpoint;
    bool resume = false;
};

/// Probes ladder levels from most to least compressed. Samples that pass a
/// level are accepted there with that level's variant; the rest carry over.
/// Whatever is left after the last probed level falls back to Original.
inline SelectionState run_waterfall(const Corpus& corpus, const RateLadder& ladder,
                                    const VariantTable& variants, const BackendHandle& backend,
                                    const WaterfallOptions& options = {}) {
    ladder.validated();
    for (const auto& s : corpus.samples)
        for (const auto& level : ladder.probed())
            if (!variants.count({s.id, level}))
                throw PreconditionError("no " + level.name() + " variant for " + s.id);

    SelectionState state;
    if (options.resume && options.checkpoint && std::filesystem::exists(*options.checkpoint)) {
        state = load_state(*options.checkpoint);
    } else {
        for (const auto& s : corpus.samples) state.pending.insert(s.id);
    }
    if (state.complete) return state;

    std::map<std::string, const Sample*> by_id;
    for (const auto& s : corpus.samples) by_id[s.id] = &s;

    for (const auto& level : ladder.probed()) {
        if (state.level_done(level)) continue;
        nlohmann::ordered_json entry;
        entry["level"] = level.name();
        if (state.pending.empty()) {
            entry["skipped"] = "no pending samples";
            entry["accepted"] = 0;
        } else {
            std::vector<Sample> subset;
            for (const auto& s : corpus.samples)
                if (state.pending.count(s.id)) subset.push_back(s);
            const auto probe = probe_level(subset, level, variants, backend, options.probe);
            std::size_t accepted = 0;
            for (const auto& [id, ok] : probe.pass) {
                if (!ok) continue;
                state.accepted[id] = {level, variants.at({id, level}), probe.outcomes.at(id)};
                state.pending.erase(id);
                ++accepted;
            }
            entry["probe"] = probe.log;
            entry["accepted"] = accepted;
        }
        state.round_log.push_back(entry);
        if (options.checkpoint) save_state(state, *options.checkpoint);
    }

    const auto fallback = ladder.fallback();
    for (const auto& id : state.pending) {
        RationaleVariant v;
        if (auto it = variants.find({id, fallback}); it != variants.end()) {
            v = it->second;
        } else {
            v.sample_id = id;
            v.level = fallback;
            v.text = by_id.at(id)->rationale_long;
            v.producer = "identity";
        }
        state.accepted[id] = {fallback, v, {}};
    }
    state.round_log.push_back({{"level", fallback.name()}, {"fallback", true}, {"accepted", state.pending.size()}});
    state.pending.clear();
    state.complete = true;
    if (options.checkpoint) save_state(state, *options.checkpoint);
    return state;
}

} // namespace c3ot
