#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/compressor.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

/// Training-job hyperparameter naming the CoT level a dataset teaches under
/// the Short condition (or under no condition, for baselines).
inline constexpr const char* kTargetLevelKey = "c3ot.target_level";

enum class ConditionClass { none, long_cot, short_cot, short_level };

/// A condition class and its verbatim instruction prefix.
struct Condition {
    ConditionClass cls = ConditionClass::none;
    int level = 0;  // 1..6 for short_level
    std::string prefix;

    static Condition none() { return {ConditionClass::none, 0, ""}; }
    static Condition long_cot() {
        return {ConditionClass::long_cot, 0, "Answer and provide a detailed thought process:"};
    }
    static Condition short_cot() {
        return {ConditionClass::short_cot, 0,
                "Answer and provide as brief a thought process as possible:"};
    }
    static Condition short_level(int k) {
        if (k < 1 || k > 6) throw PreconditionError("short condition level must be 1..6");
        return {ConditionClass::short_level, k,
                "Answer and provide a thought process in compression level of " +
                    std::to_string(k) + ":"};
    }

    std::string name() const {
        switch (cls) {
        case ConditionClass::none: return "none";
        case ConditionClass::long_cot: return "long";
        case ConditionClass::short_cot: return "short";
        case ConditionClass::short_level: return "short-level-" + std::to_string(level);
        }
        return "?";
    }

    static Condition parse(std::string_view s) {
        if (s == "none") return none();
        if (s == "long") return long_cot();
        if (s == "short") return short_cot();
        if (text::starts_with(s, "short-level-") && s.size() == 13 && s[12] >= '1' && s[12] <= '6')
            return short_level(s[12] - '0');
        throw ConfigError("unknown condition: " + std::string(s));
    }

    friend bool operator==(const Condition&, const Condition&) = default;
};

/// Short level k conditions a rate-(40 + 10k)% training set: 1 -> 50%, 6 -> 100%.
inline int rate_for_short_level(int k) {
    if (k < 1 || k > 6) throw PreconditionError("short condition level must be 1..6");
    return 40 + 10 * k;
}

inline CompressionLevel compression_for_short_level(int k) {
    return CompressionLevel::budgeted(rate_for_short_level(k));
}

/// Registered conditions; new classes are data added here.
class ConditionRegistry {
public:
    ConditionRegistry() {
        conditions_.push_back(Condition::long_cot());
        conditions_.push_back(Condition::short_cot());
        for (int k = 1; k <= 6; ++k) conditions_.push_back(Condition::short_level(k));
    }

    void add(Condition c) { conditions_.push_back(std::move(c)); }
    const std::vector<Condition>& all() const noexcept { return conditions_; }

    /// Splits an input into (condition, instruction) using the longest
    /// registered prefix followed by a single space.
    std::optional<std::pair<Condition, std::string>> parse(std::string_view input) const {
        const Condition* best = nullptr;
        for (const auto& c : conditions_) {
            if (c.prefix.empty()) continue;
            if (input.size() > c.prefix.size() && text::starts_with(input, c.prefix) &&
                input[c.prefix.size()] == ' ' && (!best || c.prefix.size() > best->prefix.size()))
                best = &c;
        }
        if (!best) return std::nullopt;
        return std::make_pair(*best, std::string(input.substr(best->prefix.size() + 1)));
    }

    static const ConditionRegistry& builtin() {
        static const ConditionRegistry r;
        return r;
    }

private:
    std::vector<Condition> conditions_;
};

inline std::string render_inference_input(std::string_view instruction, const Condition& c) {
    if (c.prefix.empty()) return std::string(instruction);
    return c.prefix + " " + std::string(instruction);
}

enum class RecordRole { train, inference };

struct ConditionedRecord {
    std::string sample_id;
    Condition condition;
    std::string input;
    std::optional<std::string> target;
    RecordRole role = RecordRole::train;
};

struct ConditionedDataset {
    static constexpr std::string_view kSchemaVersion = "c3ot-conditioned/1";

    std::string kind;
    std::vector<ConditionedRecord> records;
    std::uint64_t shuffle_seed = 0;

    std::size_t count(ConditionClass cls) const {
        return static_cast<std::size_t>(std::count_if(
            records.begin(), records.end(), [&](const auto& r) { return r.condition.cls == cls; }));
    }
};

/// Samples whose fallback assignment is the original rationale: emit the Long
/// record only, or pair Long with a Short record carrying the long rationale.
enum class OriginalFallback { long_only, pair_with_long };

namespace detail {

inline ConditionedRecord train_record(const Sample& s, const Condition& c,
                                      std::string_view rationale) {
    return {s.id, c, render_inference_input(s.instruction, c), render_target(rationale, s.answer),
            RecordRole::train};
}

inline void throw_missing(const std::string& what, const std::vector<std::string>& ids) {
    std::string list;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) list += (i ? ", " : "") + ids[i];
    if (ids.size() > 20) list += ", ... (" + std::to_string(ids.size()) + " total)";
    throw DataError(what + ": " + list);
}

inline ConditionedDataset finish(std::string kind, std::vector<ConditionedRecord> records,
                                 std::uint64_t seed) {
    text::seeded_shuffle(records, seed);
    return {std::move(kind), std::move(records), seed};
}

} // namespace detail

/// One Long record and one Short record per sample, shuffled. `longs`
/// replaces the Long-side rationale (expanded CoT).
inline ConditionedDataset build_two_class(const Corpus& corpus,
                                          const std::map<std::string, RationaleVariant>& shorts,
                                          std::uint64_t seed,
                                          const std::map<std::string, RationaleVariant>* longs = nullptr) {
    std::vector<std::string> missing;
    for (const auto& s : corpus.samples) {
        if (!shorts.count(s.id)) missing.push_back(s.id);
        else if (longs && !longs->count(s.id)) missing.push_back(s.id);
    }
    if (!missing.empty()) detail::throw_missing("missing variants for samples", missing);

    std::vector<ConditionedRecord> records;
    records.reserve(corpus.size() * 2);
    for (const auto& s : corpus.samples) {
        const std::string& long_text = longs ? longs->at(s.id).text : s.rationale_long;
        records.push_back(detail::train_record(s, Condition::long_cot(), long_text));
        records.push_back(detail::train_record(s, Condition::short_cot(), shorts.at(s.id).text));
    }
    return detail::finish("two-class", std::move(records), seed);
}

/// One Long record plus one Short-level-k record per requested level.
inline ConditionedDataset build_mixed(const Corpus& corpus, const VariantTable& variants,
                                      const std::vector<int>& levels, std::uint64_t seed) {
    std::vector<std::string> missing;
    for (const auto& s : corpus.samples)
        for (int k : levels)
            if (!variants.count({s.id, compression_for_short_level(k)}))
                missing.push_back(s.id + "@" + compression_for_short_level(k).name());
    if (!missing.empty()) detail::throw_missing("incomplete variant coverage", missing);

    std::vector<ConditionedRecord> records;
    records.reserve(corpus.size() * (levels.size() + 1));
    for (const auto& s : corpus.samples) {
        records.push_back(detail::train_record(s, Condition::long_cot(), s.rationale_long));
        for (int k : levels)
            records.push_back(detail::train_record(
                s, Condition::short_level(k), variants.at({s.id, compression_for_short_level(k)}).text));
    }
    return detail::finish("mixed", std::move(records), seed);
}

using Assignment = std::map<std::string, std::pair<CompressionLevel, RationaleVariant>>;

/// Two-class build where each sample's Short side is its assigned variant.
inline ConditionedDataset build_adaptive(const Corpus& corpus, const Assignment& assignment,
                                         std::uint64_t seed,
                                         OriginalFallback fallback = OriginalFallback::long_only) {
    std::vector<std::string> missing;
    for (const auto& s : corpus.samples)
        if (!assignment.count(s.id)) missing.push_back(s.id);
    if (!missing.empty()) detail::throw_missing("missing assignment for samples", missing);

    std::vector<ConditionedRecord> records;
    for (const auto& s : corpus.samples) {
        const auto& [level, variant] = assignment.at(s.id);
        records.push_back(detail::train_record(s, Condition::long_cot(), s.rationale_long));
        if (level.kind() == CompressionLevel::Kind::original &&
            fallback == OriginalFallback::long_only)
            continue;
        records.push_back(detail::train_record(s, Condition::short_cot(), variant.text));
    }
    return detail::finish("adaptive", std::move(records), seed);
}

/// Unconditioned SFT set (baselines): plain instruction -> rationale + answer.
inline ConditionedDataset build_plain(const Corpus& corpus,
                                      const std::map<std::string, RationaleVariant>& rationales,
                                      std::uint64_t seed) {
    std::vector<std::string> missing;
    for (const auto& s : corpus.samples)
        if (!rationales.count(s.id)) missing.push_back(s.id);
    if (!missing.empty()) detail::throw_missing("missing rationales for samples", missing);
    std::vector<ConditionedRecord> records;
    for (const auto& s : corpus.samples)
        records.push_back(detail::train_record(s, Condition::none(), rationales.at(s.id).text));
    return detail::finish("plain", std::move(records), seed);
}

/// Inference records (no targets) in corpus order.
inline ConditionedDataset build_inference(const Corpus& corpus, const Condition& c) {
    ConditionedDataset ds{"inference", {}, 0};
    for (const auto& s : corpus.samples)
        ds.records.push_back(
            {s.id, c, render_inference_input(s.instruction, c), std::nullopt, RecordRole::inference});
    return ds;
}

// ---------------------------------------------------------------------------

inline std::string serialize_records(const ConditionedDataset& ds) {
    std::string out;
    for (const auto& r : ds.records) {
        nlohmann::ordered_json j;
        j["input"] = r.input;
        if (r.role == RecordRole::train) {
            if (!r.target) throw Error("train record for " + r.sample_id + " lacks a target");
            j["target"] = *r.target;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline nlohmann::ordered_json sidecar_manifest(const ConditionedDataset& ds,
                                               const std::string& records_digest) {
    nlohmann::ordered_json j;
    j["schema_version"] = ConditionedDataset::kSchemaVersion;
    j["kind"] = ds.kind;
    j["shuffle_seed"] = ds.shuffle_seed;
    j["record_count"] = ds.records.size();
    j["records_digest"] = records_digest;
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    for (const auto& r : ds.records) {
        auto& c = counts[r.condition.name()];
        c = c.is_null() ? 1 : c.get<int>() + 1;
    }
    j["condition_counts"] = counts;
    nlohmann::ordered_json prefixes = nlohmann::ordered_json::object();
    for (const auto& c : ConditionRegistry::builtin().all()) prefixes[c.name()] = c.prefix;
    j["condition_prefixes"] = prefixes;
    nlohmann::ordered_json rates = nlohmann::ordered_json::object();
    for (int k = 1; k <= 6; ++k) rates[std::to_string(k)] = rate_for_short_level(k);
    j["short_level_rates"] = rates;
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    for (const auto& r : ds.records)
        index.push_back(nlohmann::ordered_json{{"sample_id", r.sample_id}, {"condition", r.condition.name()}});
    j["records"] = index;
    return j;
}

/// Writes `<path>` ({input, target} lines) and `<path>.manifest.json`.
/// Returns the digest of the records file.
inline std::string write_dataset(const ConditionedDataset& ds, const std::string& path) {
    const std::string body = serialize_records(ds);
    {
        text::ensure_parent(path);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + path);
        out << body;
    }
    const std::string digest = text::sha256_hex(body);
    std::ofstream side(path + ".manifest.json", std::ios::binary | std::ios::trunc);
    side << sidecar_manifest(ds, digest).dump(2) << '\n';
    return digest;
}

} // namespace c3ot
