#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/compressor.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

enum class LengthUnit { words, characters, backend_tokens };

inline std::string_view to_string(LengthUnit u) {
    switch (u) {
    case LengthUnit::words: return "whitespace-words";
    case LengthUnit::characters: return "characters";
    case LengthUnit::backend_tokens: return "backend-reported-tokens";
    }
    return "?";
}

inline LengthUnit parse_length_unit(std::string_view s) {
    if (s == "whitespace-words" || s == "words") return LengthUnit::words;
    if (s == "characters") return LengthUnit::characters;
    if (s == "backend-reported-tokens" || s == "tokens") return LengthUnit::backend_tokens;
    throw ConfigError("unknown length unit: " + std::string(s));
}

struct LengthMeasure {
    LengthUnit unit = LengthUnit::words;
    double value = 0.0;
};

/// The reasoning part of a generation: everything before a trailing "####"
/// answer line.
inline std::string_view strip_answer_line(std::string_view generation) {
    std::string_view g = generation;
    while (!g.empty() && text::is_unicode_space(static_cast<unsigned char>(g.back()))) g.remove_suffix(1);
    const auto nl = g.rfind('\n');
    const auto last = nl == std::string_view::npos ? g : g.substr(nl + 1);
    if (text::starts_with(text::trim(last), "####"))
        return nl == std::string_view::npos ? std::string_view{} : g.substr(0, nl);
    return g;
}

inline LengthMeasure measure(std::string_view text_value, LengthUnit unit) {
    switch (unit) {
    case LengthUnit::words:
        return {unit, static_cast<double>(text::word_count(text_value))};
    case LengthUnit::characters: {
        double n = 0;
        for (unsigned char c : text_value)
            if ((c & 0xC0) != 0x80) ++n;
        return {unit, n};
    }
    case LengthUnit::backend_tokens:
        throw ConfigError("backend-reported token counts must be supplied by the backend");
    }
    return {unit, 0};
}

/// Relative length reduction (L - L~) / L against a baseline mean length L.
inline double compression_rate(const LengthMeasure& baseline, const LengthMeasure& candidate) {
    if (baseline.unit != candidate.unit)
        throw PreconditionError("length units differ: " + std::string(to_string(baseline.unit)) +
                                " vs " + std::string(to_string(candidate.unit)));
    if (!(baseline.value > 0.0)) throw PreconditionError("baseline length must be positive");
    if (candidate.value < 0.0) throw PreconditionError("candidate length must be non-negative");
    return (baseline.value - candidate.value) / baseline.value;
}

struct SampleOutcome {
    std::string id;
    bool correct = false;
    LengthMeasure gen_length;
};

struct EvalResult {
    double accuracy = 0.0;
    std::optional<double> compression_rate;
    std::size_t n = 0;
    LengthUnit unit = LengthUnit::words;
    std::optional<double> baseline_length;
    bool baseline_is_proxy = false;
    std::vector<SampleOutcome> per_sample;

    double mean_length() const {
        if (per_sample.empty()) return 0.0;
        double total = 0.0;
        for (const auto& s : per_sample) total += s.gen_length.value;
        return total / static_cast<double>(per_sample.size());
    }

    /// Sets L and recomputes the compression rate from the per-sample lengths.
    void set_baseline(double baseline_mean, bool proxy) {
        baseline_length = baseline_mean;
        baseline_is_proxy = proxy;
        compression_rate = c3ot::compression_rate({unit, baseline_mean}, {unit, mean_length()});
    }

    /// Aggregates recomputed from `per_sample`.
    static EvalResult from_per_sample(std::vector<SampleOutcome> per_sample, LengthUnit unit) {
        EvalResult r;
        r.unit = unit;
        r.n = per_sample.size();
        std::size_t correct = 0;
        for (const auto& s : per_sample) {
            if (s.gen_length.unit != unit) throw PreconditionError("mixed length units in results");
            correct += s.correct ? 1 : 0;
        }
        r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
        r.per_sample = std::move(per_sample);
        return r;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["accuracy"] = accuracy;
        j["compression_rate"] = compression_rate ? nlohmann::ordered_json(*compression_rate) : nlohmann::ordered_json(nullptr);
        j["n"] = n;
        j["length_unit"] = to_string(unit);
        j["baseline_length"] = baseline_length ? nlohmann::ordered_json(*baseline_length) : nlohmann::ordered_json(nullptr);
        j["baseline_is_proxy"] = baseline_is_proxy;
        j["mean_length"] = mean_length();
        auto rows = nlohmann::ordered_json::array();
        for (const auto& s : per_sample)
            rows.push_back({{"id", s.id}, {"correct", s.correct}, {"gen_length", s.gen_length.value}});
        j["per_sample"] = rows;
        return j;
    }

    static EvalResult from_json(const nlohmann::json& j) {
        const auto unit = parse_length_unit(j.at("length_unit").get<std::string>());
        std::vector<SampleOutcome> rows;
        for (const auto& r : j.at("per_sample"))
            rows.push_back({r.at("id").get<std::string>(), r.at("correct").get<bool>(),
                            {unit, r.at("gen_length").get<double>()}});
        auto out = from_per_sample(std::move(rows), unit);
        if (!j.at("baseline_length").is_null())
            out.set_baseline(j.at("baseline_length").get<double>(), j.value("baseline_is_proxy", false));
        return out;
    }
};

/// Exact-match accuracy of generations against gold answers; generation
/// lengths exclude the trailing answer line.
inline EvalResult accuracy(const Corpus& gold, const std::map<std::string, std::string>& generations,
                           LengthUnit unit = LengthUnit::words) {
    std::vector<std::string> missing;
    for (const auto& s : gold.samples)
        if (!generations.count(s.id)) missing.push_back(s.id);
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
        throw DataError("missing generations for: " + list);
    }
    std::vector<SampleOutcome> rows;
    rows.reserve(gold.size());
    for (const auto& s : gold.samples) {
        const auto& g = generations.at(s.id);
        const auto extracted = extract_answer_for(g, s);
        rows.push_back({s.id, extracted && *extracted == s.answer, measure(strip_answer_line(g), unit)});
    }
    return EvalResult::from_per_sample(std::move(rows), unit);
}

struct DecileBin {
    std::size_t index = 0;
    std::size_t count = 0;
    double mean_original = 0.0;
    double mean_variant = 0.0;
};

struct CompressionSummary {
    std::size_t n = 0;
    LengthUnit unit = LengthUnit::words;
    double mean_original = 0.0;
    double mean_variant = 0.0;
    double rate = 0.0;
    std::vector<DecileBin> deciles;  // bins by original-length rank

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n"] = n;
        j["length_unit"] = to_string(unit);
        j["mean_original"] = mean_original;
        j["mean_variant"] = mean_variant;
        j["compression_rate"] = rate;
        auto bins = nlohmann::ordered_json::array();
        for (const auto& b : deciles)
            bins.push_back({{"decile", b.index}, {"count", b.count},
                            {"mean_original", b.mean_original}, {"mean_variant", b.mean_variant}});
        j["deciles"] = bins;
        return j;
    }
};

inline CompressionSummary corpus_compression_summary(
    const Corpus& originals, const std::map<std::string, RationaleVariant>& variants,
    LengthUnit unit = LengthUnit::words) {
    std::vector<std::string> missing;
    for (const auto& s : originals.samples)
        if (!variants.count(s.id)) missing.push_back(s.id);
    if (!missing.empty()) throw DataError("missing variants for " + std::to_string(missing.size()) + " samples, first " + missing.front());
    if (originals.empty()) throw PreconditionError("empty corpus");

    struct Row { double original, variant; std::size_t pos; };
    std::vector<Row> rows;
    double sum_o = 0, sum_v = 0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        const auto& s = originals.samples[i];
        const double o = measure(s.rationale_long, unit).value;
        const double v = measure(variants.at(s.id).text, unit).value;
        rows.push_back({o, v, i});
        sum_o += o;
        sum_v += v;
    }
    CompressionSummary out;
    out.n = rows.size();
    out.unit = unit;
    out.mean_original = sum_o / static_cast<double>(out.n);
    out.mean_variant = sum_v / static_cast<double>(out.n);
    out.rate = compression_rate({unit, out.mean_original}, {unit, out.mean_variant});

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.original < b.original; });
    for (std::size_t d = 0; d < 10; ++d) {
        const std::size_t b = d * out.n / 10, e = (d + 1) * out.n / 10;
        if (b == e) continue;
        DecileBin bin{d, e - b, 0, 0};
        for (std::size_t i = b; i < e; ++i) {
            bin.mean_original += rows[i].original;
            bin.mean_variant += rows[i].variant;
        }
        bin.mean_original /= static_cast<double>(bin.count);
        bin.mean_variant /= static_cast<double>(bin.count);
        out.deciles.push_back(bin);
    }
    return out;
}

} // namespace c3ot
