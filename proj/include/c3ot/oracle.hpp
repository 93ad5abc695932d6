#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <string>
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

struct OracleSettings {
    std::map<std::string, double> difficulty;         // sample id -> difficulty
    std::map<CompressionLevel, double> thresholds;    // level -> max solvable difficulty
    std::uint64_t noise_seed = 0;
    double noise_rate = 0.0;                          // probability of flipping correctness
    double free_ratio = 0.45;                         // generated length ratio, free compression
    double expanded_ratio = 4.1;                      // generated length ratio, expanded CoT
};

/// Desk-scale stand-in for a fine-tuned model. It recognizes the condition
/// prefix and the question, and answers correctly iff the sample's difficulty
/// is within the threshold of the CoT level in effect. Stateless: the level a
/// trained model emits is carried in its model reference.
class OracleTransport : public Transport {
public:
    OracleTransport(const std::vector<Sample>& samples, OracleSettings settings)
        : settings_(std::move(settings)) {
        for (const auto& s : samples) by_instruction_.emplace(s.instruction, s);
        check_monotone();
        nlohmann::ordered_json j;
        j["difficulty"] = settings_.difficulty;
        for (const auto& [level, t] : settings_.thresholds) j["thresholds"][level.name()] = t;
        j["noise_seed"] = settings_.noise_seed;
        j["noise_rate"] = settings_.noise_rate;
        j["free_ratio"] = settings_.free_ratio;
        j["expanded_ratio"] = settings_.expanded_ratio;
        config_digest_ = text::sha256_hex(j.dump()).substr(0, 16);
    }

    std::string kind() const override { return "oracle"; }
    std::string endpoint() const override { return "oracle://" + config_digest_; }

    std::string complete(const std::string& model, const DecodingParams&,
                         const std::string& prompt) override {
        ++calls_;
        Condition condition = Condition::none();
        std::string instruction = prompt;
        if (auto parsed = ConditionRegistry::builtin().parse(prompt)) {
            condition = parsed->first;
            instruction = parsed->second;
        }
        const auto it = by_instruction_.find(instruction);
        if (it == by_instruction_.end()) return "I cannot parse this question.\n#### ?";
        const Sample& s = it->second;
        const auto level = effective_level(condition, model, s.id);
        const bool correct = is_correct(s.id, level, model);
        return generation(s, level, correct);
    }

    std::string train(const std::string&, const TrainJob& job) override {
        ++train_calls_;
        std::string mode = "short";
        if (job.hyperparams.contains(kTargetLevelKey))
            mode = job.hyperparams.at(kTargetLevelKey).get<std::string>();
        if (mode != "adaptive") (void)CompressionLevel::parse(mode);
        return "oracle:" + mode + ":" + text::file_digest(job.dataset_path).substr(0, 16);
    }

    /// CoT level used for a given condition and model.
    CompressionLevel effective_level(const Condition& c, const std::string& model,
                                     const std::string& id) const {
        switch (c.cls) {
        case ConditionClass::long_cot: return CompressionLevel::original();
        case ConditionClass::short_level: return compression_for_short_level(c.level);
        case ConditionClass::short_cot:
        case ConditionClass::none: break;
        }
        const auto mode = model_mode(model);
        if (!mode) return c.cls == ConditionClass::none ? CompressionLevel::original()
                                                        : CompressionLevel::short_free();
        if (*mode == "adaptive") return adaptive_level(id);
        return CompressionLevel::parse(*mode);
    }

    /// Most compressed rated level whose threshold admits the sample.
    CompressionLevel adaptive_level(const std::string& id) const {
        const double d = difficulty(id);
        std::vector<std::pair<int, CompressionLevel>> rated;
        for (const auto& [level, t] : settings_.thresholds)
            if (auto r = level.nominal_rate()) rated.emplace_back(*r, level);
        std::sort(rated.begin(), rated.end(), [](auto& a, auto& b) { return a.first > b.first; });
        for (const auto& [rate, level] : rated)
            if (d <= settings_.thresholds.at(level)) return level;
        return CompressionLevel::original();
    }

    bool is_correct(const std::string& id, const CompressionLevel& level,
                    const std::string& model) const {
        const auto t = settings_.thresholds.find(level);
        bool correct = t != settings_.thresholds.end() && difficulty(id) <= t->second;
        if (settings_.noise_rate > 0.0) {
            const auto key = std::to_string(settings_.noise_seed) + "|" + id + "|" + level.name() +
                             "|" + model;
            if (text::unit_hash(key) < settings_.noise_rate) correct = !correct;
        }
        return correct;
    }

    double length_ratio(const CompressionLevel& level) const {
        switch (level.kind()) {
        case CompressionLevel::Kind::original: return 1.0;
        case CompressionLevel::Kind::short_free: return settings_.free_ratio;
        case CompressionLevel::Kind::expanded: return settings_.expanded_ratio;
        case CompressionLevel::Kind::short_budgeted: return 1.0 - level.rate() / 100.0;
        }
        return 1.0;
    }

    const OracleSettings& settings() const noexcept { return settings_; }
    int calls() const { return calls_.load(); }
    int train_calls() const { return train_calls_.load(); }

private:
    static std::optional<std::string> model_mode(const std::string& model) {
        if (!text::starts_with(model, "oracle:")) return std::nullopt;
        const auto rest = model.substr(7);
        const auto colon = rest.find(':');
        return rest.substr(0, colon);
    }

    double difficulty(const std::string& id) const {
        const auto it = settings_.difficulty.find(id);
        return it == settings_.difficulty.end() ? 1.0 : it->second;
    }

    void check_monotone() const {
        std::vector<std::pair<int, double>> rated;
        for (const auto& [level, t] : settings_.thresholds)
            if (auto r = level.nominal_rate()) rated.emplace_back(*r, t);
        std::sort(rated.begin(), rated.end());
        for (std::size_t i = 1; i < rated.size(); ++i)
            if (rated[i].second > rated[i - 1].second)
                throw PreconditionError("oracle thresholds must not increase with compression rate");
    }

    std::string generation(const Sample& s, const CompressionLevel& level, bool correct) const {
        const auto words = text::split_words(s.rationale_long);
        const auto n = static_cast<std::size_t>(
            std::llround(static_cast<double>(words.size()) * length_ratio(level)));
        std::string cot;
        for (std::size_t i = 0; i < n && !words.empty(); ++i) {
            if (i) cot += ' ';
            cot += words[i % words.size()];
        }
        const AnswerValue answer = correct ? s.answer : wrong_answer(s.answer);
        return cot.empty() ? render_answer_line(answer) : cot + "\n" + render_answer_line(answer);
    }

    static AnswerValue wrong_answer(const AnswerValue& a) {
        switch (a.kind) {
        case AnswerKind::numeric: return {a.kind, a.value + "1"};
        case AnswerKind::choice_letter: return {a.kind, std::string(1, static_cast<char>('a' + (a.value[0] - 'a' + 1) % 5))};
        case AnswerKind::boolean: return {a.kind, a.value == "yes" ? "no" : "yes"};
        case AnswerKind::choice_text: return {a.kind, a.value == "none of these" ? "something else" : "none of these"};
        }
        return a;
    }

    OracleSettings settings_;
    std::map<std::string, Sample> by_instruction_;
    std::string config_digest_;
    std::atomic<int> calls_{0};
    std::atomic<int> train_calls_{0};
};

/// A complete+train handle backed by the oracle. Thresholds must be
/// non-increasing as the compression rate rises.
inline BackendHandle mock_oracle(const std::vector<Sample>& samples, OracleSettings settings,
                                 BackendOptions options = {}) {
    auto transport = std::make_shared<OracleTransport>(samples, std::move(settings));
    return BackendHandle(std::move(transport), "oracle-base",
                         {Capability::complete, Capability::train}, DecodingParams{},
                         std::move(options));
}

} // namespace c3ot
