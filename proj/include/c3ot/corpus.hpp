#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

enum class Family { gsm8k, mathqa, ecqa, strategyqa };
enum class Split { train, test };
enum class AnswerKind { numeric, choice_letter, choice_text, boolean };

inline std::string_view to_string(Family f) {
    switch (f) {
    case Family::gsm8k: return "gsm8k";
    case Family::mathqa: return "mathqa";
    case Family::ecqa: return "ecqa";
    case Family::strategyqa: return "strategyqa";
    }
    return "?";
}

inline Family parse_family(std::string_view s) {
    const auto l = text::to_lower_ascii(s);
    if (l == "gsm8k") return Family::gsm8k;
    if (l == "mathqa") return Family::mathqa;
    if (l == "ecqa") return Family::ecqa;
    if (l == "strategyqa") return Family::strategyqa;
    throw ConfigError("unknown dataset family: " + std::string(s));
}

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split: " + std::string(s));
}

inline std::string_view to_string(AnswerKind k) {
    switch (k) {
    case AnswerKind::numeric: return "numeric";
    case AnswerKind::choice_letter: return "choice-letter";
    case AnswerKind::choice_text: return "choice-text";
    case AnswerKind::boolean: return "boolean";
    }
    return "?";
}

inline AnswerKind parse_answer_kind(std::string_view s) {
    if (s == "numeric") return AnswerKind::numeric;
    if (s == "choice-letter") return AnswerKind::choice_letter;
    if (s == "choice-text") return AnswerKind::choice_text;
    if (s == "boolean") return AnswerKind::boolean;
    throw DataError("unknown answer kind: " + std::string(s));
}

/// Gold answer schema of each family.
inline AnswerKind answer_kind_of(Family f) {
    switch (f) {
    case Family::gsm8k: return AnswerKind::numeric;
    case Family::mathqa: return AnswerKind::choice_letter;
    case Family::ecqa: return AnswerKind::choice_text;
    case Family::strategyqa: return AnswerKind::boolean;
    }
    return AnswerKind::numeric;
}

/// Canonical numeric form: no thousands separators, no leading '+', no
/// trailing fractional zeros, no isolated trailing period. Returns nullopt
/// when the input is not a signed decimal.
inline std::optional<std::string> canonicalize_numeric(std::string_view raw) {
    std::string s;
    for (char c : text::trim(raw))
        if (c != ',') s.push_back(c);
    if (!s.empty() && s.front() == '+') s.erase(0, 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    if (s.empty()) return std::nullopt;

    std::size_t i = (s.front() == '-') ? 1 : 0;
    const std::size_t int_begin = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == int_begin) return std::nullopt;
    if (i < s.size()) {
        if (s[i] != '.') return std::nullopt;
        const std::size_t frac_begin = ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i != s.size() || i == frac_begin) return std::nullopt;
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

inline std::string canonicalize_choice_text(std::string_view raw) {
    const auto words = text::split_words(raw);
    return text::to_lower_ascii(text::join(words, " "));
}

struct AnswerValue {
    AnswerKind kind = AnswerKind::numeric;
    std::string value;

    /// Canonicalizes `raw` under `kind`; throws DataError if it cannot.
    static AnswerValue make(AnswerKind kind, std::string_view raw) {
        switch (kind) {
        case AnswerKind::numeric:
            if (auto v = canonicalize_numeric(raw)) return {kind, *v};
            break;
        case AnswerKind::choice_letter: {
            auto v = text::to_lower_ascii(text::trim(raw));
            if (v.size() == 3 && v.front() == '(' && v.back() == ')') v = v.substr(1, 1);
            if (v.size() == 1 && v[0] >= 'a' && v[0] <= 'e') return {kind, v};
            break;
        }
        case AnswerKind::choice_text: {
            auto v = canonicalize_choice_text(raw);
            if (!v.empty()) return {kind, v};
            break;
        }
        case AnswerKind::boolean: {
            const auto v = text::to_lower_ascii(text::trim(raw));
            if (v == "yes" || v == "true") return {kind, "yes"};
            if (v == "no" || v == "false") return {kind, "no"};
            break;
        }
        }
        throw DataError("cannot canonicalize '" + std::string(raw) + "' as " +
                        std::string(to_string(kind)));
    }

    friend bool operator==(const AnswerValue&, const AnswerValue&) = default;
};

struct Sample {
    std::string id;
    std::string instruction;
    std::string rationale_long;
    AnswerValue answer;
    Family source = Family::gsm8k;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Corpus {
    Family family = Family::gsm8k;
    Split split = Split::train;
    std::vector<Sample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    const Sample* find(std::string_view id) const {
        for (const auto& s : samples)
            if (s.id == id) return &s;
        return nullptr;
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Throws DataError unless the corpus satisfies the Sample / Corpus invariants.
inline void validate(const Corpus& corpus) {
    std::set<std::string_view> seen;
    for (const auto& s : corpus.samples) {
        if (s.source != corpus.family)
            throw DataError("sample " + s.id + " has family " + std::string(to_string(s.source)) +
                            " in a " + std::string(to_string(corpus.family)) + " corpus");
        if (text::is_blank(s.instruction))
            throw DataError("sample " + s.id + " has an empty instruction");
        if (text::is_blank(s.rationale_long))
            throw DataError("sample " + s.id + " has an empty rationale");
        if (!seen.insert(s.id).second) throw DataError("duplicate id: " + s.id);
    }
}

// ---------------------------------------------------------------------------
// Option lists rendered into choice-question instructions.

inline constexpr std::string_view kChoicesHeader = "Answer Choices:";

inline std::string render_choices(std::span<const std::string> options) {
    std::string out(kChoicesHeader);
    for (std::size_t i = 0; i < options.size(); ++i) {
        out += " (";
        out += static_cast<char>('a' + i);
        out += ") ";
        out += text::trim(options[i]);
    }
    return out;
}

/// Recovers the option texts from an instruction that ends with a rendered
/// "Answer Choices:" line. Returns an empty list when there is none.
inline std::vector<std::string> parse_choices(std::string_view instruction) {
    const auto at = instruction.rfind(kChoicesHeader);
    if (at == std::string_view::npos) return {};
    std::string_view rest = instruction.substr(at + kChoicesHeader.size());
    std::vector<std::string> options;
    char expect = 'a';
    std::size_t cursor = 0;
    auto marker = [](char c) { return std::string(" (") + c + ") "; };
    auto pos = rest.find(marker(expect), cursor);
    while (pos != std::string_view::npos && expect <= 'e') {
        const std::size_t body = pos + 5;
        const auto next = rest.find(marker(static_cast<char>(expect + 1)), body);
        const auto end = next == std::string_view::npos ? rest.size() : next;
        options.push_back(text::trim(rest.substr(body, end - body)));
        ++expect;
        pos = next;
    }
    return options;
}

// ---------------------------------------------------------------------------
// Answer extraction from free-form generations. Every rule is "last mention
// wins" so reasoning that precedes the answer does not shadow it.

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

inline std::optional<std::string> last_number(std::string_view g) {
    std::optional<std::string> last;
    std::size_t i = 0;
    while (i < g.size()) {
        std::size_t start = i;
        bool signed_token = false;
        if ((g[i] == '-' || g[i] == '+') && i + 1 < g.size() && is_digit(g[i + 1]) &&
            (i == 0 || !is_alnum(g[i - 1]))) {
            signed_token = true;
        } else if (!is_digit(g[i])) {
            ++i;
            continue;
        }
        std::size_t j = signed_token ? i + 1 : i;
        while (j < g.size() && (is_digit(g[j]) || g[j] == ',')) ++j;
        if (j + 1 < g.size() && g[j] == '.' && is_digit(g[j + 1])) {
            ++j;
            while (j < g.size() && is_digit(g[j])) ++j;
        }
        std::string_view tok = g.substr(start, j - start);
        while (!tok.empty() && tok.back() == ',') tok.remove_suffix(1);
        if (auto c = canonicalize_numeric(tok)) last = *c;
        i = j;
    }
    return last;
}

inline std::optional<std::string> last_choice_letter(std::string_view g) {
    std::optional<std::string> last_paren, last_bare;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(g[i])));
        if (c < 'a' || c > 'e') continue;
        if (i > 0 && is_alnum(g[i - 1])) continue;
        if (i + 1 < g.size() && is_alnum(g[i + 1])) continue;
        std::size_t k = i + 1;
        while (k < g.size() && g[k] == ' ') ++k;
        const std::string letter(1, c);
        if (k < g.size() && g[k] == ')')
            last_paren = letter;
        else
            last_bare = letter;
    }
    return last_paren ? last_paren : last_bare;
}

inline std::optional<std::string> last_boolean(std::string_view g) {
    const std::string l = text::to_lower_ascii(g);
    std::optional<std::string> last;
    std::size_t best = 0;
    for (std::string_view word : {std::string_view("yes"), std::string_view("no")}) {
        std::size_t pos = l.find(word);
        while (pos != std::string::npos) {
            const bool left = pos == 0 || !is_alpha(l[pos - 1]);
            const std::size_t after = pos + word.size();
            const bool right = after >= l.size() || !is_alpha(l[after]);
            if (left && right && (!last || pos >= best)) {
                last = std::string(word);
                best = pos;
            }
            pos = l.find(word, pos + 1);
        }
    }
    return last;
}

inline std::string_view final_sentence(std::string_view g) {
    std::string_view last_line;
    std::size_t start = 0;
    while (start <= g.size()) {
        const auto nl = g.find('\n', start);
        const auto end = nl == std::string_view::npos ? g.size() : nl;
        const auto line = g.substr(start, end - start);
        if (!text::is_blank(line)) last_line = line;
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    const auto sentences = text::split_sentences(last_line);
    return sentences.empty() ? std::string_view{} : sentences.back();
}

inline std::optional<std::string> choice_text(std::string_view g,
                                              std::span<const std::string> options) {
    const std::string sentence = text::to_lower_ascii(final_sentence(g));
    if (sentence.empty()) return std::nullopt;
    if (!options.empty()) {
        std::optional<std::string> best;
        std::size_t best_len = 0, best_pos = 0;
        for (const auto& opt : options) {
            const auto needle = canonicalize_choice_text(opt);
            if (needle.empty()) continue;
            const auto pos = sentence.rfind(needle);
            if (pos == std::string::npos) continue;
            if (!best || needle.size() > best_len ||
                (needle.size() == best_len && pos > best_pos)) {
                best = needle;
                best_len = needle.size();
                best_pos = pos;
            }
        }
        return best;
    }
    std::string_view tail = sentence;
    if (auto m = tail.rfind("####"); m != std::string_view::npos)
        tail = tail.substr(m + 4);
    else if (auto a = tail.rfind("answer is"); a != std::string_view::npos)
        tail = tail.substr(a + 9);
    std::string out = canonicalize_choice_text(tail);
    while (!out.empty() && (out.back() == '.' || out.back() == '!' || out.back() == '?'))
        out.pop_back();
    out = canonicalize_choice_text(out);
    if (out.empty()) return std::nullopt;
    return out;
}

} // namespace detail

/// Extracts a candidate answer of the given kind from model output. Never
/// throws; returns nullopt when there is no candidate. `options` is consulted
/// for choice-text answers only.
inline std::optional<AnswerValue> extract_answer(std::string_view generation, AnswerKind kind,
                                                 std::span<const std::string> options = {}) {
    try {
        std::optional<std::string> v;
        switch (kind) {
        case AnswerKind::numeric: v = detail::last_number(generation); break;
        case AnswerKind::choice_letter: v = detail::last_choice_letter(generation); break;
        case AnswerKind::choice_text: v = detail::choice_text(generation, options); break;
        case AnswerKind::boolean: v = detail::last_boolean(generation); break;
        }
        if (!v) return std::nullopt;
        return AnswerValue{kind, *v};
    } catch (...) {
        return std::nullopt;
    }
}

inline std::optional<AnswerValue> extract_answer(std::string_view generation, Family family,
                                                 std::span<const std::string> options = {}) {
    return extract_answer(generation, answer_kind_of(family), options);
}

/// Extraction against a gold sample: choice-text options come from the
/// sample's rendered instruction.
inline std::optional<AnswerValue> extract_answer_for(std::string_view generation,
                                                     const Sample& sample) {
    const auto options = sample.answer.kind == AnswerKind::choice_text
                             ? parse_choices(sample.instruction)
                             : std::vector<std::string>{};
    return extract_answer(generation, sample.answer.kind, options);
}

/// Answer line appended to training targets; the extractor recognizes it.
inline std::string render_answer_line(const AnswerValue& a) {
    if (a.kind == AnswerKind::choice_letter) return "#### (" + a.value + ")";
    return "#### " + a.value;
}

/// Rationale followed by the answer line (rationale omitted when empty).
inline std::string render_target(std::string_view rationale, const AnswerValue& a) {
    const std::string r = text::trim(rationale);
    if (r.empty()) return render_answer_line(a);
    return r + "\n" + render_answer_line(a);
}

// ---------------------------------------------------------------------------
// Ingestion.

using json = nlohmann::json;

/// How one dataset family's source records map onto Sample.
struct FamilyLoader {
    Family family;
    std::vector<std::string> required_fields;
    std::function<Sample(const json& record, Split split, std::size_t index)> map;
};

namespace detail {

inline std::string field_string(const json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

inline std::string padded_index(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

inline std::string strip_quotes(std::string s) {
    s = text::trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return text::trim(s);
}

// MathQA options: "a ) 38 , b ) 27.675 , c ) 30 , d ) data inadequate , e ) 52.3"
inline std::vector<std::string> parse_mathqa_options(const json& v) {
    std::vector<std::string> out;
    if (v.is_array()) {
        for (const auto& o : v) {
            std::string s = text::trim(o.get<std::string>());
            const auto close = s.find(')');
            if (close != std::string::npos && close <= 2 && s[0] >= 'a' && s[0] <= 'e')
                s = text::trim(std::string_view(s).substr(close + 1));
            out.push_back(s);
        }
        return out;
    }
    const std::string s = v.get<std::string>();
    std::vector<std::size_t> starts;
    for (char letter = 'a'; letter <= 'e'; ++letter) {
        const std::string m = std::string(1, letter) + " )";
        const std::size_t from = starts.empty() ? 0 : starts.back();
        const auto pos = s.find(m, from);
        if (pos == std::string::npos) break;
        starts.push_back(pos);
    }
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const std::size_t b = starts[i] + 3;
        const std::size_t e = i + 1 < starts.size() ? starts[i + 1] : s.size();
        std::string opt = text::trim(s.substr(b, e - b));
        if (!opt.empty() && opt.back() == ',') opt.pop_back();
        out.push_back(text::trim(opt));
    }
    return out;
}

} // namespace detail

/// Built-in loader table for the four benchmark families.
inline const std::vector<FamilyLoader>& loader_table() {
    static const std::vector<FamilyLoader> table = {
        {Family::gsm8k,
         {"question", "answer"},
         [](const json& j, Split split, std::size_t i) {
             const std::string full = detail::field_string(j, "answer");
             const auto marker = full.rfind("#### ");
             if (marker == std::string::npos) throw DataError("answer lacks '#### ' marker");
             Sample s;
             s.id = j.contains("id") ? detail::field_string(j, "id")
                                     : "gsm8k-" + std::string(to_string(split)) + "-" +
                                           detail::padded_index(i);
             s.instruction = text::trim(detail::field_string(j, "question"));
             s.rationale_long = text::trim(std::string_view(full).substr(0, marker));
             s.answer = AnswerValue::make(AnswerKind::numeric, full.substr(marker + 5));
             s.source = Family::gsm8k;
             return s;
         }},
        {Family::mathqa,
         {"Problem", "Rationale", "options", "correct"},
         [](const json& j, Split split, std::size_t i) {
             Sample s;
             s.id = j.contains("id") ? detail::field_string(j, "id")
                                     : "mathqa-" + std::string(to_string(split)) + "-" +
                                           detail::padded_index(i);
             const auto options = detail::parse_mathqa_options(j.at("options"));
             s.instruction =
                 text::trim(detail::field_string(j, "Problem")) + "\n" + render_choices(options);
             s.rationale_long = detail::strip_quotes(detail::field_string(j, "Rationale"));
             s.answer =
                 AnswerValue::make(AnswerKind::choice_letter, detail::field_string(j, "correct"));
             s.source = Family::mathqa;
             return s;
         }},
        {Family::ecqa,
         {"q_text", "q_op1", "q_op2", "q_op3", "q_op4", "q_op5", "q_ans", "taskB"},
         [](const json& j, Split split, std::size_t i) {
             Sample s;
             s.id = j.contains("q_no") ? detail::field_string(j, "q_no")
                                       : "ecqa-" + std::string(to_string(split)) + "-" +
                                             detail::padded_index(i);
             std::vector<std::string> options;
             for (int k = 1; k <= 5; ++k)
                 options.push_back(detail::field_string(j, "q_op" + std::to_string(k)));
             s.instruction =
                 text::trim(detail::field_string(j, "q_text")) + "\n" + render_choices(options);
             s.rationale_long = text::trim(detail::field_string(j, "taskB"));
             s.answer = AnswerValue::make(AnswerKind::choice_text, detail::field_string(j, "q_ans"));
             s.source = Family::ecqa;
             return s;
         }},
        {Family::strategyqa,
         {"qid", "question", "answer", "facts"},
         [](const json& j, Split, std::size_t) {
             Sample s;
             s.id = detail::field_string(j, "qid");
             s.instruction = text::trim(detail::field_string(j, "question"));
             std::string facts;
             for (const auto& f : j.at("facts")) {
                 if (!facts.empty()) facts += ' ';
                 facts += text::trim(f.get<std::string>());
             }
             s.rationale_long = facts;
             const auto& a = j.at("answer");
             s.answer = AnswerValue::make(AnswerKind::boolean,
                                          a.is_boolean() ? (a.get<bool>() ? "yes" : "no")
                                                         : detail::field_string(j, "answer"));
             s.source = Family::strategyqa;
             return s;
         }},
    };
    return table;
}

inline const FamilyLoader& loader_for(Family f) {
    for (const auto& l : loader_table())
        if (l.family == f) return l;
    throw ConfigError("no loader for family " + std::string(to_string(f)));
}

namespace detail {

// Visits each record of a JSON-lines file, or of a file holding one JSON
// array. `index` is the 1-based line number (JSONL) or array position.
inline void for_each_record(const std::string& path,
                            const std::function<void(const json&, std::size_t)>& fn) {
    const std::string content = text::read_file(path);
    const auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '[') {
        json arr;
        try {
            arr = json::parse(content);
        } catch (const json::parse_error& e) {
            throw DataError(path + ": malformed JSON array: " + e.what());
        }
        std::size_t n = 0;
        for (const auto& rec : arr) fn(rec, ++n);
        return;
    }
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::is_blank(line)) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error&) {
            throw DataError(path + ": malformed JSON on line " + std::to_string(lineno));
        }
        if (!rec.is_object())
            throw DataError(path + ": line " + std::to_string(lineno) + " is not a JSON object");
        fn(rec, lineno);
    }
}

} // namespace detail

/// Loads a family's native source file (JSONL or a JSON array).
inline Corpus ingest(const std::string& path, Family family, Split split) {
    const auto& loader = loader_for(family);
    Corpus corpus{family, split, {}};
    std::set<std::string> ids;
    detail::for_each_record(path, [&](const json& rec, std::size_t lineno) {
        for (const auto& f : loader.required_fields)
            if (!rec.contains(f))
                throw DataError(path + ": line " + std::to_string(lineno) + ": missing field '" +
                                f + "' required by family " + std::string(to_string(family)));
        Sample s;
        try {
            s = loader.map(rec, split, corpus.samples.size());
        } catch (const json::exception& e) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
        if (text::is_blank(s.instruction) || text::is_blank(s.rationale_long))
            throw DataError(path + ": line " + std::to_string(lineno) +
                            ": empty instruction or rationale");
        if (!ids.insert(s.id).second)
            throw DataError(path + ": line " + std::to_string(lineno) + ": duplicate id " + s.id);
        corpus.samples.push_back(std::move(s));
    });
    if (corpus.samples.empty()) throw DataError(path + ": no records");
    return corpus;
}

// ---------------------------------------------------------------------------
// Canonical corpus JSONL.

inline nlohmann::ordered_json to_json(const Sample& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["instruction"] = s.instruction;
    j["rationale_long"] = s.rationale_long;
    j["answer_kind"] = to_string(s.answer.kind);
    j["answer"] = s.answer.value;
    j["family"] = to_string(s.source);
    return j;
}

inline std::string serialize(const Corpus& corpus) {
    std::string out;
    for (const auto& s : corpus.samples) {
        out += to_json(s).dump();
        out += '\n';
    }
    return out;
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
    text::ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << serialize(corpus);
}

/// Reads a canonical corpus file. The split is not stored per line.
inline Corpus read_corpus(const std::string& path, Split split) {
    Corpus corpus{Family::gsm8k, split, {}};
    bool first = true;
    detail::for_each_record(path, [&](const json& rec, std::size_t lineno) {
        for (const char* f : {"id", "instruction", "rationale_long", "answer_kind", "answer", "family"})
            if (!rec.contains(f))
                throw DataError(path + ": line " + std::to_string(lineno) + ": missing field '" +
                                f + "' in canonical corpus");
        Sample s;
        s.id = rec.at("id").get<std::string>();
        s.instruction = rec.at("instruction").get<std::string>();
        s.rationale_long = rec.at("rationale_long").get<std::string>();
        s.answer = AnswerValue::make(parse_answer_kind(rec.at("answer_kind").get<std::string>()),
                                     rec.at("answer").get<std::string>());
        s.source = parse_family(rec.at("family").get<std::string>());
        if (first) corpus.family = s.source;
        first = false;
        corpus.samples.push_back(std::move(s));
    });
    if (corpus.samples.empty()) throw DataError(path + ": no records");
    validate(corpus);
    return corpus;
}

/// Deterministic re-split of a StrategyQA corpus (whose test split has no
/// public labels) into train and test parts.
inline std::pair<Corpus, Corpus> split_strategyqa(const Corpus& corpus, std::size_t train_size,
                                                  std::uint64_t seed) {
    if (corpus.family != Family::strategyqa)
        throw PreconditionError("split_strategyqa requires a StrategyQA corpus");
    if (train_size >= corpus.size())
        throw PreconditionError("train_size " + std::to_string(train_size) +
                                " must be smaller than corpus size " +
                                std::to_string(corpus.size()));
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    text::seeded_shuffle(order, seed);
    Corpus train{corpus.family, Split::train, {}};
    Corpus test{corpus.family, Split::test, {}};
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < train_size ? train : test).samples.push_back(corpus.samples[order[i]]);
    return {std::move(train), std::move(test)};
}

} // namespace c3ot
