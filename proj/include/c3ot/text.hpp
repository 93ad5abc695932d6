#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "c3ot/error.hpp"

namespace c3ot::text {

namespace detail {

// Decodes one UTF-8 code point at `pos`, advancing `pos`. Malformed bytes
// decode as U+FFFD and consume a single byte.
inline char32_t decode_utf8(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    auto cont = [&](std::size_t i) -> int {
        if (pos + i >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[pos + i]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        ++pos;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0) {
        const int c1 = cont(1);
        if (c1 >= 0) {
            pos += 2;
            return (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
        }
    } else if ((b0 & 0xF0) == 0xE0) {
        const int c1 = cont(1), c2 = cont(2);
        if (c1 >= 0 && c2 >= 0) {
            pos += 3;
            return (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
        }
    } else if ((b0 & 0xF8) == 0xF0) {
        const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
        if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
            pos += 4;
            return (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) | (char32_t(c2) << 6) |
                   char32_t(c3);
        }
    }
    ++pos;
    return 0xFFFD;
}

} // namespace detail

/// Unicode White_Space property.
constexpr bool is_unicode_space(char32_t c) noexcept {
    switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
        return true;
    default:
        return c >= 0x2000 && c <= 0x200A;
    }
}

/// Splits on runs of Unicode whitespace. This is the toolkit's word unit.
inline std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> words;
    std::size_t pos = 0;
    std::size_t start = std::string_view::npos;
    while (pos < s.size()) {
        const std::size_t here = pos;
        const char32_t c = detail::decode_utf8(s, pos);
        if (is_unicode_space(c)) {
            if (start != std::string_view::npos) {
                words.push_back(s.substr(start, here - start));
                start = std::string_view::npos;
            }
        } else if (start == std::string_view::npos) {
            start = here;
        }
    }
    if (start != std::string_view::npos) words.push_back(s.substr(start));
    return words;
}

inline std::size_t word_count(std::string_view s) { return split_words(s).size(); }

inline std::string join(std::span<const std::string_view> parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string trim(std::string_view s) {
    const auto words = split_words(s);
    if (words.empty()) return {};
    const auto* first = words.front().data();
    const auto* last = words.back().data() + words.back().size();
    return std::string(first, last);
}

inline bool is_blank(std::string_view s) { return split_words(s).empty(); }

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
        return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
    });
    return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

/// Sentence segmentation: a sentence ends at '.', '!' or '?' followed by
/// whitespace (or end of text). "<<...>>" calculator annotations are opaque.
/// Returned views exclude surrounding whitespace.
inline std::vector<std::string_view> split_sentences(std::string_view s) {
    std::vector<std::string_view> out;
    auto push = [&](std::size_t b, std::size_t e) {
        const auto piece = s.substr(b, e - b);
        const auto words = split_words(piece);
        if (words.empty()) return;
        const auto* first = words.front().data();
        const auto* last = words.back().data() + words.back().size();
        out.emplace_back(first, static_cast<std::size_t>(last - first));
    };
    std::size_t begin = 0;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s.compare(i, 2, "<<") == 0) {
            const auto close = s.find(">>", i + 2);
            if (close != std::string_view::npos) {
                i = close + 2;
                continue;
            }
        }
        const char c = s[i];
        if (c == '.' || c == '!' || c == '?') {
            std::size_t next = i + 1;
            if (next >= s.size()) {
                push(begin, next);
                begin = next;
            } else {
                std::size_t probe = next;
                if (is_unicode_space(detail::decode_utf8(s, probe))) {
                    push(begin, next);
                    begin = next;
                }
            }
        }
        ++i;
    }
    if (begin < s.size()) push(begin, s.size());
    return out;
}

/// Lowercase hex SHA-256 of the input bytes.
inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

/// Creates the parent directory of `path` if it has one.
inline void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

/// Uniform integer in [0, bound) from a 64-bit engine, identical on every
/// platform (std::uniform_int_distribution is implementation-defined).
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

/// Portable Fisher-Yates shuffle under a seed.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic value in [0, 1) derived from a string key.
inline double unit_hash(std::string_view key) {
    const std::string h = sha256_hex(key);
    std::uint64_t v = std::stoull(h.substr(0, 16), nullptr, 16);
    return static_cast<double>(splitmix64(v) >> 11) * 0x1.0p-53;
}

} // namespace c3ot::text
