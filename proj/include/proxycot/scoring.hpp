#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "proxycot/error.hpp"
#include "proxycot/text.hpp"

namespace proxycot {

/// SQuAD-style answer normalization: lowercase, strip ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace. Idempotent.
inline std::string normalize_answer(std::string_view raw) {
    std::string stripped;
    stripped.reserve(raw.size());
    for (char c : raw) {
        if (text::is_punct(c)) continue;
        stripped.push_back(text::to_lower(c));
    }
    std::string out;
    for (auto tok : text::split_whitespace(stripped)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out.append(tok);
    }
    return out;
}

/// Normalized answer tokens. Lexical retrieval uses the same tokenization.
inline std::vector<std::string> answer_tokens(std::string_view raw) {
    std::vector<std::string> out;
    auto normalized = normalize_answer(raw);
    for (auto tok : text::split_whitespace(normalized)) out.emplace_back(tok);
    return out;
}

enum class MatchMode { normalized, raw };

namespace detail {
inline void require_gold(std::span<const std::string> gold) {
    if (gold.empty()) throw Error(Errc::invalid_argument, "gold", "gold answer list is empty");
}

inline double f1_tokens(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
    if (gold.empty() || pred.empty()) return gold.empty() && pred.empty() ? 1.0 : 0.0;
    std::unordered_map<std::string_view, long> counts;
    for (const auto& t : gold) ++counts[t];
    long common = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    double recall = static_cast<double>(common) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}
}  // namespace detail

inline int exact_match(std::span<const std::string> gold, std::string_view pred,
                       MatchMode mode = MatchMode::normalized) {
    detail::require_gold(gold);
    if (mode == MatchMode::raw) {
        auto p = text::trim(pred);
        return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return text::trim(g) == p; });
    }
    auto p = normalize_answer(pred);
    return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

/// Bag-of-token F1, maximized over the acceptable gold answers.
inline double token_f1(std::span<const std::string> gold, std::string_view pred) {
    detail::require_gold(gold);
    auto pred_tokens = answer_tokens(pred);
    double best = 0.0;
    for (const auto& g : gold) best = std::max(best, detail::f1_tokens(answer_tokens(g), pred_tokens));
    return best;
}

/// Verifiable reward: F1 plus the exact-match indicator, in [0, 2].
inline double reward(std::span<const std::string> gold, std::string_view pred,
                     MatchMode mode = MatchMode::normalized) {
    return token_f1(gold, pred) + exact_match(gold, pred, mode);
}

struct ScoredAnswer {
    std::string raw;
    std::string normalized;
    int em = 0;
    double f1 = 0.0;
    double reward = 0.0;
};

inline ScoredAnswer score_answer(std::span<const std::string> gold, std::string_view pred,
                                 MatchMode mode = MatchMode::normalized) {
    ScoredAnswer s;
    s.raw = std::string(pred);
    s.normalized = normalize_answer(pred);
    s.em = exact_match(gold, pred, mode);
    s.f1 = token_f1(gold, pred);
    s.reward = s.f1 + s.em;
    return s;
}

inline constexpr std::string_view kDefaultAnswerMarker = "Final Answer:";

struct AnswerMarker {
    std::string marker{kDefaultAnswerMarker};
};

/// Position of the last marker occurrence, if any.
inline std::optional<std::size_t> find_marker(std::string_view generation, const AnswerMarker& cfg) {
    if (cfg.marker.empty()) return std::nullopt;
    auto pos = generation.rfind(cfg.marker);
    if (pos == std::string_view::npos) return std::nullopt;
    return pos;
}

inline std::optional<std::string> try_extract_answer(std::string_view generation, const AnswerMarker& cfg = {}) {
    auto pos = find_marker(generation, cfg);
    if (!pos) return std::nullopt;
    auto rest = generation.substr(*pos + cfg.marker.size());
    // The answer block ends at the first blank line.
    std::size_t line_start = 0;
    std::size_t cut = rest.size();
    bool seen_content = false;
    while (line_start < rest.size()) {
        auto nl = rest.find('\n', line_start);
        auto line = rest.substr(line_start, nl == std::string_view::npos ? std::string_view::npos : nl - line_start);
        if (text::trim(line).empty()) {
            if (seen_content) {
                cut = line_start;
                break;
            }
        } else {
            seen_content = true;
        }
        if (nl == std::string_view::npos) break;
        line_start = nl + 1;
    }
    auto answer = text::trim(rest.substr(0, cut));
    if (answer.empty()) return std::nullopt;
    return std::string(answer);
}

/// Text after the last final-answer marker. Throws NoAnswerFound when the
/// marker is absent or nothing follows it.
inline std::string extract_answer(std::string_view generation, const AnswerMarker& cfg = {}) {
    auto answer = try_extract_answer(generation, cfg);
    if (!answer) throw Error(Errc::no_answer_found, cfg.marker, "no final answer after marker");
    return *answer;
}

}  // namespace proxycot
