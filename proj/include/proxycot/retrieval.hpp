#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "proxycot/error.hpp"
#include "proxycot/scoring.hpp"

namespace proxycot {

/// Query and sentence terms share the answer-normalization tokenizer.
inline std::vector<std::string> lexical_terms(std::string_view s) { return answer_tokens(s); }

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over sentences; sentence ids are positions in the input list.
class Bm25Index {
public:
    struct Posting {
        std::size_t sentence;
        std::uint32_t tf;
    };

    static Bm25Index build(std::span<const std::string> sentences, Bm25Params params = {}) {
        if (params.k1 <= 0.0 || params.b < 0.0 || params.b > 1.0)
            throw Error(Errc::invalid_argument, "bm25", "k1 must be positive and b in [0, 1]");
        Bm25Index index;
        index.params_ = params;
        index.doc_len_.reserve(sentences.size());
        std::size_t total = 0;
        for (std::size_t sid = 0; sid < sentences.size(); ++sid) {
            auto terms = lexical_terms(sentences[sid]);
            index.doc_len_.push_back(terms.size());
            total += terms.size();
            std::unordered_map<std::string, std::uint32_t> tf;
            for (auto& t : terms) ++tf[std::move(t)];
            for (auto& [term, count] : tf) index.postings_[term].push_back({sid, count});
        }
        // Postings are appended in sentence order, so each list is sorted.
        index.avg_len_ = sentences.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(sentences.size());
        return index;
    }

    std::size_t size() const noexcept { return doc_len_.size(); }
    double avg_len() const noexcept { return avg_len_; }
    std::size_t doc_len(std::size_t sid) const { return doc_len_.at(sid); }
    const Bm25Params& params() const noexcept { return params_; }

    std::size_t doc_freq(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); always positive.
    double idf(const std::string& term) const {
        auto n = static_cast<double>(size());
        auto df = static_cast<double>(doc_freq(term));
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

    std::uint32_t term_freq(const std::string& term, std::size_t sid) const {
        auto it = postings_.find(term);
        if (it == postings_.end()) return 0;
        const auto& list = it->second;
        auto pos = std::lower_bound(list.begin(), list.end(), sid,
                                    [](const Posting& p, std::size_t s) { return p.sentence < s; });
        return pos != list.end() && pos->sentence == sid ? pos->tf : 0;
    }

    /// Score of one sentence; repeated query terms contribute repeatedly.
    double score(std::span<const std::string> query_terms, std::size_t sid) const {
        if (sid >= size()) throw Error(Errc::unknown_sentence, std::to_string(sid), "sentence not in index");
        double s = 0.0;
        for (const auto& term : query_terms) {
            auto tf = term_freq(term, sid);
            if (tf == 0) continue;
            s += idf(term) * term_weight(tf, doc_len_[sid]);
        }
        return s;
    }

    /// Scores of every sentence, accumulated over postings.
    std::vector<double> scores(std::span<const std::string> query_terms) const {
        std::vector<double> out(size(), 0.0);
        for (const auto& term : query_terms) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            double w = idf(term);
            for (const auto& p : it->second) out[p.sentence] += w * term_weight(p.tf, doc_len_[p.sentence]);
        }
        return out;
    }

private:
    double term_weight(std::uint32_t tf, std::size_t len) const {
        double f = tf;
        double norm = avg_len_ > 0.0 ? static_cast<double>(len) / avg_len_ : 0.0;
        return f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * norm));
    }

    Bm25Params params_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::size_t> doc_len_;
    double avg_len_ = 0.0;
};

namespace detail {
inline std::vector<std::size_t> rank_by_score(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> ids(scores.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    k = std::min(k, ids.size());
    auto cmp = [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), cmp);
    ids.resize(k);
    return ids;
}
}  // namespace detail

/// Top-k sentence ids by BM25, ties broken by ascending id.
inline std::vector<std::size_t> top_k_lexical(const Bm25Index& index, std::string_view question, std::size_t k) {
    if (k == 0) throw Error(Errc::invalid_argument, "k", "k must be at least 1");
    auto terms = lexical_terms(question);
    return detail::rank_by_score(index.scores(terms), k);
}

struct EmbeddingVector {
    std::vector<double> values;
    std::size_t source_id = 0;
};

inline double norm(const EmbeddingVector& v) {
    double s = 0.0;
    for (double x : v.values) s += x * x;
    return std::sqrt(s);
}

inline void check_finite(const EmbeddingVector& v) {
    for (double x : v.values)
        if (!std::isfinite(x)) throw Error(Errc::non_finite, std::to_string(v.source_id), "non-finite component");
}

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw Error(Errc::dimension_mismatch, std::to_string(b.source_id),
                    std::to_string(a.values.size()) + " vs " + std::to_string(b.values.size()));
    double na = norm(a);
    double nb = norm(b);
    if (na == 0.0) throw Error(Errc::zero_vector, std::to_string(a.source_id), "zero-norm vector");
    if (nb == 0.0) throw Error(Errc::zero_vector, std::to_string(b.source_id), "zero-norm vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return dot / (na * nb);
}

/// Candidate source ids by descending cosine similarity, ties by ascending id.
inline std::vector<std::size_t> top_k_semantic(const EmbeddingVector& question,
                                               std::span<const EmbeddingVector> candidates, std::size_t k) {
    if (k == 0) throw Error(Errc::invalid_argument, "k", "k must be at least 1");
    if (candidates.empty()) throw Error(Errc::invalid_argument, "candidates", "candidate list is empty");
    check_finite(question);
    struct Scored {
        double sim;
        std::size_t id;
    };
    std::vector<Scored> scored;
    scored.reserve(candidates.size());
    for (const auto& c : candidates) {
        check_finite(c);
        scored.push_back({cosine_similarity(question, c), c.source_id});
    }
    k = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const Scored& a, const Scored& b) { return a.sim != b.sim ? a.sim > b.sim : a.id < b.id; });
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].id);
    return out;
}

}  // namespace proxycot
