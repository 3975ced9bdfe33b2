#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "proxycot/retrieval.hpp"

using namespace proxycot;

namespace {

// Straightforward second implementation of Okapi BM25: recount every term in
// every sentence from the token lists.
std::vector<double> brute_force_bm25(const std::vector<std::string>& sentences, const std::string& query,
                                     double k1 = 1.2, double b = 0.75) {
    std::vector<std::vector<std::string>> docs;
    for (const auto& s : sentences) docs.push_back(answer_tokens(s));
    double n = static_cast<double>(docs.size());
    double avg = 0;
    for (const auto& d : docs) avg += static_cast<double>(d.size());
    avg /= n;
    std::vector<double> out(docs.size(), 0.0);
    for (const auto& term : answer_tokens(query)) {
        double df = 0;
        for (const auto& d : docs) df += std::count(d.begin(), d.end(), term) > 0 ? 1 : 0;
        double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (std::size_t i = 0; i < docs.size(); ++i) {
            double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), term));
            if (tf == 0) continue;
            double len = static_cast<double>(docs[i].size());
            out[i] += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg));
        }
    }
    return out;
}

std::vector<std::size_t> brute_force_rank(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < scores.size(); ++i) ids.push_back(i);
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    ids.resize(std::min(k, ids.size()));
    return ids;
}

std::vector<std::string> random_sentences(std::mt19937_64& rng, std::size_t n) {
    static const std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta", "Paris", "the", "river",
                                                   "composer", "taught", "music", "Argentina", "folk"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string s;
        for (std::size_t w = 1 + rng() % 8; w > 0; --w) s += vocab[rng() % vocab.size()] + " ";
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST(Bm25, NoOverlapScoresZero) {
    std::vector<std::string> s{"alpha beta", "gamma"};
    auto index = Bm25Index::build(s);
    std::vector<std::string> q{"zeta"};
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(index.score(q, i), 0.0);
    EXPECT_THROW(index.score(q, 5), Error);
}

TEST(Bm25, SingleSentenceClosedForm) {
    std::vector<std::string> s{"music teacher music"};
    auto index = Bm25Index::build(s);
    auto q = lexical_terms("music teacher music");
    // N = 1, df = 1: idf = ln(1 + 0.5/1.5); len = avg so the length norm is 1.
    double idf = std::log(1.0 + 0.5 / 1.5);
    double w_music = 2.0 * 2.2 / (2.0 + 1.2);
    double w_teacher = 1.0 * 2.2 / (1.0 + 1.2);
    EXPECT_NEAR(index.score(q, 0), idf * (w_music + w_teacher + w_music), 1e-12);
}

TEST(Bm25, MatchesBruteForceScorer) {
    std::mt19937_64 rng(1);
    auto sentences = random_sentences(rng, 100);
    auto index = Bm25Index::build(sentences);
    for (int t = 0; t < 20; ++t) {
        auto query = random_sentences(rng, 1)[0];
        auto expected = brute_force_bm25(sentences, query);
        auto got = index.scores(lexical_terms(query));
        auto terms = lexical_terms(query);
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            EXPECT_NEAR(got[i], expected[i], 1e-9);
            EXPECT_NEAR(index.score(terms, i), expected[i], 1e-9);
        }
    }
}

TEST(Bm25, MonotoneInTermFrequency) {
    // "alpha" replaces a filler word, so the length stays fixed.
    std::vector<std::string> a{"alpha filler filler", "beta gamma delta"};
    std::vector<std::string> b{"alpha alpha filler", "beta gamma delta"};
    auto q = lexical_terms("alpha");
    EXPECT_GT(Bm25Index::build(b).score(q, 0), Bm25Index::build(a).score(q, 0));
}

TEST(Bm25, RebuildDeterminism) {
    std::mt19937_64 rng(2);
    auto sentences = random_sentences(rng, 40);
    auto q = lexical_terms("alpha music folk");
    EXPECT_EQ(Bm25Index::build(sentences).scores(q), Bm25Index::build(sentences).scores(q));
}

TEST(TopKLexical, TiesAndLength) {
    std::vector<std::string> s{"beta", "alpha", "alpha", "gamma"};
    auto index = Bm25Index::build(s);
    EXPECT_EQ(top_k_lexical(index, "alpha", 2), (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(top_k_lexical(index, "alpha", 10), (std::vector<std::size_t>{1, 2, 0, 3}));
    EXPECT_EQ(top_k_lexical(index, "zzz", 10), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_THROW(top_k_lexical(index, "alpha", 0), Error);
}

TEST(TopKLexical, MatchesBruteForceSort) {
    std::mt19937_64 rng(3);
    auto sentences = random_sentences(rng, 20);
    auto index = Bm25Index::build(sentences);
    for (int t = 0; t < 20; ++t) {
        auto query = random_sentences(rng, 1)[0];
        EXPECT_EQ(top_k_lexical(index, query, 3), brute_force_rank(brute_force_bm25(sentences, query), 3));
    }
}

TEST(TopKSemantic, CosineIdentityAndOrthogonality) {
    EmbeddingVector q{{1, 0, 0}, 99};
    std::vector<EmbeddingVector> c{{{0, 1, 0}, 0}, {{2, 0, 0}, 1}, {{1, 1, 0}, 2}};
    EXPECT_NEAR(cosine_similarity(q, c[1]), 1.0, 1e-15);
    EXPECT_EQ(cosine_similarity(q, c[0]), 0.0);
    EXPECT_EQ(top_k_semantic(q, c, 3), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(TopKSemantic, Errors) {
    EmbeddingVector q{{1, 0}, 0};
    std::vector<EmbeddingVector> bad_dim{{{1, 0, 0}, 0}};
    std::vector<EmbeddingVector> zero{{{0, 0}, 0}};
    std::vector<EmbeddingVector> nan{{{std::nan(""), 1}, 0}};
    std::vector<EmbeddingVector> none;
    auto code_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::invalid_argument;
    };
    EXPECT_EQ(code_of([&] { top_k_semantic(q, bad_dim, 1); }), Errc::dimension_mismatch);
    EXPECT_EQ(code_of([&] { top_k_semantic(q, zero, 1); }), Errc::zero_vector);
    EXPECT_EQ(code_of([&] { top_k_semantic(EmbeddingVector{{0, 0}, 0}, bad_dim, 1); }), Errc::dimension_mismatch);
    EXPECT_EQ(code_of([&] { top_k_semantic(q, nan, 1); }), Errc::non_finite);
    EXPECT_THROW(top_k_semantic(q, none, 1), Error);
}

TEST(TopKSemantic, MatchesBruteForceAndIsScaleInvariant) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        EmbeddingVector q{std::vector<double>(16), 0};
        for (auto& x : q.values) x = g(rng);
        std::vector<EmbeddingVector> c(50);
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i].source_id = i;
            c[i].values.resize(16);
            for (auto& x : c[i].values) x = g(rng);
        }
        std::vector<double> sims;
        for (const auto& v : c) {
            double dot = 0, nq = 0, nv = 0;
            for (std::size_t d = 0; d < 16; ++d) {
                dot += q.values[d] * v.values[d];
                nq += q.values[d] * q.values[d];
                nv += v.values[d] * v.values[d];
            }
            sims.push_back(dot / std::sqrt(nq * nv));
        }
        auto expected = brute_force_rank(sims, 10);
        EXPECT_EQ(top_k_semantic(q, c, 10), expected);

        double scale = 0.1 + static_cast<double>(rng() % 1000) / 7.0;
        auto scaled = c;
        for (auto& v : scaled)
            for (auto& x : v.values) x *= scale;
        EXPECT_EQ(top_k_semantic(q, scaled, 50), top_k_semantic(q, c, 50));
    }
}
