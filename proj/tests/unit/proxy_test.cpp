#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "proxycot/longctx.hpp"
#include "proxycot/proxy.hpp"
#include "test_support.hpp"

using namespace proxycot;
using proxycot::testing::slurp;
using proxycot::testing::uniform_doc;

namespace {

const std::string kGolden = std::string(PROXYCOT_TEST_DATA_DIR) + "/golden/";

Corpus gianneo_corpus() {
    Corpus c;
    c.add({"Luis Gianneo",
           "Luis Gianneo",
           {"Luis Gianneo (1897–1968) was an Argentine composer, pianist and conductor.",
            "He was born in Buenos Aires.",
            "As music educator, he was the teacher of composers Ariel Ramirez, Juan Carlos Zorzi, Virtú Maragno, "
            "Pedro Ignacio Calderón and Rodolfo Arizaga, among others."},
           {"Ariel Ramírez"}});
    c.add({"Ariel Ramírez",
           "Ariel Ramírez",
           {"Ariel Ramírez (1921–2010) was an Argentine composer, pianist and music director.",
            "He is considered a chief exponent of Argentine folk music."},
           {}});
    return c;
}

QaInstance gianneo_instance() {
    QaInstance q;
    q.id = "gianneo";
    q.question = "Luis Gianneo was teacher of which chief exponent of Argentine folk music?";
    q.answers = {"Ariel Ramírez"};
    q.supporting = {{"Luis Gianneo", 2}, {"Luis Gianneo", 0}};
    q.seed_docs = {"Luis Gianneo", "Ariel Ramírez"};
    return q;
}

ArticleMetadata legendre() {
    return {"a1", "Existence and uniqueness for Legendre curves", {"Tomonori Fukunaga", "Masatomo Takahashi"}, 9, {}};
}

ArticleMetadata neuron() {
    return {"a2",
            "Effect of higher-order interactions on synchronization of neuron models with electromagnetic induction",
            {"Mohanasubha Ramasamy", "Subhasri Devarajan", "Suresh Kumarasamy", "Karthikeyan Rajagopal"},
            37,
            {}};
}

struct Fixture {
    Corpus corpus;
    QaInstance instance;
    ContextBundle bundle;
};

// Oracle of `oracle_sentences` two-word sentences in doc "gold" plus
// `distractors` documents of 10 two-word sentences each.
Fixture noise_fixture(std::size_t oracle_sentences, std::size_t distractors) {
    Fixture f;
    f.corpus.add(uniform_doc("gold", oracle_sentences, 2));
    f.instance.id = "noise";
    f.instance.question = "?";
    f.instance.answers = {"x"};
    f.instance.seed_docs = {"gold"};
    for (std::size_t i = 0; i < oracle_sentences; ++i) f.instance.supporting.push_back({"gold", i});
    std::vector<std::string> ids{"gold"};
    for (std::size_t d = 0; d < distractors; ++d) {
        auto id = "x" + std::to_string(d);
        f.corpus.add(uniform_doc(id, 10, 2));
        ids.push_back(id);
    }
    f.bundle = make_bundle(f.corpus, "noise", ids, TokenCounter::whitespace());
    return f;
}

std::vector<std::string> oracle_only(const ProxyContext& p) {
    std::vector<std::string> out;
    for (const auto& s : p.segments)
        if (!s.source.noise) out.push_back(s.text);
    return out;
}

std::vector<std::string> texts(const ProxyContext& p) {
    std::vector<std::string> out;
    for (const auto& s : p.segments) out.push_back(s.text);
    return out;
}

}  // namespace

TEST(AnnotationProxy, GianneoEvidence) {
    auto c = gianneo_corpus();
    auto p = annotation_proxy(gianneo_instance(), c, TokenCounter::whitespace());
    EXPECT_EQ(p.kind, ProxyKind::annotation);
    EXPECT_EQ(p.text,
              "Luis Gianneo (1897–1968) was an Argentine composer, pianist and conductor. As music educator, he was "
              "the teacher of composers Ariel Ramirez, Juan Carlos Zorzi, Virtú Maragno, Pedro Ignacio Calderón and "
              "Rodolfo Arizaga, among others.");
    EXPECT_EQ(p.token_count, TokenCounter::whitespace().count(p.text));
    auto prov = p.provenance();
    ASSERT_EQ(prov.size(), 2u);
    for (const auto& e : prov) EXPECT_EQ(e.doc_id, "Luis Gianneo");
    EXPECT_EQ(prov[0].sentence, 0u);
    EXPECT_EQ(prov[1].sentence, 2u);
    EXPECT_FALSE(p.noise_ratio.has_value());
}

TEST(AnnotationProxy, DocumentThenSentenceOrder) {
    Corpus c;
    c.add({"B", "B", {"S1 from doc B.", "S2 from doc B."}, {}});
    c.add({"A", "A", {"S1 from doc A."}, {}});
    QaInstance q;
    q.id = "q";
    q.supporting = {{"A", 0}, {"B", 1}, {"B", 0}};
    auto p = annotation_proxy(q, c, TokenCounter::whitespace());
    EXPECT_EQ(p.text, "S1 from doc A. S1 from doc B. S2 from doc B.");
    q.supporting.clear();
    try {
        annotation_proxy(q, c, TokenCounter::whitespace());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::empty_support);
    }
}

TEST(MetadataProxy, LegendreGolden) {
    QaInstance q;
    q.id = "scitrek";
    q.seed_docs = {"a1"};
    q.metadata = std::vector<ArticleMetadata>{legendre()};
    auto p = metadata_proxy(q, TokenCounter::whitespace());
    EXPECT_EQ(p.text, slurp(kGolden + "metadata_legendre.txt"));
    EXPECT_NE(p.text.find("There are 6 words in the title (separated by spaces)."), std::string::npos);
    EXPECT_NE(p.text.find("There are 2 authors: Tomonori Fukunaga, Masatomo Takahashi"), std::string::npos);
    EXPECT_NE(p.text.find("There are 9 references in the reference section."), std::string::npos);
    EXPECT_NE(p.text.find("The other provided articles are not cited by this article."), std::string::npos);
    EXPECT_EQ(p.segments.size(), 5u);
    EXPECT_EQ(p.segments[0].source.field, "title");
}

TEST(MetadataProxy, TwoArticleCitationGolden) {
    QaInstance q;
    q.id = "scitrek2";
    q.seed_docs = {"a1", "a2"};
    auto a = legendre();
    a.cites = {neuron().title};
    q.metadata = std::vector<ArticleMetadata>{a, neuron()};
    EXPECT_EQ(metadata_proxy(q, TokenCounter::whitespace()).text, slurp(kGolden + "metadata_two_articles.txt"));
}

TEST(MetadataProxy, LiteralTemplateAndErrors) {
    QaInstance q;
    q.id = "one";
    q.metadata = std::vector<ArticleMetadata>{{"", "Solitons", {"A"}, 1, {}}};
    auto p = metadata_proxy(q, TokenCounter::whitespace());
    EXPECT_NE(p.text.find("There are 1 words in the title (separated by spaces)."), std::string::npos);
    q.metadata.reset();
    EXPECT_THROW(metadata_proxy(q, TokenCounter::whitespace()), Error);
    q.seed_docs = {"a1", "a2"};
    q.metadata = std::vector<ArticleMetadata>{legendre()};
    try {
        metadata_proxy(q, TokenCounter::whitespace());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::missing_metadata);
        EXPECT_EQ(e.subject(), "a2");
    }
}

TEST(RandomProxy, FillRules) {
    auto f = noise_fixture(3, 2);
    auto counter = TokenCounter::whitespace();
    auto empty = random_proxy(f.instance, f.corpus, f.bundle, 1, 5, counter);
    EXPECT_TRUE(empty.text.empty());
    EXPECT_FALSE(empty.warnings.empty());

    auto all = random_proxy(f.instance, f.corpus, f.bundle, 1000, 5, counter);
    EXPECT_EQ(all.segments.size(), 23u);
    auto all_texts = texts(all);
    std::set<std::string> unique(all_texts.begin(), all_texts.end());
    EXPECT_EQ(unique.size(), 23u);

    auto again = random_proxy(f.instance, f.corpus, f.bundle, 9, 5, counter);
    EXPECT_EQ(again.text, random_proxy(f.instance, f.corpus, f.bundle, 9, 5, counter).text);
    EXPECT_EQ(again.segments.size(), 4u);  // 2 tokens per sentence
    EXPECT_LE(again.token_count, 9u);

    ContextBundle none;
    none.instance_id = "noise";
    EXPECT_THROW(random_proxy(f.instance, f.corpus, none, 10, 1, counter), Error);
}

TEST(RetrievalProxy, SingleMatchAndZeroBudget) {
    Corpus c;
    c.add({"d", "d", {"Alpha beta.", "Gamma delta.", "Epsilon zeta."}, {}});
    QaInstance q;
    q.id = "r";
    q.question = "What about gamma?";
    auto bundle = make_bundle(c, "r", {"d"}, TokenCounter::whitespace());
    auto p = retrieval_proxy(q, c, bundle, RetrievalMode::bm25, 2, {}, TokenCounter::whitespace());
    EXPECT_EQ(p.text, "Gamma delta.");
    EXPECT_EQ(p.kind, ProxyKind::bm25);
    auto z = retrieval_proxy(q, c, bundle, RetrievalMode::bm25, 0, {}, TokenCounter::whitespace());
    EXPECT_TRUE(z.text.empty());
    EXPECT_FALSE(z.warnings.empty());
    EXPECT_THROW(retrieval_proxy(q, c, bundle, RetrievalMode::embedding, 5, {}, TokenCounter::whitespace()), Error);
}

// Oracle: exhaustively score every sentence with a fresh index, sort by
// (score desc, id asc), take the 5 best (every sentence has 3 words and the
// budget is 15 tokens), and compare memberships and reading order.
TEST(RetrievalProxy, Bm25FillMatchesExhaustiveOracle) {
    std::mt19937_64 rng(8);
    const std::vector<std::string> vocab = {"river", "music", "folk", "composer", "city", "north", "south", "piano"};
    for (int trial = 0; trial < 10; ++trial) {
        Corpus c;
        std::vector<std::string> ids;
        for (int d = 0; d < 3; ++d) {
            Document doc{"doc" + std::to_string(d), "T", {}, {}};
            for (int s = 0; s < 10; ++s)
                doc.body.push_back(vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()] + " " +
                                   vocab[rng() % vocab.size()]);
            ids.push_back(doc.id);
            c.add(doc);
        }
        QaInstance q;
        q.id = "q";
        q.question = vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()];
        auto bundle = make_bundle(c, "q", ids, TokenCounter::whitespace());
        auto p = retrieval_proxy(q, c, bundle, RetrievalMode::bm25, 15, {}, TokenCounter::whitespace());

        std::vector<std::string> all;
        for (const auto& id : ids)
            for (const auto& s : c.at(id).body) all.push_back(s);
        auto index = Bm25Index::build(all);
        auto terms = lexical_terms(q.question);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t i = 0; i < all.size(); ++i) scored.push_back({-index.score(terms, i), i});
        std::sort(scored.begin(), scored.end());
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < 5; ++i) chosen.push_back(scored[i].second);
        std::sort(chosen.begin(), chosen.end());
        ASSERT_EQ(p.segments.size(), 5u);
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_EQ(p.segments[i].source.doc_id, ids[chosen[i] / 10]);
            EXPECT_EQ(p.segments[i].source.sentence, chosen[i] % 10);
        }
    }
}

TEST(RetrievalProxy, EmbeddingModeUsesEmbedder) {
    Corpus c;
    c.add({"d", "d", {"one", "two", "three"}, {}});
    QaInstance q;
    q.id = "e";
    q.question = "two?";
    auto bundle = make_bundle(c, "e", {"d"}, TokenCounter::whitespace());
    RetrievalConfig cfg;
    cfg.embedder = [](std::span<const std::string> texts) {
        std::vector<EmbeddingVector> out;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            bool two = texts[i].find("two") != std::string::npos;
            out.push_back({{two ? 1.0 : 0.0, 1.0, static_cast<double>(i) * 0.01}, i});
        }
        return out;
    };
    auto p = retrieval_proxy(q, c, bundle, RetrievalMode::embedding, 1, cfg, TokenCounter::whitespace());
    EXPECT_EQ(p.kind, ProxyKind::embedding);
    EXPECT_EQ(p.text, "two");
}

TEST(NoisyProxy, ZeroRatioKeepsOracle) {
    auto f = noise_fixture(4, 3);
    auto counter = TokenCounter::whitespace();
    auto oracle = annotation_proxy(f.instance, f.corpus, counter);
    auto p = noisy_proxy(oracle, f.corpus, f.bundle, 0, 1, counter);
    EXPECT_EQ(p.kind, ProxyKind::noisy);
    EXPECT_EQ(p.text, oracle.text);
    EXPECT_EQ(p.noise_ratio, (NoiseRatio{1, 0}));
}

TEST(NoisyProxy, CountingRuleAndOrderPreservation) {
    auto f = noise_fixture(4, 3);
    auto counter = TokenCounter::whitespace();
    auto oracle = annotation_proxy(f.instance, f.corpus, counter);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto p = noisy_proxy(oracle, f.corpus, f.bundle, 2, seed, counter);
        EXPECT_EQ(p.segments.size(), 12u);
        EXPECT_GT(p.token_count, oracle.token_count);
        EXPECT_EQ(oracle_only(p), texts(oracle));
        for (const auto& s : p.segments)
            if (s.source.noise) {
                EXPECT_NE(s.source.doc_id, "gold");
            }
        EXPECT_EQ(p.noise_ratio, (NoiseRatio{1, 2}));
        EXPECT_EQ(noisy_proxy(oracle, f.corpus, f.bundle, 2, seed, counter).text, p.text);
    }
}

TEST(NoisyProxy, TokenCountsRiseWithRatio) {
    auto f = noise_fixture(4, 5);
    auto counter = TokenCounter::whitespace();
    auto oracle = annotation_proxy(f.instance, f.corpus, counter);
    std::size_t prev = oracle.token_count;
    for (std::size_t k : {1u, 2u, 5u}) {
        auto p = noisy_proxy(oracle, f.corpus, f.bundle, k, 3, counter);
        EXPECT_GT(p.token_count, prev);
        prev = p.token_count;
    }
}

TEST(NoisyProxy, InsufficientPoolTakesAllAndFlags) {
    auto f = noise_fixture(4, 1);  // 10 candidate noise sentences
    auto counter = TokenCounter::whitespace();
    auto oracle = annotation_proxy(f.instance, f.corpus, counter);
    auto p = noisy_proxy(oracle, f.corpus, f.bundle, 5, 1, counter);
    EXPECT_EQ(p.segments.size(), 14u);
    EXPECT_TRUE(noise_pool_exhausted(p));
    auto corpus_wide = noisy_proxy(oracle, f.corpus, f.bundle, 2, 1, counter, NoisePool::corpus);
    EXPECT_EQ(corpus_wide.segments.size(), 12u);
}

TEST(NoisyProxy, MetadataOracleAndKindCheck) {
    auto f = noise_fixture(2, 2);
    auto counter = TokenCounter::whitespace();
    f.instance.metadata = std::vector<ArticleMetadata>{{"gold", "A title", {"X"}, 3, {}}};
    auto meta = metadata_proxy(f.instance, counter);
    auto p = noisy_proxy(meta, f.corpus, f.bundle, 1, 4, counter);
    EXPECT_EQ(p.segments.size(), 10u);
    EXPECT_EQ(p.base_kind, ProxyKind::metadata);
    EXPECT_EQ(oracle_only(p), texts(meta));
    EXPECT_EQ(std::count(p.text.begin(), p.text.end(), '\n'), 9);
    EXPECT_THROW(noisy_proxy(p, f.corpus, f.bundle, 1, 4, counter), Error);
}

TEST(ProxyFiles, RoundTrip) {
    proxycot::testing::TempDir dir;
    auto f = noise_fixture(3, 2);
    auto counter = TokenCounter::whitespace();
    auto oracle = annotation_proxy(f.instance, f.corpus, counter);
    std::vector<ProxyContext> proxies{oracle, noisy_proxy(oracle, f.corpus, f.bundle, 1, 2, counter)};
    save_proxies(dir / "p.jsonl", proxies);
    auto back = load_proxies(dir / "p.jsonl");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(proxy_to_json(back[i]), proxy_to_json(proxies[i]));
        EXPECT_EQ(back[i].provenance(), proxies[i].provenance());
    }
}
