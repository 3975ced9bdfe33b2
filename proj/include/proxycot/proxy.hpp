#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "proxycot/corpus.hpp"
#include "proxycot/error.hpp"
#include "proxycot/random.hpp"
#include "proxycot/retrieval.hpp"

namespace proxycot {

enum class ProxyKind { annotation, metadata, bm25, embedding, random, noisy };

inline std::string_view to_string(ProxyKind k) noexcept {
    switch (k) {
    case ProxyKind::annotation: return "annotation";
    case ProxyKind::metadata: return "metadata";
    case ProxyKind::bm25: return "bm25";
    case ProxyKind::embedding: return "embedding";
    case ProxyKind::random: return "random";
    case ProxyKind::noisy: return "noisy";
    }
    return "annotation";
}

inline ProxyKind parse_proxy_kind(std::string_view s) {
    for (auto k : {ProxyKind::annotation, ProxyKind::metadata, ProxyKind::bm25, ProxyKind::embedding,
                   ProxyKind::random, ProxyKind::noisy})
        if (to_string(k) == s) return k;
    throw Error(Errc::invalid_argument, std::string(s), "unknown proxy kind");
}

/// Where one proxy segment came from: a corpus sentence, or a metadata field
/// of an article (`field` set, `sentence` empty).
struct Provenance {
    std::string doc_id;
    std::optional<std::size_t> sentence;
    std::string field;
    bool noise = false;

    bool operator==(const Provenance&) const = default;
};

struct ProxySegment {
    std::string text;
    Provenance source;
};

struct NoiseRatio {
    std::size_t oracle_parts = 1;
    std::size_t noise_parts = 0;

    bool operator==(const NoiseRatio&) const = default;
};

struct ProxyContext {
    std::string instance_id;
    ProxyKind kind = ProxyKind::annotation;
    std::optional<ProxyKind> base_kind;  // oracle kind of a noisy proxy
    std::string text;
    std::size_t token_count = 0;
    std::vector<ProxySegment> segments;
    std::optional<NoiseRatio> noise_ratio;
    std::vector<std::string> warnings;

    std::vector<Provenance> provenance() const {
        std::vector<Provenance> out;
        out.reserve(segments.size());
        for (const auto& s : segments) out.push_back(s.source);
        return out;
    }
};

namespace detail {
inline std::string_view separator_for(ProxyKind kind) {
    return kind == ProxyKind::metadata ? std::string_view("\n") : std::string_view(" ");
}

inline void finish(ProxyContext& p, const TokenCounter& counter, std::string_view sep) {
    std::vector<std::string_view> parts;
    parts.reserve(p.segments.size());
    for (const auto& s : p.segments) parts.push_back(s.text);
    p.text = text::join(parts, sep);
    p.token_count = counter.count(p.text);
}
}  // namespace detail

/// One entry of a full context's sentence pool, in reading order.
struct PooledSentence {
    SentenceRef ref;
    const std::string* text = nullptr;
};

/// Every sentence of the bundle's documents in bundle order.
inline std::vector<PooledSentence> context_sentence_pool(const Corpus& corpus, const ContextBundle& bundle) {
    std::vector<PooledSentence> pool;
    for (const auto& id : bundle.doc_ids) {
        const auto& doc = corpus.at(id);
        for (std::size_t i = 0; i < doc.body.size(); ++i) pool.push_back({{id, i}, &doc.body[i]});
    }
    return pool;
}

inline std::vector<PooledSentence> corpus_sentence_pool(const Corpus& corpus) {
    std::vector<PooledSentence> pool;
    for (const auto& doc : corpus.documents())
        for (std::size_t i = 0; i < doc.body.size(); ++i) pool.push_back({{doc.id, i}, &doc.body[i]});
    return pool;
}

/// Supporting sentences grouped by document (first-appearance order), then
/// by sentence index, joined by single spaces.
inline ProxyContext annotation_proxy(const QaInstance& instance, const Corpus& corpus, const TokenCounter& counter) {
    if (instance.supporting.empty()) throw Error(Errc::empty_support, instance.id, "no supporting sentences");
    std::vector<std::string> doc_order;
    for (const auto& s : instance.supporting)
        if (std::find(doc_order.begin(), doc_order.end(), s.doc_id) == doc_order.end()) doc_order.push_back(s.doc_id);

    ProxyContext p;
    p.instance_id = instance.id;
    p.kind = ProxyKind::annotation;
    for (const auto& doc_id : doc_order) {
        std::set<std::size_t> sentences;
        for (const auto& s : instance.supporting)
            if (s.doc_id == doc_id) sentences.insert(s.sentence);
        const auto& doc = corpus.at(doc_id);
        for (auto idx : sentences) {
            if (idx >= doc.body.size())
                throw Error(Errc::dangling_reference, instance.id,
                            "sentence " + std::to_string(idx) + " out of range in '" + doc_id + "'");
            p.segments.push_back({doc.body[idx], {doc_id, idx, "", false}});
        }
    }
    detail::finish(p, counter, " ");
    return p;
}

namespace detail {
inline std::size_t title_word_count(std::string_view title) { return text::split_whitespace(title).size(); }

inline std::vector<std::pair<std::string, std::string>> metadata_lines(const ArticleMetadata& m) {
    std::vector<std::pair<std::string, std::string>> lines;
    lines.emplace_back("title", "Article title: " + m.title);
    lines.emplace_back("title_words", "There are " + std::to_string(title_word_count(m.title)) +
                                          " words in the title (separated by spaces).");
    std::string authors = "There are " + std::to_string(m.authors.size()) + " authors: " + text::join(m.authors, ", ");
    lines.emplace_back("authors", std::string(text::trim(authors)));
    lines.emplace_back("references",
                       "There are " + std::to_string(m.reference_count) + " references in the reference section.");
    if (m.cites.empty())
        lines.emplace_back("citations", "The other provided articles are not cited by this article.");
    else
        lines.emplace_back("citations",
                           "This article cites the following provided articles: " + text::join(m.cites, "; ") + ".");
    return lines;
}
}  // namespace detail

/// Renders the per-article metadata blocks. Lines inside a block are
/// separated by newlines, blocks by a blank line.
inline ProxyContext metadata_proxy(const QaInstance& instance, const TokenCounter& counter) {
    if (!instance.metadata || instance.metadata->empty())
        throw Error(Errc::missing_metadata, instance.id, "instance has no article metadata");
    const auto& articles = *instance.metadata;
    bool keyed = std::any_of(articles.begin(), articles.end(), [](const ArticleMetadata& m) { return !m.doc_id.empty(); });
    if (keyed) {
        for (const auto& seed : instance.seed_docs) {
            bool found = std::any_of(articles.begin(), articles.end(),
                                     [&](const ArticleMetadata& m) { return m.doc_id == seed; });
            if (!found) throw Error(Errc::missing_metadata, seed, "no metadata for article of " + instance.id);
        }
    }
    ProxyContext p;
    p.instance_id = instance.id;
    p.kind = ProxyKind::metadata;
    std::vector<std::string> blocks;
    for (const auto& m : articles) {
        if (m.title.empty()) throw Error(Errc::missing_metadata, m.doc_id, "article metadata without title");
        std::vector<std::string> block;
        for (auto& [field, line] : detail::metadata_lines(m)) {
            block.push_back(line);
            p.segments.push_back({std::move(line), {m.doc_id, std::nullopt, field, false}});
        }
        blocks.push_back(text::join(block, "\n"));
    }
    p.text = text::join(blocks, "\n\n");
    p.token_count = counter.count(p.text);
    return p;
}

namespace detail {
// Appends pool entries in `order` until the next one would overflow.
inline void fill_to_budget(ProxyContext& p, std::span<const PooledSentence> pool, std::span<const std::size_t> order,
                           std::size_t budget, const TokenCounter& counter) {
    std::string current;
    for (auto idx : order) {
        const auto& s = pool[idx];
        std::string candidate = current;
        if (!candidate.empty()) candidate += ' ';
        candidate += *s.text;
        if (counter.count(candidate) > budget) break;
        current = std::move(candidate);
        p.segments.push_back({*s.text, {s.ref.doc_id, s.ref.sentence, "", false}});
    }
    if (p.segments.empty()) p.warnings.push_back("empty proxy: budget admits no sentence");
}
}  // namespace detail

/// Sentences drawn uniformly without replacement from the full context, in
/// sampled order, until the next one would exceed the budget.
inline ProxyContext random_proxy(const QaInstance& instance, const Corpus& corpus, const ContextBundle& bundle,
                                 std::size_t budget_tokens, std::uint64_t seed, const TokenCounter& counter) {
    auto pool = context_sentence_pool(corpus, bundle);
    if (pool.empty()) throw Error(Errc::empty_context, instance.id, "full context has no sentences");
    auto rng = make_rng(seed, instance.id + "/random");
    auto order = permutation(pool.size(), rng);
    ProxyContext p;
    p.instance_id = instance.id;
    p.kind = ProxyKind::random;
    detail::fill_to_budget(p, pool, order, budget_tokens, counter);
    detail::finish(p, counter, " ");
    return p;
}

/// Embeds texts in order; supplied by the inference client in production.
using Embedder = std::function<std::vector<EmbeddingVector>(std::span<const std::string>)>;

enum class RetrievalMode { bm25, embedding };

struct RetrievalConfig {
    Bm25Params bm25;
    Embedder embedder;  // required for RetrievalMode::embedding
};

/// Full ranking of the pool against the question (best first).
inline std::vector<std::size_t> rank_pool(const QaInstance& instance, std::span<const PooledSentence> pool,
                                          RetrievalMode mode, const RetrievalConfig& config) {
    std::vector<std::string> sentences;
    sentences.reserve(pool.size());
    for (const auto& s : pool) sentences.push_back(*s.text);
    if (mode == RetrievalMode::bm25) {
        auto index = Bm25Index::build(sentences, config.bm25);
        return top_k_lexical(index, instance.question, pool.size());
    }
    if (!config.embedder) throw Error(Errc::invalid_argument, instance.id, "embedding mode without an embedder");
    std::vector<std::string> texts;
    texts.reserve(pool.size() + 1);
    texts.push_back(instance.question);
    texts.insert(texts.end(), sentences.begin(), sentences.end());
    auto vectors = config.embedder(texts);
    if (vectors.size() != texts.size())
        throw Error(Errc::malformed_response, instance.id, "embedder returned a wrong number of vectors");
    EmbeddingVector question = vectors.front();
    std::vector<EmbeddingVector> candidates(vectors.begin() + 1, vectors.end());
    for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].source_id = i;
    return top_k_semantic(question, candidates, candidates.size());
}

/// Top-ranked sentences filled to the budget, then put back in reading order.
inline ProxyContext retrieval_proxy(const QaInstance& instance, const Corpus& corpus, const ContextBundle& bundle,
                                    RetrievalMode mode, std::size_t budget_tokens, const RetrievalConfig& config,
                                    const TokenCounter& counter) {
    auto pool = context_sentence_pool(corpus, bundle);
    if (pool.empty()) throw Error(Errc::empty_context, instance.id, "full context has no sentences");
    auto ranked = rank_pool(instance, pool, mode, config);

    ProxyContext p;
    p.instance_id = instance.id;
    p.kind = mode == RetrievalMode::bm25 ? ProxyKind::bm25 : ProxyKind::embedding;
    detail::fill_to_budget(p, pool, ranked, budget_tokens, counter);

    std::vector<std::size_t> chosen(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(p.segments.size()));
    std::sort(chosen.begin(), chosen.end());
    p.segments.clear();
    for (auto idx : chosen)
        p.segments.push_back({*pool[idx].text, {pool[idx].ref.doc_id, pool[idx].ref.sentence, "", false}});
    detail::finish(p, counter, " ");
    return p;
}

enum class NoisePool { instance_context, corpus };

/// Injects k noise sentences per oracle segment, sampled without replacement
/// from the pool minus the oracle's own sentences, and interleaves them by a
/// seeded shuffle that keeps the oracle segments in their original order.
inline ProxyContext noisy_proxy(const ProxyContext& oracle, const Corpus& corpus, const ContextBundle& bundle,
                                std::size_t k, std::uint64_t seed, const TokenCounter& counter,
                                NoisePool source = NoisePool::instance_context) {
    if (oracle.kind != ProxyKind::annotation && oracle.kind != ProxyKind::metadata)
        throw Error(Errc::invalid_argument, oracle.instance_id, "noise can only be injected into annotation or metadata proxies");

    ProxyContext p;
    p.instance_id = oracle.instance_id;
    p.kind = ProxyKind::noisy;
    p.base_kind = oracle.kind;
    p.noise_ratio = NoiseRatio{1, k};
    if (k == 0) {
        p.segments = oracle.segments;
        p.text = oracle.text;
        p.token_count = counter.count(p.text);
        return p;
    }

    std::set<SentenceRef> oracle_refs;
    for (const auto& s : oracle.segments)
        if (s.source.sentence) oracle_refs.insert({s.source.doc_id, *s.source.sentence});
    auto full = source == NoisePool::corpus ? corpus_sentence_pool(corpus) : context_sentence_pool(corpus, bundle);
    std::vector<PooledSentence> pool;
    for (auto& s : full)
        if (!oracle_refs.contains(s.ref)) pool.push_back(s);

    std::size_t wanted = k * oracle.segments.size();
    auto rng = make_rng(seed, oracle.instance_id + "/noise");
    auto order = permutation(pool.size(), rng);
    std::size_t taken = std::min(wanted, pool.size());
    if (taken < wanted)
        p.warnings.push_back("insufficient noise pool: wanted " + std::to_string(wanted) + ", injected " +
                             std::to_string(taken));

    std::vector<bool> slots(oracle.segments.size() + taken, false);
    for (std::size_t i = 0; i < taken; ++i) slots[i] = true;
    shuffle(slots, rng);

    std::size_t next_oracle = 0;
    std::size_t next_noise = 0;
    for (bool is_noise : slots) {
        if (is_noise) {
            const auto& s = pool[order[next_noise++]];
            p.segments.push_back({*s.text, {s.ref.doc_id, s.ref.sentence, "", true}});
        } else {
            p.segments.push_back(oracle.segments[next_oracle++]);
        }
    }
    detail::finish(p, counter, detail::separator_for(oracle.kind));
    return p;
}

/// Whether the noise pool ran short (the InsufficientNoisePool condition).
inline bool noise_pool_exhausted(const ProxyContext& p) {
    return std::any_of(p.warnings.begin(), p.warnings.end(),
                       [](const std::string& w) { return w.rfind("insufficient noise pool", 0) == 0; });
}

// ---------------------------------------------------------------------------
// Serialization

inline json proxy_to_json(const ProxyContext& p) {
    json prov = json::array();
    for (const auto& s : p.segments) {
        json e{{"doc_id", s.source.doc_id}, {"noise", s.source.noise}};
        e["sentence"] = s.source.sentence ? json(*s.source.sentence) : json(nullptr);
        e["field"] = s.source.field.empty() ? json(nullptr) : json(s.source.field);
        prov.push_back(std::move(e));
    }
    json segments = json::array();
    for (const auto& s : p.segments) segments.push_back(s.text);
    json j{{"format_version", kFormatVersion},
           {"instance_id", p.instance_id},
           {"kind", to_string(p.kind)},
           {"text", p.text},
           {"token_count", p.token_count},
           {"provenance", std::move(prov)},
           {"segments", std::move(segments)},
           {"warnings", p.warnings}};
    j["noise_ratio"] = p.noise_ratio ? json::array({p.noise_ratio->oracle_parts, p.noise_ratio->noise_parts}) : json(nullptr);
    j["base_kind"] = p.base_kind ? json(to_string(*p.base_kind)) : json(nullptr);
    return j;
}

inline ProxyContext proxy_from_json(const json& r, std::size_t line) {
    check_format_version(r, line);
    ProxyContext p;
    p.instance_id = field<std::string>(r, "instance_id", line);
    p.kind = parse_proxy_kind(field<std::string>(r, "kind", line));
    p.text = field<std::string>(r, "text", line);
    p.token_count = field<std::size_t>(r, "token_count", line);
    auto segments = field<std::vector<std::string>>(r, "segments", line);
    const auto& prov = r.at("provenance");
    if (!prov.is_array() || prov.size() != segments.size())
        throw Error(Errc::malformed_record, std::to_string(line), "provenance and segments differ in length");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& e = prov[i];
        Provenance src;
        src.doc_id = e.value("doc_id", std::string());
        if (e.contains("sentence") && !e["sentence"].is_null()) src.sentence = e["sentence"].get<std::size_t>();
        if (e.contains("field") && !e["field"].is_null()) src.field = e["field"].get<std::string>();
        src.noise = e.value("noise", false);
        p.segments.push_back({std::move(segments[i]), std::move(src)});
    }
    if (r.contains("noise_ratio") && !r["noise_ratio"].is_null()) {
        auto ratio = field<std::vector<std::size_t>>(r, "noise_ratio", line);
        if (ratio.size() != 2) throw Error(Errc::malformed_record, std::to_string(line), "noise_ratio must be a pair");
        p.noise_ratio = NoiseRatio{ratio[0], ratio[1]};
    }
    if (r.contains("base_kind") && !r["base_kind"].is_null())
        p.base_kind = parse_proxy_kind(r["base_kind"].get<std::string>());
    if (r.contains("warnings")) p.warnings = field<std::vector<std::string>>(r, "warnings", line);
    if ((p.kind == ProxyKind::noisy) != p.noise_ratio.has_value())
        throw Error(Errc::malformed_record, std::to_string(line), "noise_ratio must be present exactly for noisy proxies");
    return p;
}

inline void save_proxies(const std::filesystem::path& path, std::span<const ProxyContext> proxies) {
    std::vector<json> records;
    for (const auto& p : proxies) records.push_back(proxy_to_json(p));
    write_jsonl(path, records);
}

inline std::vector<ProxyContext> load_proxies(const std::filesystem::path& path) {
    std::vector<ProxyContext> out;
    for_each_jsonl(path, [&](const json& r, std::size_t line) {
        try {
            out.push_back(proxy_from_json(r, line));
        } catch (const json::exception& e) {
            throw Error(Errc::malformed_record, std::to_string(line), e.what());
        }
    });
    return out;
}

}  // namespace proxycot
