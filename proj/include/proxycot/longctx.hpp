#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "proxycot/corpus.hpp"
#include "proxycot/error.hpp"
#include "proxycot/random.hpp"

namespace proxycot {

struct ExpansionConfig {
    std::size_t target_tokens = 128000;
    std::size_t max_depth = 2;
    std::uint64_t seed = 0;
    bool shuffle_final_order = true;
};

struct DanglingLink {
    std::string from;
    std::string to;

    bool operator==(const DanglingLink&) const = default;
};

struct LinkClosure {
    std::set<std::string> ids;
    std::vector<DanglingLink> dangling;
};

/// Ids reachable from `doc_ids` within `depth` link hops, inputs included.
/// Links to documents outside the corpus are skipped and reported.
inline LinkClosure link_closure(std::span<const std::string> doc_ids, const Corpus& corpus, std::size_t depth) {
    LinkClosure out;
    std::vector<std::string> frontier;
    for (const auto& id : doc_ids)
        if (out.ids.insert(id).second) frontier.push_back(id);
    for (std::size_t hop = 0; hop < depth && !frontier.empty(); ++hop) {
        std::vector<std::string> next;
        for (const auto& id : frontier) {
            const auto* doc = corpus.find(id);
            if (!doc) continue;
            for (const auto& target : doc->links) {
                if (!corpus.contains(target)) {
                    out.dangling.push_back({id, target});
                    continue;
                }
                if (out.ids.insert(target).second) next.push_back(target);
            }
        }
        frontier = std::move(next);
    }
    return out;
}

struct LongContext {
    ContextBundle bundle;
    std::vector<DanglingLink> dangling;
    std::optional<std::string> stopped_at;  // first document that would have overflowed
};

/// Breadth-first expansion of the seed documents through the link graph up
/// to `max_depth` hops, stopping before the first document whose inclusion
/// would push the rendered context past `target_tokens`. Within a layer the
/// candidates are visited in a seeded permutation of their sorted ids.
inline LongContext build_long_context(const QaInstance& instance, const Corpus& corpus, const ExpansionConfig& config,
                                      const TokenCounter& counter) {
    std::vector<std::string> included;
    std::unordered_set<std::string> seen;
    for (const auto& id : instance.seed_docs) {
        if (!corpus.contains(id)) throw Error(Errc::missing_seed_document, id, "seed document not in corpus");
        if (seen.insert(id).second) included.push_back(id);
    }

    LongContext out;
    std::string rendered = render_documents(corpus, included);
    std::size_t tokens = counter.count(rendered);
    if (tokens > config.target_tokens)
        throw Error(Errc::budget_below_seeds, instance.id,
                    "seed documents need " + std::to_string(tokens) + " tokens, budget is " +
                        std::to_string(config.target_tokens));

    std::vector<std::string> layer = included;
    bool stopped = false;
    for (std::size_t depth = 1; depth <= config.max_depth && !stopped; ++depth) {
        std::set<std::string> candidates;
        for (const auto& id : layer) {
            for (const auto& target : corpus.at(id).links) {
                if (!corpus.contains(target)) {
                    out.dangling.push_back({id, target});
                    continue;
                }
                if (!seen.contains(target)) candidates.insert(target);
            }
        }
        if (candidates.empty()) break;
        std::vector<std::string> order(candidates.begin(), candidates.end());
        auto rng = make_rng(config.seed, instance.id + "/layer/" + std::to_string(depth));
        shuffle(order, rng);

        std::vector<std::string> next_layer;
        for (const auto& id : order) {
            std::string candidate = rendered;
            if (!candidate.empty()) candidate += kDocumentDelimiter;
            candidate += render_document(corpus.at(id));
            std::size_t candidate_tokens = counter.count(candidate);
            if (candidate_tokens > config.target_tokens) {
                out.stopped_at = id;
                stopped = true;
                break;
            }
            rendered = std::move(candidate);
            tokens = candidate_tokens;
            seen.insert(id);
            included.push_back(id);
            next_layer.push_back(id);
        }
        layer = std::move(next_layer);
    }

    if (config.shuffle_final_order) {
        auto rng = make_rng(config.seed, instance.id + "/final");
        shuffle(included, rng);
        rendered = render_documents(corpus, included);
        tokens = counter.count(rendered);
    }

    out.bundle.instance_id = instance.id;
    out.bundle.doc_ids = std::move(included);
    out.bundle.text = std::move(rendered);
    out.bundle.token_count = tokens;
    out.bundle.under_budget = !stopped;
    return out;
}

// Bundle files: metadata records and rendered text are kept in separate
// line-delimited files keyed by instance id.

inline json bundle_to_json(const ContextBundle& b) {
    return json{{"format_version", kFormatVersion},
                {"instance_id", b.instance_id},
                {"doc_ids", b.doc_ids},
                {"token_count", b.token_count},
                {"under_budget_flag", b.under_budget}};
}

inline json bundle_text_to_json(const ContextBundle& b) {
    return json{{"format_version", kFormatVersion}, {"instance_id", b.instance_id}, {"text", b.text}};
}

inline void save_bundles(const std::filesystem::path& meta_path, const std::filesystem::path& text_path,
                         std::span<const ContextBundle> bundles) {
    std::vector<json> meta;
    std::vector<json> texts;
    for (const auto& b : bundles) {
        meta.push_back(bundle_to_json(b));
        texts.push_back(bundle_text_to_json(b));
    }
    write_jsonl(meta_path, meta);
    write_jsonl(text_path, texts);
}

/// Loads bundles; the rendered text is re-derived from the corpus and must
/// match the stored text when one is present.
inline std::vector<ContextBundle> load_bundles(const std::filesystem::path& meta_path,
                                               const std::filesystem::path& text_path) {
    std::unordered_map<std::string, std::string> texts;
    if (std::filesystem::exists(text_path)) {
        for_each_jsonl(text_path, [&](const json& r, std::size_t line) {
            check_format_version(r, line);
            texts[field<std::string>(r, "instance_id", line)] = field<std::string>(r, "text", line);
        });
    }
    std::vector<ContextBundle> out;
    for_each_jsonl(meta_path, [&](const json& r, std::size_t line) {
        check_format_version(r, line);
        ContextBundle b;
        b.instance_id = field<std::string>(r, "instance_id", line);
        b.doc_ids = field<std::vector<std::string>>(r, "doc_ids", line);
        b.token_count = field<std::size_t>(r, "token_count", line);
        b.under_budget = field<bool>(r, "under_budget_flag", line);
        auto it = texts.find(b.instance_id);
        if (it == texts.end())
            throw Error(Errc::missing_bundle, b.instance_id, "no rendered text for bundle in " + text_path.string());
        b.text = std::move(it->second);
        out.push_back(std::move(b));
    });
    return out;
}

}  // namespace proxycot
