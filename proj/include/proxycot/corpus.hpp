#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "proxycot/error.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/scoring.hpp"
#include "proxycot/text.hpp"

namespace proxycot {

// ---------------------------------------------------------------------------
// Domain types

struct Document {
    std::string id;
    std::string title;
    std::vector<std::string> body;   // sentences
    std::vector<std::string> links;  // referenced document ids
};

struct SentenceRef {
    std::string doc_id;
    std::size_t sentence = 0;

    auto operator<=>(const SentenceRef&) const = default;
};

/// Structured per-article record used by metadata proxies.
struct ArticleMetadata {
    std::string doc_id;
    std::string title;
    std::vector<std::string> authors;
    std::size_t reference_count = 0;
    std::vector<std::string> cites;  // titles of cited articles of the same collection
};

struct QaInstance {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    std::vector<SentenceRef> supporting;
    std::vector<std::string> seed_docs;
    std::optional<std::vector<ArticleMetadata>> metadata;
};

struct ContextBundle {
    std::string instance_id;
    std::vector<std::string> doc_ids;
    std::string text;
    std::size_t token_count = 0;
    bool under_budget = false;  // expansion ran out of reachable documents
};

/// Immutable-after-load document store with id lookup.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs) {
        for (auto& d : docs) add(std::move(d));
    }

    void add(Document doc) {
        if (doc.id.empty()) throw Error(Errc::invalid_argument, "document", "empty document id");
        if (index_.contains(doc.id)) throw Error(Errc::duplicate_id, doc.id, "duplicate document id");
        normalize_links(doc);
        index_.emplace(doc.id, docs_.size());
        docs_.push_back(std::move(doc));
    }

    const Document* find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        return it == index_.end() ? nullptr : &docs_[it->second];
    }

    const Document& at(std::string_view id) const {
        if (auto* d = find(id)) return *d;
        throw Error(Errc::dangling_reference, std::string(id), "document not in corpus");
    }

    bool contains(std::string_view id) const { return find(id) != nullptr; }
    const std::vector<Document>& documents() const noexcept { return docs_; }
    std::size_t size() const noexcept { return docs_.size(); }

    /// Drops self links and duplicates, keeping first occurrence order.
    static void normalize_links(Document& doc) {
        std::unordered_set<std::string> seen;
        std::vector<std::string> links;
        for (auto& l : doc.links) {
            if (l == doc.id || l.empty() || !seen.insert(l).second) continue;
            links.push_back(std::move(l));
        }
        doc.links = std::move(links);
    }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Token counting

enum class CounterMode { whitespace, chars_over_4, external_vocab };

inline std::string_view to_string(CounterMode m) noexcept {
    switch (m) {
    case CounterMode::whitespace: return "whitespace";
    case CounterMode::chars_over_4: return "chars-over-4";
    case CounterMode::external_vocab: return "external-vocab";
    }
    return "whitespace";
}

inline CounterMode parse_counter_mode(std::string_view s) {
    if (s == "whitespace") return CounterMode::whitespace;
    if (s == "chars-over-4") return CounterMode::chars_over_4;
    if (s == "external-vocab") return CounterMode::external_vocab;
    throw Error(Errc::invalid_argument, std::string(s), "unknown counter mode");
}

/// Pure token-count function used by every budget. Cheap to copy; the
/// vocabulary, if any, is shared.
class TokenCounter {
public:
    TokenCounter() = default;

    static TokenCounter whitespace() { return TokenCounter(CounterMode::whitespace); }
    static TokenCounter chars_over_4() { return TokenCounter(CounterMode::chars_over_4); }

    /// Vocabulary file: one token per line; anything after a tab is ignored.
    static TokenCounter from_vocab(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(Errc::vocab_unloadable, path.string(), "cannot open vocabulary");
        auto vocab = std::make_shared<Vocab>();
        std::string line;
        while (std::getline(in, line)) {
            if (auto tab = line.find('\t'); tab != std::string::npos) line.resize(tab);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            vocab->max_len = std::max(vocab->max_len, line.size());
            vocab->pieces.insert(std::move(line));
        }
        if (vocab->pieces.empty()) throw Error(Errc::vocab_unloadable, path.string(), "vocabulary is empty");
        TokenCounter c(CounterMode::external_vocab);
        c.vocab_path_ = path.string();
        c.vocab_ = std::move(vocab);
        return c;
    }

    static TokenCounter make(CounterMode mode, const std::optional<std::string>& vocab_path = std::nullopt) {
        switch (mode) {
        case CounterMode::whitespace: return whitespace();
        case CounterMode::chars_over_4: return chars_over_4();
        case CounterMode::external_vocab:
            if (!vocab_path) throw Error(Errc::vocab_unloadable, "", "external-vocab mode needs a vocabulary path");
            return from_vocab(*vocab_path);
        }
        return whitespace();
    }

    CounterMode mode() const noexcept { return mode_; }
    const std::string& vocab_path() const noexcept { return vocab_path_; }

    std::size_t count(std::string_view s) const {
        switch (mode_) {
        case CounterMode::whitespace: return count_runs(s);
        case CounterMode::chars_over_4: return (text::utf8_length(s) + 3) / 4;
        case CounterMode::external_vocab: return count_pieces(s);
        }
        return 0;
    }

private:
    struct Vocab {
        std::unordered_set<std::string> pieces;
        std::size_t max_len = 0;
    };

    explicit TokenCounter(CounterMode mode) : mode_(mode) {}

    static std::size_t count_runs(std::string_view s) noexcept {
        std::size_t n = 0;
        bool in_run = false;
        for (char c : s) {
            bool space = text::is_space(c);
            if (!space && !in_run) ++n;
            in_run = !space;
        }
        return n;
    }

    // Greedy longest match inside each whitespace-delimited word.
    std::size_t count_pieces(std::string_view s) const {
        std::size_t n = 0;
        std::string probe;
        for (auto word : text::split_whitespace(s)) {
            std::size_t i = 0;
            while (i < word.size()) {
                std::size_t best = 0;
                for (std::size_t len = std::min(vocab_->max_len, word.size() - i); len > 0; --len) {
                    probe.assign(word.substr(i, len));
                    if (vocab_->pieces.contains(probe)) {
                        best = len;
                        break;
                    }
                }
                i += best > 0 ? best : text::utf8_step(word, i);
                ++n;
            }
        }
        return n;
    }

    CounterMode mode_ = CounterMode::whitespace;
    std::string vocab_path_;
    std::shared_ptr<const Vocab> vocab_;
};

inline std::size_t count_tokens(const TokenCounter& counter, std::string_view s) { return counter.count(s); }

// ---------------------------------------------------------------------------
// Sentence segmentation

namespace detail {
// Tokens (lowercased, without the trailing period) that do not end a sentence.
inline constexpr std::array<std::string_view, 29> kAbbreviations = {
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "mt", "vs", "etc", "e.g", "i.e", "inc", "ltd",
    "co", "corp", "fig", "vol", "gen", "col", "lt", "capt", "sgt", "rev", "hon", "jan", "feb", "approx",
};

inline bool is_abbreviation(std::string_view sentence_so_far, std::size_t period_pos) {
    std::size_t start = period_pos;
    while (start > 0 && !text::is_space(sentence_so_far[start - 1]) && sentence_so_far[start - 1] != '(' &&
           sentence_so_far[start - 1] != '"')
        --start;
    auto word = sentence_so_far.substr(start, period_pos - start);
    if (word.empty()) return false;
    // Single-letter initials such as "J." in "J. R. R. Tolkien".
    if (word.size() == 1 && text::is_upper(word[0])) return true;
    auto lower = text::lower_ascii(word);
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), lower) != kAbbreviations.end();
}

inline bool starts_sentence(std::string_view s, std::size_t i) {
    while (i < s.size() && (s[i] == '"' || s[i] == '\'' || s[i] == '(' || s[i] == '[')) ++i;
    if (i >= s.size()) return false;
    auto c = static_cast<unsigned char>(s[i]);
    return text::is_upper(s[i]) || c >= 0xC0;  // non-ASCII lead bytes are treated as capitals
}
}  // namespace detail

/// Splits on . ! ? followed by whitespace and a capital (or end of text),
/// skipping a fixed abbreviation list and single-letter initials. Closing
/// quotes and brackets stay with the sentence they close.
inline std::vector<std::string> segment_sentences(std::string_view raw) {
    std::vector<std::string> out;
    std::size_t start = 0;
    std::size_t i = 0;
    auto emit = [&](std::size_t end) {
        auto piece = text::trim(raw.substr(start, end - start));
        if (!piece.empty()) out.emplace_back(piece);
        start = end;
    };
    while (i < raw.size()) {
        char c = raw[i];
        if (c != '.' && c != '!' && c != '?') {
            ++i;
            continue;
        }
        std::size_t end = i + 1;
        while (end < raw.size() && (raw[end] == '.' || raw[end] == '!' || raw[end] == '?')) ++end;
        while (end < raw.size() && (raw[end] == '"' || raw[end] == '\'' || raw[end] == ')' || raw[end] == ']'))
            ++end;
        std::size_t next = end;
        while (next < raw.size() && text::is_space(raw[next])) ++next;
        bool at_end = next >= raw.size();
        bool boundary = at_end || (next > end && detail::starts_sentence(raw, next));
        if (boundary && c == '.' && end == i + 1 && !at_end && detail::is_abbreviation(raw, i)) boundary = false;
        if (boundary) emit(end);
        i = end;
    }
    emit(raw.size());
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

inline constexpr std::string_view kDocumentDelimiter = "\n\n";

/// "# Title" heading line followed by the body sentences joined by spaces.
inline std::string render_document(const Document& doc) {
    std::string out = "# ";
    out += doc.title;
    out += '\n';
    out += text::join(doc.body, " ");
    return out;
}

inline std::string render_documents(const Corpus& corpus, std::span<const std::string> doc_ids) {
    std::string out;
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
        if (i) out += kDocumentDelimiter;
        out += render_document(corpus.at(doc_ids[i]));
    }
    return out;
}

inline ContextBundle make_bundle(const Corpus& corpus, std::string instance_id, std::vector<std::string> doc_ids,
                                 const TokenCounter& counter) {
    ContextBundle b;
    b.instance_id = std::move(instance_id);
    b.text = render_documents(corpus, doc_ids);
    b.doc_ids = std::move(doc_ids);
    b.token_count = counter.count(b.text);
    return b;
}

// ---------------------------------------------------------------------------
// Loading and saving

enum class CorpusFormat { jsonl, hotpotqa };

inline CorpusFormat parse_corpus_format(std::string_view s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "hotpotqa") return CorpusFormat::hotpotqa;
    throw Error(Errc::invalid_argument, std::string(s), "unsupported corpus format");
}

struct CorpusPaths {
    std::filesystem::path documents;  // unused for hotpotqa
    std::filesystem::path instances;
};

struct Diagnostic {
    enum class Severity { warning, rejected };
    Severity severity = Severity::warning;
    Errc code = Errc::invalid_argument;
    std::string subject;
    std::string message;
};

struct LoadResult {
    Corpus corpus;
    std::vector<QaInstance> instances;
    std::vector<Diagnostic> diagnostics;

    std::size_t rejected() const {
        return static_cast<std::size_t>(std::count_if(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) {
            return d.severity == Diagnostic::Severity::rejected;
        }));
    }
};

inline json to_json(const Document& d) {
    return json{{"format_version", kFormatVersion}, {"id", d.id}, {"title", d.title}, {"text", d.body}, {"links", d.links}};
}

inline json to_json(const ArticleMetadata& m) {
    return json{{"doc_id", m.doc_id},
                {"title", m.title},
                {"authors", m.authors},
                {"reference_count", m.reference_count},
                {"cites", m.cites}};
}

inline json to_json(const QaInstance& q) {
    json supporting = json::array();
    for (const auto& s : q.supporting) supporting.push_back(json::array({s.doc_id, s.sentence}));
    json j{{"format_version", kFormatVersion}, {"id", q.id},          {"question", q.question},
           {"answers", q.answers},             {"supporting", supporting}, {"seed_docs", q.seed_docs}};
    if (q.metadata) {
        json meta = json::array();
        for (const auto& m : *q.metadata) meta.push_back(to_json(m));
        j["metadata"] = std::move(meta);
    } else {
        j["metadata"] = nullptr;
    }
    return j;
}

inline Document document_from_json(const json& r, std::size_t line) {
    check_format_version(r, line);
    Document d;
    d.id = field<std::string>(r, "id", line);
    d.title = field<std::string>(r, "title", line);
    const auto& body = r.contains("text") ? r["text"] : json();
    if (body.is_string()) {
        d.body = segment_sentences(body.get<std::string>());
    } else if (body.is_array()) {
        d.body = field<std::vector<std::string>>(r, "text", line);
    } else {
        throw Error(Errc::malformed_record, std::to_string(line), "field 'text' must be a string or a sentence list");
    }
    if (r.contains("links") && !r["links"].is_null()) d.links = field<std::vector<std::string>>(r, "links", line);
    if (d.id.empty()) throw Error(Errc::malformed_record, std::to_string(line), "empty document id");
    return d;
}

inline ArticleMetadata metadata_from_json(const json& m, std::size_t line) {
    ArticleMetadata a;
    if (m.contains("doc_id") && !m["doc_id"].is_null()) a.doc_id = field<std::string>(m, "doc_id", line);
    a.title = field<std::string>(m, "title", line);
    a.authors = field<std::vector<std::string>>(m, "authors", line);
    a.reference_count = field<std::size_t>(m, "reference_count", line);
    if (m.contains("cites") && !m["cites"].is_null()) a.cites = field<std::vector<std::string>>(m, "cites", line);
    return a;
}

inline QaInstance instance_from_json(const json& r, std::size_t line) {
    check_format_version(r, line);
    QaInstance q;
    q.id = field<std::string>(r, "id", line);
    q.question = field<std::string>(r, "question", line);
    q.answers = field<std::vector<std::string>>(r, "answers", line);
    if (r.contains("supporting")) {
        const auto& sup = r["supporting"];
        if (!sup.is_array()) throw Error(Errc::malformed_record, std::to_string(line), "'supporting' must be a list");
        for (const auto& s : sup) {
            try {
                if (s.is_array() && s.size() == 2) {
                    q.supporting.push_back({s[0].get<std::string>(), s[1].get<std::size_t>()});
                } else if (s.is_object()) {
                    q.supporting.push_back({s.at("doc_id").get<std::string>(), s.at("sentence").get<std::size_t>()});
                } else {
                    throw Error(Errc::malformed_record, std::to_string(line), "bad supporting entry");
                }
            } catch (const json::exception& e) {
                throw Error(Errc::malformed_record, std::to_string(line), std::string("supporting: ") + e.what());
            }
        }
    }
    if (r.contains("seed_docs")) q.seed_docs = field<std::vector<std::string>>(r, "seed_docs", line);
    if (r.contains("metadata") && !r["metadata"].is_null()) {
        const auto& meta = r["metadata"];
        if (!meta.is_array()) throw Error(Errc::malformed_record, std::to_string(line), "'metadata' must be a list");
        std::vector<ArticleMetadata> articles;
        for (const auto& m : meta) articles.push_back(metadata_from_json(m, line));
        q.metadata = std::move(articles);
    }
    if (q.id.empty()) throw Error(Errc::malformed_record, std::to_string(line), "empty instance id");
    return q;
}

namespace detail {
// Referential and answer checks. Returns false (with a diagnostic) when the
// instance must be rejected.
inline bool validate_instance(QaInstance& q, const Corpus& corpus, std::vector<Diagnostic>& diags) {
    using Sev = Diagnostic::Severity;
    if (q.answers.empty() || std::any_of(q.answers.begin(), q.answers.end(),
                                         [](const std::string& a) { return normalize_answer(a).empty(); })) {
        diags.push_back({Sev::rejected, Errc::malformed_record, q.id, "answers empty or empty after normalization"});
        return false;
    }
    for (const auto& s : q.supporting) {
        const auto* doc = corpus.find(s.doc_id);
        if (!doc) {
            diags.push_back({Sev::rejected, Errc::dangling_reference, q.id, "supporting document '" + s.doc_id + "' missing"});
            return false;
        }
        if (s.sentence >= doc->body.size()) {
            diags.push_back({Sev::rejected, Errc::dangling_reference, q.id,
                             "supporting sentence " + std::to_string(s.sentence) + " out of range in '" + s.doc_id + "'"});
            return false;
        }
    }
    std::unordered_set<std::string> seeds;
    std::vector<std::string> seed_docs;
    for (auto& id : q.seed_docs) {
        if (!corpus.contains(id)) {
            diags.push_back({Sev::rejected, Errc::dangling_reference, q.id, "seed document '" + id + "' missing"});
            return false;
        }
        if (seeds.insert(id).second) seed_docs.push_back(id);
    }
    for (const auto& s : q.supporting) {
        if (seeds.insert(s.doc_id).second) {
            seed_docs.push_back(s.doc_id);
            diags.push_back({Sev::warning, Errc::invalid_argument, q.id,
                             "supporting document '" + s.doc_id + "' added to seed_docs"});
        }
    }
    q.seed_docs = std::move(seed_docs);
    std::vector<SentenceRef> supporting;
    for (auto& s : q.supporting)
        if (std::find(supporting.begin(), supporting.end(), s) == supporting.end()) supporting.push_back(std::move(s));
    q.supporting = std::move(supporting);
    return true;
}

inline LoadResult load_jsonl(const CorpusPaths& paths) {
    LoadResult res;
    std::size_t doc_lines = 0;
    for_each_jsonl(paths.documents, [&](const json& r, std::size_t line) {
        ++doc_lines;
        auto doc = document_from_json(r, line);
        if (res.corpus.contains(doc.id))
            throw Error(Errc::malformed_record, std::to_string(line), "duplicate document id '" + doc.id + "'");
        res.corpus.add(std::move(doc));
    });
    std::unordered_set<std::string> ids;
    std::size_t inst_lines = 0;
    for_each_jsonl(paths.instances, [&](const json& r, std::size_t line) {
        ++inst_lines;
        auto q = instance_from_json(r, line);
        if (!ids.insert(q.id).second)
            throw Error(Errc::malformed_record, std::to_string(line), "duplicate instance id '" + q.id + "'");
        if (validate_instance(q, res.corpus, res.diagnostics)) res.instances.push_back(std::move(q));
    });
    if (doc_lines == 0)
        res.diagnostics.push_back({Diagnostic::Severity::warning, Errc::invalid_argument, paths.documents.string(),
                                   "no document records"});
    if (inst_lines == 0)
        res.diagnostics.push_back({Diagnostic::Severity::warning, Errc::invalid_argument, paths.instances.string(),
                                   "no instance records"});
    return res;
}

// Raw HotpotQA JSON: [{_id, question, answer, supporting_facts, context}, ...].
// Documents are keyed by title and shared across instances.
inline LoadResult load_hotpotqa(const std::filesystem::path& path) {
    LoadResult res;
    auto content = read_file(path);
    if (text::trim(content).empty()) {
        res.diagnostics.push_back({Diagnostic::Severity::warning, Errc::invalid_argument, path.string(), "empty file"});
        return res;
    }
    json root;
    try {
        root = json::parse(content);
    } catch (const json::parse_error& e) {
        throw Error(Errc::malformed_record, "1", path.string() + ": " + e.what());
    }
    if (!root.is_array()) throw Error(Errc::malformed_record, "1", "HotpotQA file must be a JSON array");
    for (std::size_t i = 0; i < root.size(); ++i) {
        const auto& r = root[i];
        std::size_t rec = i + 1;
        QaInstance q;
        q.id = field<std::string>(r, "_id", rec);
        q.question = field<std::string>(r, "question", rec);
        q.answers = {field<std::string>(r, "answer", rec)};
        try {
            for (const auto& para : r.at("context")) {
                auto title = para.at(0).get<std::string>();
                if (!res.corpus.contains(title))
                    res.corpus.add(Document{title, title, para.at(1).get<std::vector<std::string>>(), {}});
                q.seed_docs.push_back(title);
            }
            for (const auto& sf : r.at("supporting_facts"))
                q.supporting.push_back({sf.at(0).get<std::string>(), sf.at(1).get<std::size_t>()});
        } catch (const json::exception& e) {
            throw Error(Errc::malformed_record, std::to_string(rec), e.what());
        }
        if (validate_instance(q, res.corpus, res.diagnostics)) res.instances.push_back(std::move(q));
    }
    return res;
}
}  // namespace detail

/// Loads a corpus. I/O and syntax failures throw; referentially broken
/// instances are dropped and reported in `diagnostics`.
inline LoadResult load_corpus(const CorpusPaths& paths, CorpusFormat format = CorpusFormat::jsonl) {
    switch (format) {
    case CorpusFormat::jsonl: return detail::load_jsonl(paths);
    case CorpusFormat::hotpotqa: return detail::load_hotpotqa(paths.instances);
    }
    return {};
}

inline void save_corpus(const CorpusPaths& paths, const Corpus& corpus, std::span<const QaInstance> instances) {
    std::vector<json> docs;
    docs.reserve(corpus.size());
    for (const auto& d : corpus.documents()) docs.push_back(to_json(d));
    write_jsonl(paths.documents, docs);
    std::vector<json> inst;
    inst.reserve(instances.size());
    for (const auto& q : instances) inst.push_back(to_json(q));
    write_jsonl(paths.instances, inst);
}

}  // namespace proxycot
