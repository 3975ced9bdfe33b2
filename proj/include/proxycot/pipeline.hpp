#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "proxycot/concurrency.hpp"
#include "proxycot/corpus.hpp"
#include "proxycot/error.hpp"
#include "proxycot/inference.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/longctx.hpp"
#include "proxycot/proxy.hpp"
#include "proxycot/random.hpp"
#include "proxycot/scoring.hpp"

namespace proxycot {

inline constexpr std::string_view kDefaultAnswerInstruction =
    "Think step by step. On the last line, write your final answer in the form \"Final Answer: <answer>\".";

inline constexpr std::string_view kDefaultPromptTemplate =
    "Read the context below and answer the question.\n\nContext:\n{context}\n\nQuestion: {question}\n\n"
    "{answer_instruction}";

struct PromptTemplate {
    std::string text{kDefaultPromptTemplate};
    std::string answer_instruction{kDefaultAnswerInstruction};
    AnswerMarker marker;

    std::string hash() const { return content_hash(text + '\x1f' + answer_instruction + '\x1f' + marker.marker); }
};

namespace detail {
inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}
}  // namespace detail

/// Single-pass substitution of {question}, {context} and the optional
/// {answer_instruction}. Braces inside the substituted values stay literal.
inline std::string render_prompt(const PromptTemplate& tpl, std::string_view question, std::string_view context) {
    for (std::string_view p : {"{question}", "{context}"}) {
        auto n = detail::count_occurrences(tpl.text, p);
        if (n != 1)
            throw Error(Errc::missing_placeholder, std::string(p),
                        n == 0 ? "placeholder missing from template" : "placeholder occurs more than once");
    }
    std::string out;
    out.reserve(tpl.text.size() + question.size() + context.size() + tpl.answer_instruction.size());
    std::string_view t = tpl.text;
    for (std::size_t i = 0; i < t.size();) {
        auto sub = t.substr(i);
        if (sub.starts_with("{question}")) {
            out += question;
            i += 10;
        } else if (sub.starts_with("{context}")) {
            out += context;
            i += 9;
        } else if (sub.starts_with("{answer_instruction}")) {
            out += tpl.answer_instruction;
            i += 20;
        } else {
            out += t[i++];
        }
    }
    return out;
}

/// Stage-1 prompts must carry the answer-marker instruction.
inline void require_answer_instruction(const PromptTemplate& tpl) {
    bool placeholder = tpl.text.find("{answer_instruction}") != std::string::npos &&
                       tpl.answer_instruction.find(tpl.marker.marker) != std::string::npos;
    bool literal = tpl.text.find(tpl.marker.marker) != std::string::npos;
    if (!placeholder && !literal)
        throw Error(Errc::missing_placeholder, "{answer_instruction}",
                    "template never instructs the model to emit the answer marker");
}

struct ReasoningTrace {
    std::string instance_id;
    ProxyKind proxy_kind = ProxyKind::annotation;
    std::string text;
    std::string extracted_answer;
    double reward = 0.0;
    int em = 0;
    SamplingParams sampling;
    int attempt = 0;
    int choice = 0;
    std::size_t cot_token_count = 0;
    std::string request_id;
};

struct RetentionRule {
    enum class Mode { exact_match, reward_threshold };
    Mode mode = Mode::exact_match;
    double threshold = 1.0;

    bool keeps(int em, double reward) const { return mode == Mode::exact_match ? em == 1 : reward >= threshold; }
};

struct AcquireConfig {
    SamplingParams sampling = SamplingParams::teacher();
    PromptTemplate prompt;
    RetentionRule retention;
    MatchMode match = MatchMode::normalized;
    int attempt = 0;
    TokenCounter counter = TokenCounter::whitespace();
};

struct RejectRecord {
    std::string instance_id;
    std::string reason;  // no_retained_trace | context_overflow
    std::size_t generations = 0;
    std::size_t extraction_failures = 0;
};

struct AcquireResult {
    std::vector<ReasoningTrace> traces;
    std::vector<RejectRecord> rejects;
    std::vector<std::pair<std::string, std::size_t>> retained_per_instance;
    std::size_t generations = 0;
    std::size_t extraction_failures = 0;
    std::size_t skipped = 0;
    std::size_t retries = 0;
    std::size_t replayed = 0;
};

inline std::string sample_request_id(std::string_view instance_id, int attempt) {
    return "sample:" + std::string(instance_id) + ":" + std::to_string(attempt);
}

/// Samples n generations per instance on its proxy and keeps those whose
/// extracted answer passes the retention rule. Context overflow skips the
/// instance; other endpoint failures abort after retries.
inline AcquireResult acquire_traces(std::span<const QaInstance> instances, std::span<const ProxyContext> proxies,
                                    InferenceClient& client, const AcquireConfig& config) {
    require_answer_instruction(config.prompt);
    config.sampling.validate();
    std::unordered_map<std::string, const ProxyContext*> by_id;
    for (const auto& p : proxies) by_id[p.instance_id] = &p;
    for (const auto& q : instances)
        if (!by_id.contains(q.id)) throw Error(Errc::invalid_argument, q.id, "instance has no proxy");

    struct Outcome {
        std::vector<ReasoningTrace> traces;
        std::optional<RejectRecord> reject;
        std::size_t generations = 0;
        std::size_t extraction_failures = 0;
        int retries = 0;
        bool replayed = false;
        bool skipped = false;
    };

    auto outcomes = parallel_map<Outcome>(instances.size(), client.config().max_parallel, [&](std::size_t i) {
        const auto& q = instances[i];
        const auto& proxy = *by_id.at(q.id);
        Outcome o;
        auto id = sample_request_id(q.id, config.attempt);
        SampleResult sample;
        try {
            sample = client.sample_completions(render_prompt(config.prompt, q.question, proxy.text), config.sampling, id);
        } catch (const Error& e) {
            if (e.code() != Errc::context_overflow) throw;
            o.skipped = true;
            o.reject = RejectRecord{q.id, "context_overflow", 0, 0};
            return o;
        }
        o.retries = sample.retries;
        o.replayed = sample.replayed;
        o.generations = sample.generations.size();
        for (std::size_t c = 0; c < sample.generations.size(); ++c) {
            const auto& g = sample.generations[c];
            auto answer = try_extract_answer(g, config.prompt.marker);
            if (!answer) {
                ++o.extraction_failures;
                continue;
            }
            int em = exact_match(q.answers, *answer, config.match);
            double r = token_f1(q.answers, *answer) + em;
            if (!config.retention.keeps(em, r)) continue;
            ReasoningTrace t;
            t.instance_id = q.id;
            t.proxy_kind = proxy.kind;
            t.text = g;
            t.extracted_answer = *answer;
            t.reward = r;
            t.em = em;
            t.sampling = config.sampling;
            t.attempt = config.attempt;
            t.choice = static_cast<int>(c);
            t.cot_token_count = config.counter.count(g);
            t.request_id = id;
            o.traces.push_back(std::move(t));
        }
        if (o.traces.empty()) o.reject = RejectRecord{q.id, "no_retained_trace", o.generations, o.extraction_failures};
        return o;
    });

    AcquireResult r;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto& o = outcomes[i];
        r.retained_per_instance.emplace_back(instances[i].id, o.traces.size());
        r.generations += o.generations;
        r.extraction_failures += o.extraction_failures;
        r.retries += static_cast<std::size_t>(o.retries);
        r.replayed += o.replayed ? 1 : 0;
        r.skipped += o.skipped ? 1 : 0;
        if (o.reject) r.rejects.push_back(*o.reject);
        for (auto& t : o.traces) r.traces.push_back(std::move(t));
    }
    return r;
}

inline json to_json(const ReasoningTrace& t) {
    return {{"format_version", kFormatVersion},
            {"instance_id", t.instance_id},
            {"proxy_kind", to_string(t.proxy_kind)},
            {"text", t.text},
            {"extracted_answer", t.extracted_answer},
            {"reward", t.reward},
            {"em", t.em},
            {"sampling", to_json(t.sampling)},
            {"attempt", t.attempt},
            {"choice", t.choice},
            {"cot_token_count", t.cot_token_count},
            {"request_id", t.request_id}};
}

inline json to_json(const RejectRecord& r) {
    return {{"format_version", kFormatVersion},
            {"instance_id", r.instance_id},
            {"reason", r.reason},
            {"generations", r.generations},
            {"extraction_failures", r.extraction_failures}};
}

inline ReasoningTrace trace_from_json(const json& r, std::size_t line) {
    check_format_version(r, line);
    ReasoningTrace t;
    t.instance_id = field<std::string>(r, "instance_id", line);
    t.proxy_kind = parse_proxy_kind(field<std::string>(r, "proxy_kind", line));
    t.text = field<std::string>(r, "text", line);
    t.extracted_answer = field<std::string>(r, "extracted_answer", line);
    t.reward = field<double>(r, "reward", line);
    t.em = field<int>(r, "em", line);
    t.sampling = sampling_from_json(field<json>(r, "sampling", line));
    t.attempt = field<int>(r, "attempt", line);
    t.choice = r.value("choice", 0);
    t.cot_token_count = field<std::size_t>(r, "cot_token_count", line);
    t.request_id = r.value("request_id", std::string());
    return t;
}

inline void save_traces(const std::filesystem::path& path, std::span<const ReasoningTrace> traces) {
    std::vector<json> records;
    for (const auto& t : traces) records.push_back(to_json(t));
    write_jsonl(path, records);
}

inline void save_rejects(const std::filesystem::path& path, std::span<const RejectRecord> rejects) {
    std::vector<json> records;
    for (const auto& r : rejects) records.push_back(to_json(r));
    write_jsonl(path, records);
}

/// Loads traces and re-scores each against its instance's gold answers; a
/// stored em or reward that disagrees with the recomputation is rejected.
inline std::vector<ReasoningTrace> load_traces(const std::filesystem::path& path, std::span<const QaInstance> instances,
                                               MatchMode match = MatchMode::normalized) {
    std::unordered_map<std::string, const QaInstance*> by_id;
    for (const auto& q : instances) by_id[q.id] = &q;
    std::vector<ReasoningTrace> out;
    for_each_jsonl(path, [&](const json& r, std::size_t line) {
        auto t = trace_from_json(r, line);
        auto it = by_id.find(t.instance_id);
        if (it == by_id.end()) throw Error(Errc::dangling_reference, t.instance_id, "trace for unknown instance");
        int em = exact_match(it->second->answers, t.extracted_answer, match);
        double reward = token_f1(it->second->answers, t.extracted_answer) + em;
        if (em != t.em || std::abs(reward - t.reward) > 1e-9)
            throw Error(Errc::malformed_record, std::to_string(line), "stored em/reward disagree with recomputation");
        out.push_back(std::move(t));
    });
    return out;
}

struct SftRecord {
    std::string instance_id;
    std::string question;
    std::string context_text;
    std::string trace_text;
    std::string answer;
    ProxyKind source_proxy_kind = ProxyKind::annotation;
};

enum class SftSelection { all, one_per_instance };

inline SftSelection parse_sft_selection(std::string_view s) {
    if (s == "all") return SftSelection::all;
    if (s == "one_per_instance") return SftSelection::one_per_instance;
    throw Error(Errc::invalid_argument, std::string(s), "unknown SFT selection (all, one_per_instance)");
}

/// Pairs each selected trace with the FULL context of its instance.
inline std::vector<SftRecord> assemble_sft(std::span<const ReasoningTrace> traces, std::span<const QaInstance> instances,
                                           std::span<const ContextBundle> bundles, SftSelection selection,
                                           std::uint64_t seed) {
    std::unordered_map<std::string, const ContextBundle*> bundle_of;
    for (const auto& b : bundles) bundle_of[b.instance_id] = &b;
    std::unordered_map<std::string, const QaInstance*> instance_of;
    for (const auto& q : instances) instance_of[q.id] = &q;

    std::vector<const ReasoningTrace*> chosen;
    if (selection == SftSelection::all) {
        for (const auto& t : traces) chosen.push_back(&t);
    } else {
        std::map<std::string, std::vector<const ReasoningTrace*>> groups;
        std::vector<std::string> order;
        for (const auto& t : traces) {
            auto& g = groups[t.instance_id];
            if (g.empty()) order.push_back(t.instance_id);
            g.push_back(&t);
        }
        for (const auto& id : order) {
            auto rng = make_rng(seed, id + "/sft");
            const auto& g = groups[id];
            chosen.push_back(g[uniform_index(rng, g.size())]);
        }
    }

    std::vector<SftRecord> out;
    out.reserve(chosen.size());
    for (const auto* t : chosen) {
        auto b = bundle_of.find(t->instance_id);
        if (b == bundle_of.end()) throw Error(Errc::missing_bundle, t->instance_id, "no full-context bundle");
        auto q = instance_of.find(t->instance_id);
        if (q == instance_of.end()) throw Error(Errc::dangling_reference, t->instance_id, "trace for unknown instance");
        out.push_back({t->instance_id, q->second->question, b->second->text, t->text, t->extracted_answer, t->proxy_kind});
    }
    return out;
}

/// Record with raw fields plus chat messages whose user turn is the rendered
/// prompt over the full context.
inline json to_json(const SftRecord& r, const PromptTemplate& tpl, std::string_view system_prompt = {}) {
    json messages = json::array();
    if (!system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", system_prompt}});
    messages.push_back({{"role", "user"}, {"content", render_prompt(tpl, r.question, r.context_text)}});
    messages.push_back({{"role", "assistant"}, {"content", r.trace_text}});
    return {{"format_version", kFormatVersion},
            {"instance_id", r.instance_id},
            {"question", r.question},
            {"context_text", r.context_text},
            {"trace_text", r.trace_text},
            {"answer", r.answer},
            {"source_proxy_kind", to_string(r.source_proxy_kind)},
            {"messages", std::move(messages)}};
}

inline SftRecord sft_from_json(const json& r, std::size_t line) {
    check_format_version(r, line);
    return {field<std::string>(r, "instance_id", line),     field<std::string>(r, "question", line),
            field<std::string>(r, "context_text", line),    field<std::string>(r, "trace_text", line),
            field<std::string>(r, "answer", line),          parse_proxy_kind(field<std::string>(r, "source_proxy_kind", line))};
}

inline void save_sft(const std::filesystem::path& path, std::span<const SftRecord> records, const PromptTemplate& tpl,
                     std::string_view system_prompt = {}) {
    std::vector<json> out;
    for (const auto& r : records) out.push_back(to_json(r, tpl, system_prompt));
    write_jsonl(path, out);
}

inline std::vector<SftRecord> load_sft(const std::filesystem::path& path) {
    std::vector<SftRecord> out;
    for_each_jsonl(path, [&](const json& r, std::size_t line) { out.push_back(sft_from_json(r, line)); });
    return out;
}

struct DatasetStats {
    std::size_t n_instances = 0;
    std::optional<double> full_context_mean;
    std::optional<double> proxy_mean;
    std::optional<double> question_mean;
    std::optional<double> answer_mean;
    std::optional<double> proxy_full_ratio;
    std::string counter_mode;
};

/// Mean token counts over the instances; the answer column uses the first
/// gold answer. Bundles and proxies are matched by instance id.
inline DatasetStats dataset_stats(std::span<const QaInstance> instances, std::span<const ContextBundle> bundles,
                                  std::span<const ProxyContext> proxies, const TokenCounter& counter) {
    std::unordered_map<std::string, const ContextBundle*> bundle_of;
    for (const auto& b : bundles) bundle_of[b.instance_id] = &b;
    std::unordered_map<std::string, const ProxyContext*> proxy_of;
    for (const auto& p : proxies) proxy_of[p.instance_id] = &p;

    DatasetStats s;
    s.n_instances = instances.size();
    s.counter_mode = std::string(to_string(counter.mode()));
    double full = 0, proxy = 0, question = 0, answer = 0;
    std::size_t n_full = 0, n_proxy = 0, n_answer = 0;
    for (const auto& q : instances) {
        question += static_cast<double>(counter.count(q.question));
        if (!q.answers.empty()) {
            answer += static_cast<double>(counter.count(q.answers.front()));
            ++n_answer;
        }
        if (auto b = bundle_of.find(q.id); b != bundle_of.end()) {
            full += static_cast<double>(counter.count(b->second->text));
            ++n_full;
        }
        if (auto p = proxy_of.find(q.id); p != proxy_of.end()) {
            proxy += static_cast<double>(counter.count(p->second->text));
            ++n_proxy;
        }
    }
    if (!instances.empty()) s.question_mean = question / static_cast<double>(instances.size());
    if (n_answer) s.answer_mean = answer / static_cast<double>(n_answer);
    if (n_full) s.full_context_mean = full / static_cast<double>(n_full);
    if (n_proxy) s.proxy_mean = proxy / static_cast<double>(n_proxy);
    if (s.full_context_mean && s.proxy_mean && *s.full_context_mean > 0)
        s.proxy_full_ratio = *s.proxy_mean / *s.full_context_mean;
    return s;
}

inline json to_json(const DatasetStats& s) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"format_version", kFormatVersion},
            {"n_instances", s.n_instances},
            {"counter", s.counter_mode},
            {"full_context_tokens_mean", opt(s.full_context_mean)},
            {"proxy_tokens_mean", opt(s.proxy_mean)},
            {"question_tokens_mean", opt(s.question_mean)},
            {"answer_tokens_mean", opt(s.answer_mean)},
            {"proxy_full_ratio", opt(s.proxy_full_ratio)}};
}

}  // namespace proxycot
