#pragma once

#include <algorithm>
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
#include "proxycot/scoring.hpp"

namespace proxycot {

enum class ContextMode { proxy, full };

inline std::string_view to_string(ContextMode m) noexcept { return m == ContextMode::proxy ? "proxy" : "full"; }

inline ContextMode parse_context_mode(std::string_view s) {
    if (s == "proxy") return ContextMode::proxy;
    if (s == "full") return ContextMode::full;
    throw Error(Errc::invalid_argument, std::string(s), "context mode must be proxy or full");
}

struct Prediction {
    std::string instance_id;
    std::string generation;
};

inline void save_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions) {
    std::vector<json> out;
    for (const auto& p : predictions)
        out.push_back({{"format_version", kFormatVersion}, {"instance_id", p.instance_id}, {"generation", p.generation}});
    write_jsonl(path, out);
}

inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::vector<Prediction> out;
    for_each_jsonl(path, [&](const json& r, std::size_t line) {
        check_format_version(r, line);
        out.push_back({field<std::string>(r, "instance_id", line), field<std::string>(r, "generation", line)});
    });
    return out;
}

struct CotBudget {
    std::size_t n = 0;
    double mean = 0.0;
    double median = 0.0;
    std::size_t max = 0;
    std::size_t unmarked = 0;
    std::vector<std::size_t> counts;
};

/// Tokens before the last answer marker; a generation without the marker is
/// counted whole and flagged.
inline std::size_t cot_tokens(std::string_view generation, const TokenCounter& counter, const AnswerMarker& marker,
                              bool* unmarked = nullptr) {
    auto pos = find_marker(generation, marker);
    if (unmarked) *unmarked = !pos;
    return counter.count(pos ? generation.substr(0, *pos) : generation);
}

inline CotBudget cot_budget(std::span<const std::string> generations, const TokenCounter& counter,
                            const AnswerMarker& marker = {}) {
    CotBudget b;
    b.n = generations.size();
    for (const auto& g : generations) {
        bool unmarked = false;
        b.counts.push_back(cot_tokens(g, counter, marker, &unmarked));
        b.unmarked += unmarked ? 1 : 0;
    }
    if (b.counts.empty()) return b;
    double sum = 0;
    for (auto c : b.counts) sum += static_cast<double>(c);
    b.mean = sum / static_cast<double>(b.n);
    auto sorted = b.counts;
    std::sort(sorted.begin(), sorted.end());
    auto mid = sorted.size() / 2;
    b.median = sorted.size() % 2 ? static_cast<double>(sorted[mid])
                                 : (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid])) / 2.0;
    b.max = sorted.back();
    return b;
}

struct InstanceEval {
    std::string instance_id;
    int em = 0;
    double f1 = 0.0;
    std::optional<std::string> extracted;
    std::optional<Verdict> verdict;
    bool missing = false;
    bool unparseable = false;
    bool unscored = false;
    std::size_t cot_tokens = 0;
    bool cot_unmarked = false;
};

struct EvalReport {
    std::string dataset_id;
    ContextMode context_mode = ContextMode::full;
    std::string counter_mode;
    std::size_t n_instances = 0;
    double em_mean = 0.0;
    double f1_mean = 0.0;
    std::optional<double> judged_accuracy;
    std::size_t unparseable_verdicts = 0;
    std::size_t unscored = 0;
    std::size_t missing_predictions = 0;
    std::size_t extraction_failures = 0;
    double cot_tokens_mean = 0.0;
    double cot_tokens_median = 0.0;
    std::size_t cot_tokens_max = 0;
    std::vector<InstanceEval> per_instance;
};

struct EvalOptions {
    std::string dataset_id = "dataset";
    ContextMode context_mode = ContextMode::full;
    TokenCounter counter = TokenCounter::whitespace();
    AnswerMarker marker;
    MatchMode match = MatchMode::normalized;
};

/// EM/F1 per instance from the extracted answer, averaged as percentages.
/// Missing predictions and extraction failures score zero and are counted.
inline EvalReport evaluate_metric(std::span<const QaInstance> instances, std::span<const Prediction> predictions,
                                  const EvalOptions& options = {}) {
    std::unordered_map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) by_id[p.instance_id] = &p;

    EvalReport r;
    r.dataset_id = options.dataset_id;
    r.context_mode = options.context_mode;
    r.counter_mode = std::string(to_string(options.counter.mode()));
    r.n_instances = instances.size();
    std::vector<std::string> generations;
    for (const auto& q : instances) {
        InstanceEval e;
        e.instance_id = q.id;
        auto it = by_id.find(q.id);
        if (it == by_id.end()) {
            e.missing = true;
            ++r.missing_predictions;
        } else {
            const auto& g = it->second->generation;
            e.cot_tokens = cot_tokens(g, options.counter, options.marker, &e.cot_unmarked);
            generations.push_back(g);
            e.extracted = try_extract_answer(g, options.marker);
            if (!e.extracted) {
                ++r.extraction_failures;
            } else {
                e.em = exact_match(q.answers, *e.extracted, options.match);
                e.f1 = token_f1(q.answers, *e.extracted);
            }
        }
        r.per_instance.push_back(std::move(e));
    }
    if (r.n_instances) {
        double em = 0, f1 = 0;
        for (const auto& e : r.per_instance) {
            em += e.em;
            f1 += e.f1;
        }
        r.em_mean = 100.0 * em / static_cast<double>(r.n_instances);
        r.f1_mean = 100.0 * f1 / static_cast<double>(r.n_instances);
    }
    auto budget = cot_budget(generations, options.counter, options.marker);
    r.cot_tokens_mean = budget.mean;
    r.cot_tokens_median = budget.median;
    r.cot_tokens_max = budget.max;
    return r;
}

inline std::string judge_request_id(std::string_view instance_id) { return "judge:" + std::string(instance_id); }

/// Metric report plus one judge call per instance. Unparseable verdicts,
/// endpoint failures and missing predictions all count as incorrect over the
/// full denominator and are reported separately.
inline EvalReport evaluate_judged(std::span<const QaInstance> instances, std::span<const Prediction> predictions,
                                  InferenceClient& judge, const EvalOptions& options = {}) {
    auto r = evaluate_metric(instances, predictions, options);
    std::unordered_map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) by_id[p.instance_id] = &p;

    parallel_for(instances.size(), judge.config().max_parallel, [&](std::size_t i) {
        const auto& q = instances[i];
        auto& e = r.per_instance[i];
        auto it = by_id.find(q.id);
        if (it == by_id.end()) return;
        std::string prediction = e.extracted ? *e.extracted : std::string(text::trim(it->second->generation));
        try {
            e.verdict = judge.judge(q.question, q.answers, prediction, judge_request_id(q.id)).verdict;
        } catch (const Error& err) {
            if (err.code() == Errc::unparseable_verdict)
                e.unparseable = true;
            else
                e.unscored = true;
        }
    });

    std::size_t correct = 0;
    for (const auto& e : r.per_instance) {
        correct += e.verdict == Verdict::correct ? 1 : 0;
        r.unparseable_verdicts += e.unparseable ? 1 : 0;
        r.unscored += e.unscored ? 1 : 0;
    }
    r.judged_accuracy = r.n_instances ? 100.0 * static_cast<double>(correct) / static_cast<double>(r.n_instances) : 0.0;
    return r;
}

inline json to_json(const EvalReport& r) {
    json rows = json::array();
    for (const auto& e : r.per_instance) {
        json row{{"instance_id", e.instance_id}, {"em", e.em},          {"f1", e.f1},
                 {"missing", e.missing},         {"cot_tokens", e.cot_tokens}, {"cot_unmarked", e.cot_unmarked}};
        row["extracted"] = e.extracted ? json(*e.extracted) : json(nullptr);
        if (e.verdict)
            row["verdict"] = to_string(*e.verdict);
        else if (e.unparseable)
            row["verdict"] = "unparseable";
        else if (e.unscored)
            row["verdict"] = "unscored";
        else
            row["verdict"] = nullptr;
        rows.push_back(std::move(row));
    }
    return {{"format_version", kFormatVersion},
            {"dataset_id", r.dataset_id},
            {"context_mode", to_string(r.context_mode)},
            {"counter", r.counter_mode},
            {"n_instances", r.n_instances},
            {"em_mean", r.em_mean},
            {"f1_mean", r.f1_mean},
            {"judged_accuracy", r.judged_accuracy ? json(*r.judged_accuracy) : json(nullptr)},
            {"unparseable_verdicts", r.unparseable_verdicts},
            {"unscored", r.unscored},
            {"missing_predictions", r.missing_predictions},
            {"extraction_failures", r.extraction_failures},
            {"cot_tokens_mean", r.cot_tokens_mean},
            {"cot_tokens_median", r.cot_tokens_median},
            {"cot_tokens_max", r.cot_tokens_max},
            {"per_instance", std::move(rows)}};
}

}  // namespace proxycot
