#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "proxycot/config.hpp"
#include "proxycot/corpus.hpp"
#include "proxycot/error.hpp"
#include "proxycot/evalharness.hpp"
#include "proxycot/inference.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/longctx.hpp"
#include "proxycot/mock_endpoint.hpp"
#include "proxycot/pipeline.hpp"
#include "proxycot/proxy.hpp"

namespace proxycot::cli {

namespace fs = std::filesystem;

/// Fixed layout of a working directory.
struct WorkDir {
    fs::path root;

    fs::path documents() const { return root / "corpus" / "documents.jsonl"; }
    fs::path instances() const { return root / "corpus" / "instances.jsonl"; }
    fs::path diagnostics() const { return root / "corpus" / "diagnostics.jsonl"; }
    fs::path bundles() const { return root / "longctx" / "bundles.jsonl"; }
    fs::path contexts() const { return root / "longctx" / "contexts.jsonl"; }
    fs::path proxy(const std::string& name) const { return root / "proxies" / (name + ".jsonl"); }
    fs::path traces() const { return root / "traces" / "traces.jsonl"; }
    fs::path rejects() const { return root / "traces" / "rejects.jsonl"; }
    fs::path transcript() const { return root / "traces" / "transcript.jsonl"; }
    fs::path sft() const { return root / "sft" / "sft.jsonl"; }
    fs::path stats(const std::string& name) const { return root / "stats" / (name + ".json"); }
    fs::path predictions() const { return root / "eval" / "predictions.jsonl"; }
    fs::path eval_transcript() const { return root / "eval" / "transcript.jsonl"; }
    fs::path eval_report() const { return root / "eval" / "report.json"; }
    fs::path judge_report() const { return root / "judge" / "report.json"; }
    fs::path judge_transcript() const { return root / "judge" / "transcript.jsonl"; }
    fs::path manifest(const std::string& stage) const { return root / "manifests" / (stage + ".json"); }
};

inline std::string file_hash(const fs::path& p) { return fs::exists(p) ? content_hash(read_file(p)) : std::string(); }

struct StageSpec {
    std::string stage;
    json params = json::object();
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::string model;
    std::string template_hash;
};

/// Runs `work` unless the stage manifest shows identical inputs and params
/// and the recorded outputs are still in place. The manifest is written as
/// "running" before any work starts and completed afterwards.
inline json run_stage(const RunConfig& cfg, const StageSpec& spec, const std::function<json()>& work) {
    WorkDir wd{cfg.out};
    auto manifest_path = wd.manifest(spec.stage);
    json inputs = json::object();
    for (const auto& p : spec.inputs) inputs[p.string()] = file_hash(p);
    auto resolved = to_json(cfg);
    json manifest{{"format_version", kFormatVersion},
                  {"stage", spec.stage},
                  {"config_hash", content_hash(resolved.dump())},
                  {"config", resolved},
                  {"seed", cfg.seed},
                  {"params", spec.params},
                  {"model", spec.model},
                  {"template_hash", spec.template_hash},
                  {"inputs", inputs},
                  {"notes", "teacher traces are not deduplicated"}};

    if (fs::exists(manifest_path)) {
        auto old = json::parse(read_file(manifest_path), nullptr, false);
        bool same = !old.is_discarded() && old.value("status", "") == "complete" && old["params"] == spec.params &&
                    old["inputs"] == inputs && old.value("model", "") == spec.model &&
                    old.value("template_hash", "") == spec.template_hash && old.value("seed", json()) == json(cfg.seed);
        if (same) {
            for (const auto& [path, hash] : old["outputs"].items())
                if (file_hash(path) != hash.get<std::string>()) same = false;
        }
        if (same) {
            auto summary = old.value("summary", json::object());
            summary["stage"] = spec.stage;
            summary["skipped"] = true;
            return summary;
        }
    }

    manifest["status"] = "running";
    write_file(manifest_path, manifest.dump(2) + "\n");
    json summary = work();
    json outputs = json::object();
    for (const auto& p : spec.outputs) outputs[p.string()] = file_hash(p);
    manifest["status"] = "complete";
    manifest["outputs"] = outputs;
    manifest["summary"] = summary;
    write_file(manifest_path, manifest.dump(2) + "\n");
    summary["stage"] = spec.stage;
    summary["skipped"] = false;
    return summary;
}

struct Loaded {
    Corpus corpus;
    std::vector<QaInstance> instances;
};

inline Loaded load_work_corpus(const WorkDir& wd) {
    auto r = load_corpus({wd.documents(), wd.instances()});
    return {std::move(r.corpus), std::move(r.instances)};
}

inline std::unordered_map<std::string, ContextBundle> bundle_map(std::vector<ContextBundle> bundles) {
    std::unordered_map<std::string, ContextBundle> out;
    for (auto& b : bundles) out.emplace(b.instance_id, std::move(b));
    return out;
}

// ---------------------------------------------------------------------------
// Stages

inline json stage_ingest(const RunConfig& cfg) {
    WorkDir wd{cfg.out};
    if (cfg.instances.empty()) throw Error(Errc::config_error, "corpus.instances", "no instance file configured");
    StageSpec spec{"ingest",
                   {{"format", cfg.format == CorpusFormat::jsonl ? "jsonl" : "hotpotqa"}},
                   {cfg.documents, cfg.instances},
                   {wd.documents(), wd.instances(), wd.diagnostics()}};
    return run_stage(cfg, spec, [&] {
        auto r = load_corpus({cfg.documents, cfg.instances}, cfg.format);
        save_corpus({wd.documents(), wd.instances()}, r.corpus, r.instances);
        std::vector<json> diags;
        std::size_t warnings = 0;
        for (const auto& d : r.diagnostics) {
            warnings += d.severity == Diagnostic::Severity::warning ? 1 : 0;
            diags.push_back({{"severity", d.severity == Diagnostic::Severity::warning ? "warning" : "rejected"},
                             {"code", to_string(d.code)},
                             {"subject", d.subject},
                             {"message", d.message}});
        }
        write_jsonl(wd.diagnostics(), diags);
        return json{{"documents", r.corpus.size()},
                    {"instances", r.instances.size()},
                    {"rejected", r.rejected()},
                    {"warnings", warnings}};
    });
}

inline json stage_build_longctx(const RunConfig& cfg) {
    WorkDir wd{cfg.out};
    ExpansionConfig ex = cfg.expansion;
    ex.seed = cfg.seed;
    StageSpec spec{"build-longctx",
                   {{"target_tokens", ex.target_tokens},
                    {"max_depth", ex.max_depth},
                    {"shuffle_final_order", ex.shuffle_final_order},
                    {"counter", to_string(cfg.counter)}},
                   {wd.documents(), wd.instances()},
                   {wd.bundles(), wd.contexts()}};
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto counter = cfg.make_counter();
        std::vector<ContextBundle> bundles;
        std::size_t under = 0, dangling = 0;
        double tokens = 0;
        for (const auto& q : data.instances) {
            auto lc = build_long_context(q, data.corpus, ex, counter);
            under += lc.bundle.under_budget ? 1 : 0;
            dangling += lc.dangling.size();
            tokens += static_cast<double>(lc.bundle.token_count);
            bundles.push_back(std::move(lc.bundle));
        }
        save_bundles(wd.bundles(), wd.contexts(), bundles);
        return json{{"bundles", bundles.size()},
                    {"under_budget", under},
                    {"dangling_links", dangling},
                    {"mean_tokens", bundles.empty() ? 0.0 : tokens / static_cast<double>(bundles.size())}};
    });
}

inline json stage_build_proxy(const RunConfig& cfg, const ProxySpec& ps) {
    WorkDir wd{cfg.out};
    auto name = ps.resolved_name();
    bool needs_bundle = ps.kind != ProxyKind::annotation && ps.kind != ProxyKind::metadata;
    StageSpec spec{"build-proxy-" + name,
                   {{"kind", to_string(ps.kind)}, {"counter", to_string(cfg.counter)}},
                   {wd.documents(), wd.instances()},
                   {wd.proxy(name)}};
    if (ps.budget) spec.params["budget"] = *ps.budget;
    if (ps.kind == ProxyKind::noisy) {
        spec.params["base"] = to_string(ps.base);
        spec.params["ratio"] = "1:" + std::to_string(ps.ratio);
        spec.params["pool"] = to_string(ps.pool);
    }
    if (ps.kind == ProxyKind::embedding) spec.model = cfg.embedding.model_name;
    if (needs_bundle) {
        spec.inputs.push_back(wd.bundles());
        spec.inputs.push_back(wd.contexts());
    }
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto counter = cfg.make_counter();
        std::unordered_map<std::string, ContextBundle> bundles;
        if (needs_bundle) bundles = bundle_map(load_bundles(wd.bundles(), wd.contexts()));
        std::optional<InferenceClient> embed_client;
        RetrievalConfig rc;
        if (ps.kind == ProxyKind::embedding) {
            embed_client.emplace(cfg.embedding);
            rc.embedder = [&](std::span<const std::string> texts) { return embed_client->embed(texts); };
        }

        std::vector<ProxyContext> proxies;
        json skipped = json::array();
        std::size_t warnings = 0;
        for (const auto& q : data.instances) {
            const ContextBundle* bundle = nullptr;
            if (needs_bundle) {
                auto it = bundles.find(q.id);
                if (it == bundles.end()) throw Error(Errc::missing_bundle, q.id, "build-longctx has not produced it");
                bundle = &it->second;
            }
            auto oracle = [&](ProxyKind kind) {
                return kind == ProxyKind::metadata ? metadata_proxy(q, counter) : annotation_proxy(q, data.corpus, counter);
            };
            auto budget = [&] {
                if (ps.budget) return *ps.budget;
                return oracle(q.metadata ? ProxyKind::metadata : ProxyKind::annotation).token_count;
            };
            try {
                ProxyContext p;
                switch (ps.kind) {
                case ProxyKind::annotation:
                case ProxyKind::metadata: p = oracle(ps.kind); break;
                case ProxyKind::random: p = random_proxy(q, data.corpus, *bundle, budget(), cfg.seed, counter); break;
                case ProxyKind::bm25:
                    p = retrieval_proxy(q, data.corpus, *bundle, RetrievalMode::bm25, budget(), rc, counter);
                    break;
                case ProxyKind::embedding:
                    p = retrieval_proxy(q, data.corpus, *bundle, RetrievalMode::embedding, budget(), rc, counter);
                    break;
                case ProxyKind::noisy:
                    p = noisy_proxy(oracle(ps.base), data.corpus, *bundle, ps.ratio, cfg.seed, counter, ps.pool);
                    break;
                }
                warnings += p.warnings.size();
                proxies.push_back(std::move(p));
            } catch (const Error& e) {
                if (e.code() != Errc::empty_support && e.code() != Errc::missing_metadata && e.code() != Errc::empty_context)
                    throw;
                skipped.push_back({{"instance_id", q.id}, {"error", to_string(e.code())}});
            }
        }
        save_proxies(wd.proxy(name), proxies);
        return json{{"name", name}, {"proxies", proxies.size()}, {"skipped", skipped}, {"warnings", warnings}};
    });
}

inline json stage_sample_traces(const RunConfig& cfg, const std::string& proxy_name) {
    WorkDir wd{cfg.out};
    auto tpl = cfg.make_template();
    StageSpec spec{"sample-traces",
                   {{"proxy", proxy_name},
                    {"sampling", to_json(cfg.teacher_sampling)},
                    {"retention", to_json(cfg).at("retention")},
                    {"counter", to_string(cfg.counter)}},
                   {wd.instances(), wd.proxy(proxy_name)},
                   {wd.traces(), wd.rejects()},
                   cfg.generation.model_name,
                   tpl.hash()};
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto proxies = load_proxies(wd.proxy(proxy_name));
        std::unordered_map<std::string, bool> has_proxy;
        for (const auto& p : proxies) has_proxy[p.instance_id] = true;
        std::vector<QaInstance> covered;
        for (const auto& q : data.instances)
            if (has_proxy.contains(q.id)) covered.push_back(q);

        InferenceClient client(cfg.generation, std::make_shared<Transcript>(wd.transcript()));
        AcquireConfig ac;
        ac.sampling = cfg.teacher_sampling;
        ac.prompt = tpl;
        ac.retention = cfg.retention;
        ac.counter = cfg.make_counter();
        auto r = acquire_traces(covered, proxies, client, ac);
        save_traces(wd.traces(), r.traces);
        save_rejects(wd.rejects(), r.rejects);
        json retained = json::object();
        for (const auto& [id, n] : r.retained_per_instance) retained[id] = n;
        return json{{"instances", covered.size()},
                    {"generations", r.generations},
                    {"traces", r.traces.size()},
                    {"rejects", r.rejects.size()},
                    {"extraction_failures", r.extraction_failures},
                    {"context_overflow", r.skipped},
                    {"retries", r.retries},
                    {"replayed", r.replayed},
                    {"requests_sent", client.requests_sent()},
                    {"retained_per_instance", retained}};
    });
}

inline json stage_assemble_sft(const RunConfig& cfg) {
    WorkDir wd{cfg.out};
    auto tpl = cfg.make_template();
    StageSpec spec{"assemble-sft",
                   {{"selection", cfg.sft_selection == SftSelection::all ? "all" : "one_per_instance"},
                    {"system_prompt", cfg.system_prompt}},
                   {wd.instances(), wd.traces(), wd.bundles(), wd.contexts()},
                   {wd.sft()},
                   "",
                   tpl.hash()};
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto traces = load_traces(wd.traces(), data.instances);
        auto bundles = load_bundles(wd.bundles(), wd.contexts());
        auto records = assemble_sft(traces, data.instances, bundles, cfg.sft_selection, cfg.seed);
        save_sft(wd.sft(), records, tpl, cfg.system_prompt);
        std::unordered_map<std::string, bool> instances;
        for (const auto& r : records) instances[r.instance_id] = true;
        return json{{"records", records.size()}, {"instances", instances.size()}};
    });
}

inline json stage_stats(const RunConfig& cfg, const std::string& proxy_name) {
    WorkDir wd{cfg.out};
    StageSpec spec{"stats-" + proxy_name,
                   {{"proxy", proxy_name}, {"counter", to_string(cfg.counter)}},
                   {wd.instances(), wd.bundles(), wd.contexts(), wd.proxy(proxy_name)},
                   {wd.stats(proxy_name)}};
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto bundles = load_bundles(wd.bundles(), wd.contexts());
        auto proxies = load_proxies(wd.proxy(proxy_name));
        auto s = to_json(dataset_stats(data.instances, bundles, proxies, cfg.make_counter()));
        s["proxy"] = proxy_name;
        write_file(wd.stats(proxy_name), s.dump(2) + "\n");
        return s;
    });
}

inline EvalOptions eval_options(const RunConfig& cfg, ContextMode mode) {
    EvalOptions o;
    o.dataset_id = cfg.dataset_id;
    o.context_mode = mode;
    o.counter = cfg.make_counter();
    o.marker.marker = cfg.answer_marker;
    return o;
}

inline json report_summary(const EvalReport& r) {
    auto j = to_json(r);
    j.erase("per_instance");
    return j;
}

/// Generates predictions (unless a prediction file is given) and scores them.
inline json stage_evaluate(const RunConfig& cfg, ContextMode mode, const std::string& proxy_name,
                           const std::optional<fs::path>& predictions_in) {
    WorkDir wd{cfg.out};
    auto tpl = cfg.make_template();
    StageSpec spec{"evaluate",
                   {{"context_mode", to_string(mode)},
                    {"sampling", to_json(cfg.eval_sampling)},
                    {"counter", to_string(cfg.counter)}},
                   {wd.instances()},
                   {wd.predictions(), wd.eval_report()},
                   cfg.generation.model_name,
                   tpl.hash()};
    if (predictions_in) {
        spec.inputs.push_back(*predictions_in);
        spec.params["predictions"] = predictions_in->string();
        spec.model.clear();
    } else if (mode == ContextMode::full) {
        spec.inputs.push_back(wd.bundles());
        spec.inputs.push_back(wd.contexts());
    } else {
        spec.params["proxy"] = proxy_name;
        spec.inputs.push_back(wd.proxy(proxy_name));
    }
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        std::vector<Prediction> predictions;
        std::size_t overflow = 0;
        if (predictions_in) {
            predictions = load_predictions(*predictions_in);
        } else {
            std::unordered_map<std::string, std::string> contexts;
            if (mode == ContextMode::full) {
                for (auto& b : load_bundles(wd.bundles(), wd.contexts())) contexts[b.instance_id] = std::move(b.text);
            } else {
                for (auto& p : load_proxies(wd.proxy(proxy_name))) contexts[p.instance_id] = std::move(p.text);
            }
            InferenceClient client(cfg.generation, std::make_shared<Transcript>(wd.eval_transcript()));
            auto params = cfg.eval_sampling;
            params.n = 1;
            auto outs = parallel_map<std::optional<std::string>>(
                data.instances.size(), cfg.generation.max_parallel, [&](std::size_t i) -> std::optional<std::string> {
                    const auto& q = data.instances[i];
                    auto it = contexts.find(q.id);
                    if (it == contexts.end()) return std::nullopt;
                    try {
                        auto r = client.sample_completions(render_prompt(tpl, q.question, it->second), params,
                                                           "eval:" + std::string(to_string(mode)) + ":" + q.id);
                        return r.generations.front();
                    } catch (const Error& e) {
                        if (e.code() == Errc::context_overflow) return std::nullopt;
                        throw;
                    }
                });
            for (std::size_t i = 0; i < outs.size(); ++i) {
                if (outs[i])
                    predictions.push_back({data.instances[i].id, *outs[i]});
                else
                    ++overflow;
            }
            save_predictions(wd.predictions(), predictions);
        }
        auto report = evaluate_metric(data.instances, predictions, eval_options(cfg, mode));
        write_file(wd.eval_report(), to_json(report).dump(2) + "\n");
        auto s = report_summary(report);
        s["unanswered"] = overflow;
        return s;
    });
}

inline json stage_judge(const RunConfig& cfg, const fs::path& predictions_path, ContextMode mode) {
    WorkDir wd{cfg.out};
    StageSpec spec{"judge",
                   {{"predictions", predictions_path.string()}, {"context_mode", to_string(mode)}},
                   {wd.instances(), predictions_path},
                   {wd.judge_report()},
                   cfg.judge.model_name,
                   content_hash(render_judge_prompt("{QUESTION}", std::vector<std::string>{}, "{PREDICTION}"))};
    return run_stage(cfg, spec, [&] {
        auto data = load_work_corpus(wd);
        auto predictions = load_predictions(predictions_path);
        InferenceClient client(cfg.judge, std::make_shared<Transcript>(wd.judge_transcript()));
        auto report = evaluate_judged(data.instances, predictions, client, eval_options(cfg, mode));
        write_file(wd.judge_report(), to_json(report).dump(2) + "\n");
        return report_summary(report);
    });
}

// ---------------------------------------------------------------------------
// Smoke run against the bundled mock endpoint

#ifdef PROXYCOT_SMOKE_FIXTURE_DIR
inline const fs::path kDefaultSmokeFixture = PROXYCOT_SMOKE_FIXTURE_DIR;
#else
inline const fs::path kDefaultSmokeFixture = "data/smoke";
#endif

/// Walks `expected` and reports every leaf that `actual` does not match.
inline void compare_expected(const json& expected, const json& actual, const std::string& path,
                             std::vector<std::string>& mismatches) {
    if (expected.is_object()) {
        for (const auto& [k, v] : expected.items()) {
            if (!actual.is_object() || !actual.contains(k)) {
                mismatches.push_back(path + k + ": missing");
                continue;
            }
            compare_expected(v, actual[k], path + k + ".", mismatches);
        }
        return;
    }
    bool ok = expected.is_number() && actual.is_number()
                  ? std::abs(expected.get<double>() - actual.get<double>()) <= 1e-9
                  : expected == actual;
    if (!ok) mismatches.push_back(path + " expected " + expected.dump() + ", got " + actual.dump());
}

inline json run_smoke(const fs::path& fixture, const fs::path& out_dir, std::ostream& out) {
    auto started = std::chrono::steady_clock::now();
    auto cfg = load_run_config(fixture / "config.json");
    cfg.out = out_dir;
    auto script = mock_script_from_json(json::parse(read_file(fixture / "mock_script.json")));
    MockEndpoint mock(script);
    for (auto* e : {&cfg.generation, &cfg.judge, &cfg.embedding}) {
        e->base_url = mock.base_url();
        e->backoff_base = std::chrono::milliseconds(1);
    }

    json stages = json::object();
    auto emit = [&](const json& s) {
        out << s.dump() << "\n";
        stages[s.at("stage").get<std::string>()] = s;
    };
    emit(stage_ingest(cfg));
    emit(stage_build_longctx(cfg));
    std::vector<std::string> proxy_names;
    for (const auto& ps : cfg.proxies) {
        emit(stage_build_proxy(cfg, ps));
        proxy_names.push_back(ps.resolved_name());
    }
    if (proxy_names.empty()) throw Error(Errc::config_error, "proxies", "smoke needs at least one proxy");
    emit(stage_sample_traces(cfg, proxy_names.front()));
    emit(stage_assemble_sft(cfg));
    for (const auto& n : proxy_names) emit(stage_stats(cfg, n));
    emit(stage_evaluate(cfg, ContextMode::full, proxy_names.front(), std::nullopt));
    emit(stage_judge(cfg, WorkDir{cfg.out}.predictions(), ContextMode::full));

    json actual{{"documents", stages["ingest"]["documents"]},
                {"instances", stages["ingest"]["instances"]},
                {"bundles", stages["build-longctx"]["bundles"]},
                {"proxies", json::object()},
                {"traces", stages["sample-traces"]["traces"]},
                {"rejects", stages["sample-traces"]["rejects"]},
                {"extraction_failures", stages["sample-traces"]["extraction_failures"]},
                {"sft_records", stages["assemble-sft"]["records"]},
                {"evaluate", stages["evaluate"]},
                {"judge", stages["judge"]}};
    for (const auto& n : proxy_names) actual["proxies"][n] = stages["build-proxy-" + n]["proxies"];

    std::vector<std::string> mismatches;
    if (fs::exists(fixture / "expected.json"))
        compare_expected(json::parse(read_file(fixture / "expected.json")), actual, "", mismatches);
    auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {{"smoke", mismatches.empty() ? "ok" : "mismatch"},
            {"seconds", seconds},
            {"actual", actual},
            {"mismatches", mismatches},
            {"mock_requests", mock.request_count()}};
}

// ---------------------------------------------------------------------------
// Entry point

inline int exit_code(Errc code) {
    if (code == Errc::usage_error) return 2;
    if (code == Errc::config_error) return 3;
    return 1;
}

inline void print_error(std::ostream& err, std::string_view code, std::string_view subject, std::string_view message,
                        int exit) {
    json line{{"error", code}, {"subject", subject}, {"message", message}, {"exit", exit}};
    err << line.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
}

struct CommonOptions {
    std::string config;
    std::uint64_t seed = 0;
    std::size_t parallel = 1;
    std::string counter;
    std::string endpoint_url;
    std::string model;
    std::string out;
    std::map<std::string, CLI::Option*> given;
};

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Proxy-context reasoning-trace pipeline", "proxycot"};
    app.require_subcommand(1);
    CommonOptions common;

    auto add_common = [&](CLI::App* sub) {
        common.given["config"] = sub->add_option("--config", common.config, "Run configuration (JSON)");
        common.given["seed"] = sub->add_option("--seed", common.seed, "Seed for every seeded choice");
        common.given["parallel"] =
            sub->add_option("--parallel", common.parallel, "Bound on concurrent endpoint requests")->check(CLI::PositiveNumber);
        common.given["counter"] =
            sub->add_option("--counter", common.counter, "Token counter: whitespace, chars-over-4, external-vocab");
        common.given["endpoint-url"] = sub->add_option("--endpoint-url", common.endpoint_url, "Model endpoint base URL");
        common.given["model"] = sub->add_option("--model", common.model, "Model name sent to the endpoint");
        common.given["out"] = sub->add_option("--out", common.out, "Working directory");
    };
    std::map<std::string, std::map<std::string, CLI::Option*>> given_by_sub;
    auto make_sub = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub);
        given_by_sub[name] = common.given;
        return sub;
    };

    std::string documents, instances, format;
    auto* ingest = make_sub("ingest", "Load and validate a corpus into the working directory");
    ingest->add_option("--documents", documents, "Documents file");
    ingest->add_option("--instances", instances, "Instances file");
    ingest->add_option("--format", format, "jsonl or hotpotqa");

    std::size_t target_tokens = 0, max_depth = 0;
    auto* longctx = make_sub("build-longctx", "Build full long contexts by link expansion");
    auto* opt_target = longctx->add_option("--budget", target_tokens, "Target context tokens");
    auto* opt_depth = longctx->add_option("--max-depth", max_depth, "Maximum link hops");

    std::string kind = "annotation", ratio, noise_pool, base_kind, proxy_name;
    std::size_t proxy_budget = 0;
    auto* proxy = make_sub("build-proxy", "Build one proxy context per instance");
    proxy->add_option("--kind", kind, "annotation, metadata, bm25, embedding, random or noisy");
    proxy->add_option("--ratio", ratio, "Oracle:noise ratio for noisy proxies, e.g. 1:5");
    proxy->add_option("--noise-pool", noise_pool, "context or corpus");
    proxy->add_option("--base", base_kind, "Oracle kind under noise (annotation or metadata)");
    auto* opt_proxy_budget = proxy->add_option("--budget", proxy_budget, "Token budget for random and retrieval proxies");
    proxy->add_option("--name", proxy_name, "Output name under proxies/");

    std::string sample_proxy = "annotation";
    auto* sample = make_sub("sample-traces", "Sample teacher traces on a proxy and keep the correct ones");
    sample->add_option("--proxy", sample_proxy, "Proxy name under proxies/");

    std::string selection;
    auto* sft = make_sub("assemble-sft", "Pair retained traces with full contexts");
    sft->add_option("--selection", selection, "all or one_per_instance");

    std::string stats_proxy = "annotation";
    auto* stats = make_sub("stats", "Token statistics of contexts, proxies, questions and answers");
    stats->add_option("--proxy", stats_proxy, "Proxy name under proxies/");

    std::string context_mode = "full", eval_proxy = "annotation", predictions;
    auto* evaluate = make_sub("evaluate", "Generate predictions and score them by EM/F1");
    evaluate->add_option("--context", context_mode, "full or proxy");
    evaluate->add_option("--proxy", eval_proxy, "Proxy name for --context proxy");
    evaluate->add_option("--predictions", predictions, "Score an existing prediction file instead of generating");

    std::string judge_predictions, judge_context = "full";
    auto* judge = make_sub("judge", "Judged accuracy of predictions");
    judge->add_option("--predictions", judge_predictions, "Prediction file (default: eval/predictions.jsonl)");
    judge->add_option("--context", judge_context, "Context mode label for the report");

    std::string fixture;
    auto* smoke = make_sub("smoke", "Full pipeline on the bundled fixture against the mock endpoint");
    smoke->add_option("--fixture", fixture, "Fixture directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, "UsageError", "argv", e.what(), 2);
        const CLI::App* failing = &app;
        for (const auto* s : app.get_subcommands()) failing = s;
        err << failing->help();
        return 2;
    }

    const auto* active = app.get_subcommands().front();
    const auto& given = given_by_sub[active->get_name()];
    auto was_given = [&](const std::string& k) { return given.at(k)->count() > 0; };

    try {
        RunConfig cfg;
        if (was_given("config")) cfg = load_run_config(common.config);
        if (was_given("seed")) cfg.seed = common.seed;
        if (was_given("counter")) {
            try {
                cfg.counter = parse_counter_mode(common.counter);
            } catch (const Error& e) {
                throw Error(Errc::usage_error, common.counter, e.what());
            }
        }
        if (was_given("parallel"))
            for (auto* e : {&cfg.generation, &cfg.judge, &cfg.embedding}) e->max_parallel = common.parallel;
        if (was_given("out")) cfg.out = common.out;

        auto role = [&]() -> EndpointConfig* {
            if (active == judge) return &cfg.judge;
            if (active == proxy && kind == "embedding") return &cfg.embedding;
            return &cfg.generation;
        }();
        if (was_given("endpoint-url")) role->base_url = common.endpoint_url;
        if (was_given("model")) role->model_name = common.model;

        json result;
        if (active == ingest) {
            if (!documents.empty()) cfg.documents = documents;
            if (!instances.empty()) cfg.instances = instances;
            if (!format.empty()) cfg.format = parse_corpus_format(format);
            result = stage_ingest(cfg);
        } else if (active == longctx) {
            if (opt_target->count()) cfg.expansion.target_tokens = target_tokens;
            if (opt_depth->count()) cfg.expansion.max_depth = max_depth;
            result = stage_build_longctx(cfg);
        } else if (active == proxy) {
            ProxySpec ps;
            try {
                ps.kind = parse_proxy_kind(kind);
                if (!base_kind.empty()) ps.base = parse_proxy_kind(base_kind);
            } catch (const Error& e) {
                throw Error(Errc::usage_error, e.subject(), e.what());
            }
            if (ps.kind == ProxyKind::noisy && (ps.base != ProxyKind::annotation && ps.base != ProxyKind::metadata))
                throw Error(Errc::usage_error, base_kind, "noise needs an annotation or metadata base");
            if (!ratio.empty()) ps.ratio = parse_noise_ratio(ratio);
            if (!noise_pool.empty()) ps.pool = parse_noise_pool(noise_pool);
            if (opt_proxy_budget->count()) ps.budget = proxy_budget;
            ps.name = proxy_name;
            result = stage_build_proxy(cfg, ps);
        } else if (active == sample) {
            result = stage_sample_traces(cfg, sample_proxy);
        } else if (active == sft) {
            if (!selection.empty()) cfg.sft_selection = parse_sft_selection(selection);
            result = stage_assemble_sft(cfg);
        } else if (active == stats) {
            result = stage_stats(cfg, stats_proxy);
        } else if (active == evaluate) {
            std::optional<fs::path> in;
            if (!predictions.empty()) in = predictions;
            result = stage_evaluate(cfg, parse_context_mode(context_mode), eval_proxy, in);
        } else if (active == judge) {
            fs::path in = judge_predictions.empty() ? WorkDir{cfg.out}.predictions() : fs::path(judge_predictions);
            result = stage_judge(cfg, in, parse_context_mode(judge_context));
        } else if (active == smoke) {
            fs::path dir = fixture.empty() ? kDefaultSmokeFixture : fs::path(fixture);
            fs::path work = was_given("out") ? fs::path(common.out) : fs::path("smoke-work");
            result = run_smoke(dir, work, out);
            out << result.dump() << "\n";
            if (result["smoke"] != "ok") {
                print_error(err, "SmokeMismatch", dir.string(), result["mismatches"].dump(), 1);
                return 1;
            }
            return 0;
        }
        out << result.dump() << "\n";
        return 0;
    } catch (const Error& e) {
        int code = exit_code(e.code());
        print_error(err, to_string(e.code()), e.subject(), e.what(), code);
        if (code == 2) err << active->help();
        return code;
    } catch (const std::exception& e) {
        print_error(err, "InternalError", active->get_name(), e.what(), 1);
        return 1;
    }
}

}  // namespace proxycot::cli
