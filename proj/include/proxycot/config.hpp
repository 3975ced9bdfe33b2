#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxycot/corpus.hpp"
#include "proxycot/error.hpp"
#include "proxycot/evalharness.hpp"
#include "proxycot/inference.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/longctx.hpp"
#include "proxycot/pipeline.hpp"
#include "proxycot/proxy.hpp"

namespace proxycot {

/// One proxy to build. `budget` applies to random and retrieval kinds,
/// `base`, `ratio` and `pool` to noisy ones.
struct ProxySpec {
    std::string name;
    ProxyKind kind = ProxyKind::annotation;
    std::optional<std::size_t> budget;
    ProxyKind base = ProxyKind::annotation;
    std::size_t ratio = 1;
    NoisePool pool = NoisePool::instance_context;

    std::string resolved_name() const {
        if (!name.empty()) return name;
        if (kind == ProxyKind::noisy) return "noisy-" + std::string(to_string(base)) + "-1-" + std::to_string(ratio);
        return std::string(to_string(kind));
    }
};

/// Parses "1:k" (or a bare k) into the noise multiplier k.
inline std::size_t parse_noise_ratio(std::string_view s) {
    auto colon = s.find(':');
    auto num = [&](std::string_view part) {
        if (part.empty() || !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; }))
            throw Error(Errc::usage_error, std::string(s), "ratio must look like 1:k");
        return static_cast<std::size_t>(std::stoull(std::string(part)));
    };
    if (colon == std::string_view::npos) return num(s);
    if (num(s.substr(0, colon)) != 1) throw Error(Errc::usage_error, std::string(s), "ratio must be 1:k");
    return num(s.substr(colon + 1));
}

inline NoisePool parse_noise_pool(std::string_view s) {
    if (s == "instance_context" || s == "context") return NoisePool::instance_context;
    if (s == "corpus") return NoisePool::corpus;
    throw Error(Errc::usage_error, std::string(s), "noise pool must be context or corpus");
}

inline std::string_view to_string(NoisePool p) noexcept {
    return p == NoisePool::corpus ? "corpus" : "instance_context";
}

struct RunConfig {
    std::filesystem::path documents;
    std::filesystem::path instances;
    CorpusFormat format = CorpusFormat::jsonl;
    CounterMode counter = CounterMode::whitespace;
    std::optional<std::string> vocab;
    ExpansionConfig expansion;
    std::vector<ProxySpec> proxies{ProxySpec{}};
    EndpointConfig generation;
    EndpointConfig judge;
    EndpointConfig embedding;
    SamplingParams teacher_sampling = SamplingParams::teacher();
    SamplingParams eval_sampling = SamplingParams::evaluation();
    std::optional<std::filesystem::path> prompt_template;
    std::string answer_instruction{kDefaultAnswerInstruction};
    std::string answer_marker{kDefaultAnswerMarker};
    RetentionRule retention;
    SftSelection sft_selection = SftSelection::all;
    std::string system_prompt;
    std::string dataset_id = "dataset";
    std::uint64_t seed = 0;
    std::filesystem::path out = "work";

    TokenCounter make_counter() const { return TokenCounter::make(counter, vocab); }

    PromptTemplate make_template() const {
        PromptTemplate t;
        if (prompt_template) t.text = read_file(*prompt_template);
        t.answer_instruction = answer_instruction;
        t.marker.marker = answer_marker;
        return t;
    }
};

namespace detail {
inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw Error(Errc::config_error, std::string(where), "expected an object");
    for (const auto& [k, v] : j.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw Error(Errc::config_error, std::string(where) + "." + k, "unknown config key");
}

inline EndpointConfig endpoint_from_json(const json& j, std::string_view where, EndpointConfig e = {}) {
    check_keys(j, where,
               {"base_url", "model", "api_key_env", "timeout_ms", "max_retries", "max_parallel", "backoff_ms",
                "embed_batch_size"});
    e.base_url = j.value("base_url", e.base_url);
    e.model_name = j.value("model", e.model_name);
    e.api_key_env = j.value("api_key_env", e.api_key_env);
    e.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long long>(e.timeout.count())));
    e.max_retries = j.value("max_retries", e.max_retries);
    e.max_parallel = j.value("max_parallel", e.max_parallel);
    e.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long long>(e.backoff_base.count())));
    e.embed_batch_size = j.value("embed_batch_size", e.embed_batch_size);
    return e;
}

inline json endpoint_to_json(const EndpointConfig& e) {
    return {{"base_url", e.base_url},
            {"model", e.model_name},
            {"api_key_env", e.api_key_env},
            {"timeout_ms", e.timeout.count()},
            {"max_retries", e.max_retries},
            {"max_parallel", e.max_parallel},
            {"backoff_ms", e.backoff_base.count()},
            {"embed_batch_size", e.embed_batch_size}};
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}
}  // namespace detail

/// Parses a config document. Relative paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    using detail::check_keys;
    RunConfig c;
    try {
        check_keys(j, "config",
                   {"corpus", "counter", "expansion", "proxies", "endpoints", "sampling", "templates", "retention",
                    "sft", "evaluation", "seed", "out"});
        if (j.contains("corpus")) {
            const auto& k = j["corpus"];
            check_keys(k, "corpus", {"documents", "instances", "format"});
            if (k.contains("documents")) c.documents = detail::resolve(base_dir, k["documents"].get<std::string>());
            if (k.contains("instances")) c.instances = detail::resolve(base_dir, k["instances"].get<std::string>());
            if (k.contains("format")) c.format = parse_corpus_format(k["format"].get<std::string>());
        }
        if (j.contains("counter")) {
            const auto& k = j["counter"];
            check_keys(k, "counter", {"mode", "vocab"});
            if (k.contains("mode")) c.counter = parse_counter_mode(k["mode"].get<std::string>());
            if (k.contains("vocab") && !k["vocab"].is_null())
                c.vocab = detail::resolve(base_dir, k["vocab"].get<std::string>()).string();
        }
        if (j.contains("expansion")) {
            const auto& k = j["expansion"];
            check_keys(k, "expansion", {"target_tokens", "max_depth", "shuffle_final_order"});
            c.expansion.target_tokens = k.value("target_tokens", c.expansion.target_tokens);
            c.expansion.max_depth = k.value("max_depth", c.expansion.max_depth);
            c.expansion.shuffle_final_order = k.value("shuffle_final_order", c.expansion.shuffle_final_order);
        }
        if (j.contains("proxies")) {
            c.proxies.clear();
            for (const auto& k : j["proxies"]) {
                check_keys(k, "proxies[]", {"name", "kind", "budget", "base", "ratio", "pool"});
                ProxySpec s;
                s.name = k.value("name", std::string());
                s.kind = parse_proxy_kind(k.at("kind").get<std::string>());
                if (k.contains("budget")) s.budget = k["budget"].get<std::size_t>();
                if (k.contains("base")) s.base = parse_proxy_kind(k["base"].get<std::string>());
                if (k.contains("ratio"))
                    s.ratio = k["ratio"].is_string() ? parse_noise_ratio(k["ratio"].get<std::string>())
                                                     : k["ratio"].get<std::size_t>();
                if (k.contains("pool")) s.pool = parse_noise_pool(k["pool"].get<std::string>());
                c.proxies.push_back(s);
            }
        }
        if (j.contains("endpoints")) {
            const auto& k = j["endpoints"];
            check_keys(k, "endpoints", {"generation", "judge", "embedding"});
            if (k.contains("generation")) c.generation = detail::endpoint_from_json(k["generation"], "endpoints.generation");
            if (k.contains("judge")) c.judge = detail::endpoint_from_json(k["judge"], "endpoints.judge");
            if (k.contains("embedding")) c.embedding = detail::endpoint_from_json(k["embedding"], "endpoints.embedding");
        }
        if (j.contains("sampling")) {
            const auto& k = j["sampling"];
            check_keys(k, "sampling", {"teacher", "evaluation"});
            if (k.contains("teacher")) c.teacher_sampling = sampling_from_json(k["teacher"]);
            if (k.contains("evaluation")) c.eval_sampling = sampling_from_json(k["evaluation"]);
        }
        if (j.contains("templates")) {
            const auto& k = j["templates"];
            check_keys(k, "templates", {"prompt", "answer_instruction", "answer_marker"});
            if (k.contains("prompt") && !k["prompt"].is_null())
                c.prompt_template = detail::resolve(base_dir, k["prompt"].get<std::string>());
            c.answer_instruction = k.value("answer_instruction", c.answer_instruction);
            c.answer_marker = k.value("answer_marker", c.answer_marker);
        }
        if (j.contains("retention")) {
            const auto& k = j["retention"];
            check_keys(k, "retention", {"mode", "threshold"});
            auto mode = k.value("mode", std::string("exact_match"));
            if (mode == "exact_match")
                c.retention.mode = RetentionRule::Mode::exact_match;
            else if (mode == "reward_threshold")
                c.retention.mode = RetentionRule::Mode::reward_threshold;
            else
                throw Error(Errc::config_error, "retention.mode", "expected exact_match or reward_threshold");
            c.retention.threshold = k.value("threshold", c.retention.threshold);
        }
        if (j.contains("sft")) {
            const auto& k = j["sft"];
            check_keys(k, "sft", {"selection", "system_prompt"});
            if (k.contains("selection")) c.sft_selection = parse_sft_selection(k["selection"].get<std::string>());
            c.system_prompt = k.value("system_prompt", c.system_prompt);
        }
        if (j.contains("evaluation")) {
            const auto& k = j["evaluation"];
            check_keys(k, "evaluation", {"dataset_id"});
            c.dataset_id = k.value("dataset_id", c.dataset_id);
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("out")) c.out = detail::resolve(base_dir, j["out"].get<std::string>());
    } catch (const json::exception& e) {
        throw Error(Errc::config_error, "config", e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::config_error) throw;
        throw Error(Errc::config_error, e.subject(), e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(Errc::config_error, path.string(), e.what());
    } catch (const Error& e) {
        throw Error(Errc::config_error, path.string(), e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

inline json to_json(const RunConfig& c) {
    json proxies = json::array();
    for (const auto& s : c.proxies) {
        json p{{"name", s.resolved_name()}, {"kind", to_string(s.kind)}};
        if (s.budget) p["budget"] = *s.budget;
        if (s.kind == ProxyKind::noisy) {
            p["base"] = to_string(s.base);
            p["ratio"] = "1:" + std::to_string(s.ratio);
            p["pool"] = to_string(s.pool);
        }
        proxies.push_back(std::move(p));
    }
    const char* selection = c.sft_selection == SftSelection::all ? "all" : "one_per_instance";
    json counter{{"mode", to_string(c.counter)}};
    counter["vocab"] = c.vocab ? json(*c.vocab) : json(nullptr);
    json templates{{"answer_instruction", c.answer_instruction}, {"answer_marker", c.answer_marker}};
    templates["prompt"] = c.prompt_template ? json(c.prompt_template->string()) : json(nullptr);
    return {{"corpus",
             {{"documents", c.documents.string()},
              {"instances", c.instances.string()},
              {"format", c.format == CorpusFormat::jsonl ? "jsonl" : "hotpotqa"}}},
            {"counter", counter},
            {"expansion",
             {{"target_tokens", c.expansion.target_tokens},
              {"max_depth", c.expansion.max_depth},
              {"shuffle_final_order", c.expansion.shuffle_final_order}}},
            {"proxies", proxies},
            {"endpoints",
             {{"generation", detail::endpoint_to_json(c.generation)},
              {"judge", detail::endpoint_to_json(c.judge)},
              {"embedding", detail::endpoint_to_json(c.embedding)}}},
            {"sampling", {{"teacher", to_json(c.teacher_sampling)}, {"evaluation", to_json(c.eval_sampling)}}},
            {"templates", templates},
            {"retention",
             {{"mode", c.retention.mode == RetentionRule::Mode::exact_match ? "exact_match" : "reward_threshold"},
              {"threshold", c.retention.threshold}}},
            {"sft", {{"selection", selection}, {"system_prompt", c.system_prompt}}},
            {"evaluation", {{"dataset_id", c.dataset_id}}},
            {"seed", c.seed},
            {"out", c.out.string()}};
}

}  // namespace proxycot
