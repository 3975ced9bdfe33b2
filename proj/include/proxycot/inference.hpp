#pragma once

#include <httplib.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "proxycot/concurrency.hpp"
#include "proxycot/error.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/random.hpp"
#include "proxycot/retrieval.hpp"
#include "proxycot/text.hpp"

namespace proxycot {

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::optional<std::string> api_key;
    std::string api_key_env = "PROXYCOT_API_KEY";
    std::string model_name = "default";
    std::chrono::milliseconds timeout{120000};
    int max_retries = 4;
    std::size_t max_parallel = 4;
    std::chrono::milliseconds backoff_base{500};
    std::chrono::milliseconds backoff_cap{30000};
    std::size_t embed_batch_size = 64;

    void validate() const {
        if (max_parallel < 1) throw Error(Errc::invalid_argument, "max_parallel", "must be at least 1");
        if (max_retries < 0) throw Error(Errc::invalid_argument, "max_retries", "must not be negative");
        if (embed_batch_size < 1) throw Error(Errc::invalid_argument, "embed_batch_size", "must be at least 1");
        if (base_url.find("://") == std::string::npos)
            throw Error(Errc::invalid_argument, base_url, "endpoint url needs a scheme");
    }
};

struct SamplingParams {
    double temperature = 0.7;
    double top_p = 0.8;
    int top_k = 20;
    double min_p = 0.0;
    int max_tokens = 32768;
    int n = 3;

    /// Teacher trace generation.
    static SamplingParams teacher() { return {}; }
    /// Answer generation at evaluation time.
    static SamplingParams evaluation() {
        SamplingParams p;
        p.max_tokens = 2048;
        p.n = 1;
        return p;
    }

    void validate() const {
        if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(Errc::invalid_argument, "top_p", "must lie in (0, 1]");
        if (temperature < 0.0) throw Error(Errc::invalid_argument, "temperature", "must not be negative");
        if (max_tokens < 1) throw Error(Errc::invalid_argument, "max_tokens", "must be positive");
        if (n < 1) throw Error(Errc::invalid_argument, "n", "must be positive");
    }

    bool operator==(const SamplingParams&) const = default;
};

inline json to_json(const SamplingParams& p) {
    return {{"temperature", p.temperature}, {"top_p", p.top_p}, {"top_k", p.top_k},
            {"min_p", p.min_p},             {"max_tokens", p.max_tokens}, {"n", p.n}};
}

inline SamplingParams sampling_from_json(const json& j) {
    static const std::array<std::string_view, 6> keys{"temperature", "top_p", "top_k", "min_p", "max_tokens", "n"};
    for (const auto& [k, v] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw Error(Errc::config_error, k, "unknown sampling key");
    SamplingParams p;
    try {
        p.temperature = j.value("temperature", p.temperature);
        p.top_p = j.value("top_p", p.top_p);
        p.top_k = j.value("top_k", p.top_k);
        p.min_p = j.value("min_p", p.min_p);
        p.max_tokens = j.value("max_tokens", p.max_tokens);
        p.n = j.value("n", p.n);
    } catch (const json::exception& e) {
        throw Error(Errc::config_error, "sampling", e.what());
    }
    return p;
}

/// Append-only log of request/response pairs, indexed by request id and body
/// hash so reruns replay finished calls instead of sending them again.
class Transcript {
public:
    Transcript() = default;
    explicit Transcript(std::filesystem::path path) : path_(std::move(path)) {
        if (std::filesystem::exists(path_)) {
            for_each_jsonl(path_, [&](const json& r, std::size_t) {
                if (r.value("status", 0) == 200) index_[key(r.value("request_id", ""), r.value("body_hash", ""))] = r;
            });
        } else if (path_.has_parent_path()) {
            std::filesystem::create_directories(path_.parent_path());
        }
    }

    std::optional<json> lookup(const std::string& request_id, const std::string& body_hash) const {
        std::lock_guard lock(mu_);
        auto it = index_.find(key(request_id, body_hash));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    void record(const json& entry) {
        std::lock_guard lock(mu_);
        if (entry.value("status", 0) == 200)
            index_[key(entry.value("request_id", ""), entry.value("body_hash", ""))] = entry;
        ++recorded_;
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw Error(Errc::file_unwritable, path_.string(), "cannot append to transcript");
        out << entry.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }

    std::size_t cached() const {
        std::lock_guard lock(mu_);
        return index_.size();
    }
    std::size_t recorded() const {
        std::lock_guard lock(mu_);
        return recorded_;
    }
    const std::filesystem::path& path() const { return path_; }

private:
    static std::string key(const std::string& id, const std::string& hash) { return id + '\n' + hash; }

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::map<std::string, json> index_;
    std::size_t recorded_ = 0;
};

struct SampleResult {
    std::string request_id;
    std::vector<std::string> generations;
    int retries = 0;
    bool replayed = false;
    json usage;  // null when the endpoint reports none
};

enum class Verdict { correct, incorrect };

inline std::string_view to_string(Verdict v) noexcept { return v == Verdict::correct ? "correct" : "incorrect"; }

/// First alphabetical token of the response, compared case-insensitively.
inline Verdict parse_verdict(std::string_view response) {
    std::size_t i = 0;
    while (i < response.size() && !text::is_alpha(response[i])) ++i;
    std::size_t j = i;
    while (j < response.size() && text::is_alpha(response[j])) ++j;
    auto word = text::lower_ascii(response.substr(i, j - i));
    if (word == "correct") return Verdict::correct;
    if (word == "incorrect") return Verdict::incorrect;
    throw Error(Errc::unparseable_verdict, std::string(text::trim(response)).substr(0, 80),
                "judge response is neither correct nor incorrect");
}

struct JudgeExample {
    std::string_view question;
    std::vector<std::string> golds;
    std::string_view prediction;
    Verdict label;
};

inline const std::vector<JudgeExample>& judge_examples() {
    static const std::vector<JudgeExample> examples{
        {"Who authored The Taming of the Shrew (published in 2002)?", {"William Shakespeare", "Roma Gill"},
         "W Shakespeare", Verdict::correct},
        {"Who authored The Taming of the Shrew (published in 2002)?", {"William Shakespeare", "Roma Gill"},
         "Roma Gill and W Shakespeare", Verdict::correct},
        {"Who authored The Taming of the Shrew (published in 2002)?", {"William Shakespeare", "Roma Gill"},
         "Roma Shakespeare", Verdict::incorrect},
        {"What country is Maharashtra Metro Rail Corporation Limited located in?", {"India"}, "Maharashtra",
         Verdict::incorrect},
        {"What's the job of Song Kang-ho in Parasite (2019)?", {"actor"},
         "He plays the role of Kim Ki-taek, the patriarch of the Kim family.", Verdict::correct},
        {"Which era did Michael Oakeshott belong to?", {"20th-century philosophy"}, "20th century.",
         Verdict::correct},
        {"Edward Tise (known for Full Metal Jacket (1987)) is in what department?", {"sound department"},
         "2nd Infantry Division, United States Army", Verdict::incorrect},
        {"What wine region is Finger Lakes AVA a part of?", {"New York wine"}, "Finger Lakes AVA",
         Verdict::incorrect},
    };
    return examples;
}

inline constexpr std::string_view kJudgePreamble =
    "You need to check whether the prediction of a question-answering system to a question is correct.\n"
    "You should make the judgment based on a list of ground truth answers provided to you.\n"
    "Your response should be \"correct\" if the prediction is correct or \"incorrect\" if the prediction is wrong.";

/// ["a", "b"] with JSON string escaping.
inline std::string render_ground_truth(std::span<const std::string> golds) {
    std::string out = "[";
    for (std::size_t i = 0; i < golds.size(); ++i) {
        if (i) out += ", ";
        out += json(golds[i]).dump(-1, ' ', false, json::error_handler_t::replace);
    }
    return out + "]";
}

inline std::string render_judge_prompt(std::string_view question, std::span<const std::string> golds,
                                       std::string_view prediction) {
    std::string out(kJudgePreamble);
    auto block = [&](std::string_view q, std::span<const std::string> g, std::string_view p) {
        out += "\n\nQuestion: ";
        out += q;
        out += "\nGround truth: " + render_ground_truth(g);
        out += "\nPrediction: ";
        out += p;
        out += "\nCorrectness:";
    };
    for (const auto& ex : judge_examples()) {
        block(ex.question, ex.golds, ex.prediction);
        out += ' ';
        out += to_string(ex.label);
    }
    block(question, golds, prediction);
    return out;
}

struct JudgeResult {
    Verdict verdict = Verdict::incorrect;
    std::string response;
    int retries = 0;
};

namespace detail {
struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

inline SplitUrl split_url(std::string_view url) {
    auto scheme = url.find("://");
    if (scheme == std::string_view::npos) throw Error(Errc::invalid_argument, std::string(url), "url needs a scheme");
    auto slash = url.find('/', scheme + 3);
    SplitUrl s;
    s.origin = std::string(url.substr(0, slash));
    if (slash != std::string_view::npos) s.prefix = std::string(url.substr(slash));
    while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
    return s;
}

inline bool mentions_context_length(std::string_view body) {
    auto lower = text::lower_ascii(body);
    for (std::string_view needle : {"context length", "context_length", "maximum context", "context window",
                                    "too many tokens", "prompt is too long"})
        if (lower.find(needle) != std::string::npos) return true;
    return false;
}
}  // namespace detail

/// OpenAI-compatible client for chat completions, embeddings and judging.
/// Shareable across threads; in-flight requests never exceed max_parallel.
class InferenceClient {
public:
    explicit InferenceClient(EndpointConfig config, std::shared_ptr<Transcript> transcript = nullptr)
        : config_(std::move(config)),
          url_(detail::split_url(config_.base_url)),
          gate_(config_.max_parallel),
          transcript_(transcript ? std::move(transcript) : std::make_shared<Transcript>()) {
        config_.validate();
        if (!config_.api_key) {
            if (const char* env = std::getenv(config_.api_key_env.c_str()); env && *env) config_.api_key = env;
        }
    }

    const EndpointConfig& config() const { return config_; }
    Transcript& transcript() { return *transcript_; }
    std::size_t requests_sent() const { return sent_; }
    std::size_t retries_total() const { return retries_; }

    json chat_body(std::string_view prompt, const SamplingParams* params) const {
        json body{{"model", config_.model_name},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
        if (params) body.update(to_json(*params));
        return body;
    }

    SampleResult sample_completions(std::string_view prompt, const SamplingParams& params,
                                    const std::string& request_id) {
        params.validate();
        auto call = post_cached("/chat/completions", chat_body(prompt, &params), request_id);
        SampleResult r;
        r.request_id = request_id;
        r.retries = call.retries;
        r.replayed = call.replayed;
        r.generations = parse_choices(call.response, request_id);
        if (r.generations.size() != static_cast<std::size_t>(params.n))
            throw Error(Errc::malformed_response, request_id,
                        "expected " + std::to_string(params.n) + " choices, got " +
                            std::to_string(r.generations.size()));
        if (call.response.contains("usage")) r.usage = call.response["usage"];
        return r;
    }

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) {
        if (texts.empty()) throw Error(Errc::invalid_argument, "texts", "nothing to embed");
        for (std::size_t i = 0; i < texts.size(); ++i)
            if (texts[i].empty()) throw Error(Errc::invalid_argument, std::to_string(i), "empty text");
        std::size_t batch = config_.embed_batch_size;
        std::size_t chunks = (texts.size() + batch - 1) / batch;
        auto parts = parallel_map<std::vector<EmbeddingVector>>(chunks, config_.max_parallel, [&](std::size_t c) {
            auto begin = c * batch;
            auto end = std::min(texts.size(), begin + batch);
            json input = json::array();
            std::string joined;
            for (auto i = begin; i < end; ++i) {
                input.push_back(texts[i]);
                joined += texts[i];
                joined += '\n';
            }
            auto id = "embed:" + content_hash(joined);
            auto call = post_cached("/embeddings", json{{"model", config_.model_name}, {"input", input}}, id);
            return parse_embeddings(call.response, id, begin, end - begin);
        });
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (auto& p : parts)
            for (auto& v : p) out.push_back(std::move(v));
        for (const auto& v : out)
            if (v.values.size() != out.front().values.size())
                throw Error(Errc::dimension_inconsistent, std::to_string(v.source_id),
                            "embedding dimension differs within one call");
        return out;
    }

    JudgeResult judge(std::string_view question, std::span<const std::string> golds, std::string_view prediction,
                      const std::string& request_id) {
        auto call = post_cached("/chat/completions", chat_body(render_judge_prompt(question, golds, prediction), nullptr),
                                request_id);
        auto choices = parse_choices(call.response, request_id);
        if (choices.empty()) throw Error(Errc::malformed_response, request_id, "judge returned no choices");
        JudgeResult r;
        r.response = choices.front();
        r.retries = call.retries;
        r.verdict = parse_verdict(r.response);
        return r;
    }

private:
    struct Call {
        json response;
        int retries = 0;
        bool replayed = false;
    };

    static std::vector<std::string> parse_choices(const json& response, const std::string& id) {
        if (!response.contains("choices") || !response["choices"].is_array())
            throw Error(Errc::malformed_response, id, "response has no choices array");
        std::vector<std::pair<std::size_t, std::string>> indexed;
        std::size_t pos = 0;
        for (const auto& c : response["choices"]) {
            std::size_t index = c.contains("index") && c["index"].is_number_unsigned() ? c["index"].get<std::size_t>() : pos;
            ++pos;
            if (!c.contains("message") || !c["message"].is_object())
                throw Error(Errc::malformed_response, id, "choice without message");
            const auto& content = c["message"].value("content", json(nullptr));
            if (!content.is_null() && !content.is_string())
                throw Error(Errc::malformed_response, id, "message content is not a string");
            indexed.emplace_back(index, content.is_null() ? std::string() : content.get<std::string>());
        }
        std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::string> out;
        for (auto& [i, s] : indexed) out.push_back(std::move(s));
        return out;
    }

    static std::vector<EmbeddingVector> parse_embeddings(const json& response, const std::string& id,
                                                         std::size_t offset, std::size_t expected) {
        if (!response.contains("data") || !response["data"].is_array())
            throw Error(Errc::malformed_response, id, "response has no data array");
        std::vector<EmbeddingVector> out;
        std::size_t pos = 0;
        try {
            for (const auto& d : response["data"]) {
                std::size_t index = d.contains("index") ? d["index"].get<std::size_t>() : pos;
                ++pos;
                out.push_back({d.at("embedding").get<std::vector<double>>(), offset + index});
            }
        } catch (const json::exception& e) {
            throw Error(Errc::malformed_response, id, e.what());
        }
        if (out.size() != expected)
            throw Error(Errc::malformed_response, id,
                        "expected " + std::to_string(expected) + " embeddings, got " + std::to_string(out.size()));
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i].source_id != offset + i) throw Error(Errc::malformed_response, id, "embedding indices are not a permutation");
        return out;
    }

    std::chrono::milliseconds backoff(const std::string& id, int attempt) const {
        auto rng = make_rng(static_cast<std::uint64_t>(attempt), id);
        double base = static_cast<double>(config_.backoff_base.count()) * static_cast<double>(1ull << std::min(attempt, 20));
        double wait = std::min(base, static_cast<double>(config_.backoff_cap.count())) * (0.5 + 0.5 * uniform_unit(rng));
        return std::chrono::milliseconds(static_cast<long long>(wait));
    }

    Call post_cached(const std::string& route, const json& body, const std::string& request_id) {
        auto payload = body.dump(-1, ' ', false, json::error_handler_t::replace);
        auto hash = content_hash(payload);
        if (auto hit = transcript_->lookup(request_id, hash)) return {(*hit)["response"], hit->value("retries", 0), true};

        int attempt = 0;
        for (;;) {
            httplib::Result res;
            {
                GateGuard in_flight(gate_);
                httplib::Client cli(url_.origin);
                auto secs = config_.timeout.count() / 1000;
                auto usecs = (config_.timeout.count() % 1000) * 1000;
                cli.set_connection_timeout(secs, usecs);
                cli.set_read_timeout(secs, usecs);
                cli.set_write_timeout(secs, usecs);
                httplib::Headers headers{{"X-Request-Id", request_id}};
                if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);
                ++sent_;
                res = cli.Post(url_.prefix + route, headers, payload, "application/json");
            }
            auto failure = classify(res, request_id);
            if (!failure) {
                json response;
                try {
                    response = json::parse(res->body);
                } catch (const json::exception& e) {
                    throw Error(Errc::malformed_response, request_id, e.what());
                }
                transcript_->record({{"format_version", kFormatVersion},
                                     {"request_id", request_id},
                                     {"body_hash", hash},
                                     {"route", route},
                                     {"request", body},
                                     {"status", res->status},
                                     {"retries", attempt},
                                     {"response", response}});
                return {std::move(response), attempt, false};
            }
            bool retryable = failure->code() == Errc::rate_limited || failure->code() == Errc::server_error ||
                             failure->code() == Errc::timeout || failure->code() == Errc::transport;
            if (!retryable || attempt >= config_.max_retries) {
                transcript_->record({{"format_version", kFormatVersion},
                                     {"request_id", request_id},
                                     {"body_hash", hash},
                                     {"route", route},
                                     {"status", res ? res->status : 0},
                                     {"retries", attempt},
                                     {"error", to_string(failure->code())}});
                throw *failure;
            }
            std::this_thread::sleep_for(backoff(request_id, attempt));
            ++attempt;
            ++retries_;
        }
    }

    static std::optional<Error> classify(const httplib::Result& res, const std::string& id) {
        if (!res) {
            auto err = res.error();
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                return Error(Errc::timeout, id, httplib::to_string(err));
            return Error(Errc::transport, id, httplib::to_string(err));
        }
        int status = res->status;
        if (status >= 200 && status < 300) return std::nullopt;
        auto snippet = res->body.substr(0, 300);
        if (status == 429) return Error(Errc::rate_limited, id, snippet);
        if (status == 408) return Error(Errc::timeout, id, snippet);
        if (status >= 500) return Error(Errc::server_error, id, "HTTP " + std::to_string(status) + ": " + snippet);
        if ((status == 400 || status == 413 || status == 422) && detail::mentions_context_length(res->body))
            return Error(Errc::context_overflow, id, snippet);
        return Error(Errc::request_rejected, id, "HTTP " + std::to_string(status) + ": " + snippet);
    }

    EndpointConfig config_;
    detail::SplitUrl url_;
    Gate gate_;
    std::shared_ptr<Transcript> transcript_;
    std::atomic<std::size_t> sent_{0};
    std::atomic<std::size_t> retries_{0};
};

}  // namespace proxycot
