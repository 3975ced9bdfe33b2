#pragma once

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "proxycot/error.hpp"
#include "proxycot/inference.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/scoring.hpp"

namespace proxycot {

/// Canned responses: the first rule whose substrings all occur in the prompt
/// answers it; choice i of a request gets responses[i % size].
struct MockRule {
    std::vector<std::string> match_all;
    std::vector<std::string> responses;
};

enum class JudgePolicy { exact_match, few_shot_labels, always_correct, always_incorrect };

struct MockScript {
    std::vector<MockRule> rules;
    std::string default_response = "I cannot tell.\n\nFinal Answer: unknown";
    JudgePolicy judge_policy = JudgePolicy::exact_match;
    std::map<std::string, std::string> judge_overrides;  // prediction -> raw judge reply
    std::optional<std::size_t> context_limit_chars;
    std::size_t fail_first_n_with_429 = 0;
    std::chrono::milliseconds latency{0};
    std::size_t embedding_dim = 64;
    std::string model_name = "mock-model";
};

inline JudgePolicy parse_judge_policy(std::string_view s) {
    if (s == "exact_match") return JudgePolicy::exact_match;
    if (s == "few_shot_labels") return JudgePolicy::few_shot_labels;
    if (s == "always_correct") return JudgePolicy::always_correct;
    if (s == "always_incorrect") return JudgePolicy::always_incorrect;
    throw Error(Errc::config_error, std::string(s), "unknown judge policy");
}

inline MockScript mock_script_from_json(const json& j) {
    MockScript s;
    try {
        for (const auto& r : j.value("rules", json::array()))
            s.rules.push_back({r.value("match_all", std::vector<std::string>{}),
                               r.at("responses").get<std::vector<std::string>>()});
        s.default_response = j.value("default_response", s.default_response);
        s.judge_policy = parse_judge_policy(j.value("judge_policy", std::string("exact_match")));
        s.judge_overrides = j.value("judge_overrides", s.judge_overrides);
        if (j.contains("context_limit_chars") && !j["context_limit_chars"].is_null())
            s.context_limit_chars = j["context_limit_chars"].get<std::size_t>();
        s.fail_first_n_with_429 = j.value("fail_first_n_with_429", std::size_t{0});
        s.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
        s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
        s.model_name = j.value("model_name", s.model_name);
    } catch (const json::exception& e) {
        throw Error(Errc::config_error, "mock script", e.what());
    }
    for (const auto& r : s.rules)
        if (r.responses.empty()) throw Error(Errc::config_error, "mock script", "rule without responses");
    if (s.embedding_dim < 2) throw Error(Errc::config_error, "embedding_dim", "must be at least 2");
    return s;
}

/// Hashed bag of words plus a constant bias component, so no vector is zero.
inline std::vector<double> mock_embedding(std::string_view text, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    v[0] = 1.0;
    for (const auto& tok : answer_tokens(text)) v[1 + text::fnv1a(tok) % (dim - 1)] += 1.0;
    return v;
}

namespace detail {
struct JudgeCase {
    std::string question;
    std::vector<std::string> golds;
    std::string prediction;
    std::string label;
};

inline std::vector<JudgeCase> parse_judge_blocks(const std::string& prompt) {
    std::vector<JudgeCase> out;
    std::size_t pos = 0;
    while ((pos = prompt.find("Question: ", pos)) != std::string::npos) {
        auto end = prompt.find("\n\n", pos);
        auto block = prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = end == std::string::npos ? prompt.size() : end;
        JudgeCase c;
        std::size_t line_start = 0;
        while (line_start <= block.size()) {
            auto nl = block.find('\n', line_start);
            auto line = block.substr(line_start, nl == std::string::npos ? std::string::npos : nl - line_start);
            auto take = [&](std::string_view prefix, std::string& dst) {
                if (line.rfind(prefix, 0) == 0) dst = line.substr(prefix.size());
            };
            take("Question: ", c.question);
            take("Prediction: ", c.prediction);
            if (line.rfind("Correctness:", 0) == 0) c.label = std::string(text::trim(line.substr(12)));
            if (line.rfind("Ground truth: ", 0) == 0) {
                auto parsed = json::parse(line.substr(14), nullptr, false);
                if (parsed.is_array())
                    for (const auto& g : parsed)
                        if (g.is_string()) c.golds.push_back(g.get<std::string>());
            }
            if (nl == std::string::npos) break;
            line_start = nl + 1;
        }
        out.push_back(std::move(c));
    }
    return out;
}
}  // namespace detail

/// In-process OpenAI-compatible server on 127.0.0.1 with scripted replies and
/// request instrumentation (recorded bodies, peak concurrency).
class MockEndpoint {
public:
    explicit MockEndpoint(MockScript script, int port = 0, std::string host = "127.0.0.1")
        : script_(std::move(script)), host_(std::move(host)), remaining_429_(script_.fail_first_n_with_429) {
        server_.new_task_queue = [] { return new httplib::ThreadPool(32); };
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) { handle(req, res, true); });
        server_.Post("/v1/embeddings",
                     [this](const httplib::Request& req, httplib::Response& res) { handle(req, res, false); });
        port_ = port == 0 ? server_.bind_to_any_port(host_) : (server_.bind_to_port(host_, port) ? port : -1);
        if (port_ <= 0) throw Error(Errc::transport, host_, "mock endpoint cannot bind");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockEndpoint() { stop(); }
    MockEndpoint(const MockEndpoint&) = delete;
    MockEndpoint& operator=(const MockEndpoint&) = delete;

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    void wait() {
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_) + "/v1"; }

    std::vector<json> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::size_t request_count() const {
        std::lock_guard lock(mu_);
        return requests_.size();
    }
    std::size_t max_in_flight() const { return max_in_flight_; }

    EndpointConfig endpoint_config() const {
        EndpointConfig c;
        c.base_url = base_url();
        c.model_name = script_.model_name;
        c.backoff_base = std::chrono::milliseconds(1);
        c.timeout = std::chrono::milliseconds(10000);
        return c;
    }

private:
    void handle(const httplib::Request& req, httplib::Response& res, bool chat) {
        auto now = ++in_flight_;
        for (auto seen = max_in_flight_.load(); now > seen && !max_in_flight_.compare_exchange_weak(seen, now);) {
        }
        struct Leave {
            std::atomic<std::size_t>& n;
            ~Leave() { --n; }
        } leave{in_flight_};

        auto body = json::parse(req.body, nullptr, false);
        {
            std::lock_guard lock(mu_);
            requests_.push_back(body);
        }
        if (script_.latency.count() > 0) std::this_thread::sleep_for(script_.latency);

        for (auto left = remaining_429_.load(); left > 0;) {
            if (remaining_429_.compare_exchange_weak(left, left - 1)) {
                reply(res, 429, {{"error", {{"message", "rate limit exceeded"}, {"type", "rate_limit"}}}});
                return;
            }
        }
        if (body.is_discarded() || !body.is_object()) {
            reply(res, 400, {{"error", {{"message", "request body is not a JSON object"}}}});
            return;
        }
        if (chat)
            chat_reply(body, res);
        else
            embedding_reply(body, res);
    }

    static void reply(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
    }

    std::string judge_reply(const std::string& prompt) const {
        auto blocks = detail::parse_judge_blocks(prompt);
        if (blocks.empty()) return "incorrect";
        const auto& target = blocks.back();
        if (auto it = script_.judge_overrides.find(target.prediction); it != script_.judge_overrides.end())
            return it->second;
        switch (script_.judge_policy) {
        case JudgePolicy::always_correct: return "correct";
        case JudgePolicy::always_incorrect: return "incorrect";
        case JudgePolicy::few_shot_labels:
            for (std::size_t i = 0; i + 1 < blocks.size(); ++i)
                if (blocks[i].question == target.question && blocks[i].prediction == target.prediction)
                    return blocks[i].label;
            [[fallthrough]];
        case JudgePolicy::exact_match: break;
        }
        if (target.golds.empty()) return "incorrect";
        return exact_match(target.golds, target.prediction) ? "correct" : "incorrect";
    }

    void chat_reply(const json& body, httplib::Response& res) const {
        std::string prompt;
        for (const auto& m : body.value("messages", json::array()))
            if (m.contains("content") && m["content"].is_string()) prompt += m["content"].get<std::string>();
        if (script_.context_limit_chars && prompt.size() > *script_.context_limit_chars) {
            reply(res, 400,
                  {{"error",
                    {{"message", "This model's maximum context length is " + std::to_string(*script_.context_limit_chars) +
                                     " characters, but the prompt has " + std::to_string(prompt.size())},
                     {"type", "invalid_request_error"}}}});
            return;
        }
        std::size_t n = body.value("n", 1);
        std::vector<std::string> texts;
        if (prompt.rfind(kJudgePreamble, 0) == 0) {
            texts.assign(n, judge_reply(prompt));
        } else {
            const std::vector<std::string>* responses = nullptr;
            for (const auto& r : script_.rules) {
                bool all = std::all_of(r.match_all.begin(), r.match_all.end(),
                                       [&](const std::string& s) { return prompt.find(s) != std::string::npos; });
                if (all) {
                    responses = &r.responses;
                    break;
                }
            }
            for (std::size_t i = 0; i < n; ++i)
                texts.push_back(responses ? (*responses)[i % responses->size()] : script_.default_response);
        }
        json choices = json::array();
        std::size_t completion_tokens = 0;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            completion_tokens += text::split_whitespace(texts[i]).size();
            choices.push_back({{"index", i},
                               {"message", {{"role", "assistant"}, {"content", texts[i]}}},
                               {"finish_reason", "stop"}});
        }
        auto prompt_tokens = text::split_whitespace(prompt).size();
        reply(res, 200,
              {{"id", "mock-" + content_hash(body.dump())},
               {"object", "chat.completion"},
               {"model", body.value("model", script_.model_name)},
               {"choices", choices},
               {"usage",
                {{"prompt_tokens", prompt_tokens},
                 {"completion_tokens", completion_tokens},
                 {"total_tokens", prompt_tokens + completion_tokens}}}});
    }

    void embedding_reply(const json& body, httplib::Response& res) const {
        std::vector<std::string> inputs;
        const auto& input = body.value("input", json(nullptr));
        if (input.is_string())
            inputs.push_back(input.get<std::string>());
        else if (input.is_array())
            for (const auto& s : input)
                if (s.is_string()) inputs.push_back(s.get<std::string>());
        if (inputs.empty()) {
            reply(res, 400, {{"error", {{"message", "input must be a string or a list of strings"}}}});
            return;
        }
        json data = json::array();
        for (std::size_t i = 0; i < inputs.size(); ++i)
            data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", mock_embedding(inputs[i], script_.embedding_dim)}});
        reply(res, 200, {{"object", "list"}, {"data", data}, {"model", body.value("model", script_.model_name)}});
    }

    MockScript script_;
    std::string host_;
    int port_ = -1;
    httplib::Server server_;
    std::thread thread_;
    mutable std::mutex mu_;
    std::vector<json> requests_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
    std::atomic<std::size_t> remaining_429_;
};

}  // namespace proxycot
