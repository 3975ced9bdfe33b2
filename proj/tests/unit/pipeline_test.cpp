#include <gtest/gtest.h>

#include <set>

#include "proxycot/mock_endpoint.hpp"
#include "proxycot/pipeline.hpp"
#include "test_support.hpp"

using namespace proxycot;
using proxycot::testing::slurp;
using proxycot::testing::TempDir;

namespace {

QaInstance instance(const std::string& id, std::vector<std::string> answers) {
    QaInstance q;
    q.id = id;
    q.question = "Question " + id + ": which one?";
    q.answers = std::move(answers);
    return q;
}

ProxyContext proxy_for(const std::string& id, std::string text) {
    ProxyContext p;
    p.instance_id = id;
    p.text = std::move(text);
    p.token_count = TokenCounter::whitespace().count(p.text);
    return p;
}

ContextBundle bundle_for(const std::string& id, std::string text) {
    ContextBundle b;
    b.instance_id = id;
    b.doc_ids = {"d-" + id};
    b.text = std::move(text);
    b.token_count = TokenCounter::whitespace().count(b.text);
    return b;
}

std::string answer(const std::string& a) { return "Reasoning about it.\n\nFinal Answer: " + a; }

ReasoningTrace trace(const std::string& id, const std::string& text, int choice) {
    ReasoningTrace t;
    t.instance_id = id;
    t.text = text;
    t.extracted_answer = "gold";
    t.em = 1;
    t.reward = 2.0;
    t.choice = choice;
    return t;
}

}  // namespace

TEST(RenderPrompt, SimpleSubstitution) {
    PromptTemplate tpl{"Q: {question}\nC: {context}"};
    EXPECT_EQ(render_prompt(tpl, "a", "b"), "Q: a\nC: b");
}

TEST(RenderPrompt, PlaceholderRules) {
    try {
        render_prompt(PromptTemplate{"Q: {question}"}, "a", "b");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::missing_placeholder);
        EXPECT_EQ(e.subject(), "{context}");
    }
    EXPECT_THROW(render_prompt(PromptTemplate{"{question}{question}{context}"}, "a", "b"), Error);
}

TEST(RenderPrompt, BracesInValuesStayLiteral) {
    PromptTemplate tpl{"Q: {question}\nC: {context}\n{answer_instruction}"};
    auto out = render_prompt(tpl, "{context}", "{question} {answer_instruction}");
    EXPECT_EQ(out, "Q: {context}\nC: {question} {answer_instruction}\n" + std::string(kDefaultAnswerInstruction));
}

TEST(RenderPrompt, DefaultTemplateCarriesMarkerInstruction) {
    PromptTemplate tpl;
    auto out = render_prompt(tpl, "q", "c");
    EXPECT_NE(out.find("Final Answer:"), std::string::npos);
    EXPECT_NO_THROW(require_answer_instruction(tpl));
    EXPECT_THROW(require_answer_instruction(PromptTemplate{"Q: {question}\nC: {context}"}), Error);
    EXPECT_NE(tpl.hash(), PromptTemplate{"Q: {question} {context}"}.hash());
}

class Acquire : public ::testing::Test {
protected:
    MockScript script() {
        MockScript s;
        s.rules.push_back({{"Question one:"}, {answer("Blue Whale"), answer("shark"), answer("orca")}});
        s.rules.push_back({{"Question two:"}, {answer("x"), answer("y"), answer("z")}});
        s.rules.push_back({{"Question three:"}, {"no marker here", answer("the blue whale"), "still none"}});
        return s;
    }
    std::vector<QaInstance> instances{instance("one", {"blue whale"}), instance("two", {"gold"}),
                                      instance("three", {"Blue Whale"})};
    std::vector<ProxyContext> proxies{proxy_for("one", "p one"), proxy_for("two", "p two"), proxy_for("three", "p three")};
};

TEST_F(Acquire, RetentionRejectsAndExtractionFailures) {
    MockEndpoint mock(script());
    InferenceClient client(mock.endpoint_config());
    auto r = acquire_traces(instances, proxies, client, AcquireConfig{});
    ASSERT_EQ(r.traces.size(), 2u);
    EXPECT_EQ(r.traces[0].instance_id, "one");
    EXPECT_EQ(r.traces[0].choice, 0);
    EXPECT_EQ(r.traces[0].extracted_answer, "Blue Whale");
    EXPECT_DOUBLE_EQ(r.traces[0].reward, 2.0);
    EXPECT_EQ(r.traces[1].instance_id, "three");
    EXPECT_EQ(r.traces[1].choice, 1);
    ASSERT_EQ(r.rejects.size(), 1u);
    EXPECT_EQ(r.rejects[0].instance_id, "two");
    EXPECT_EQ(r.rejects[0].reason, "no_retained_trace");
    EXPECT_EQ(r.extraction_failures, 2u);
    EXPECT_EQ(r.generations, 9u);
    EXPECT_EQ(r.retained_per_instance[1], (std::pair<std::string, std::size_t>{"two", 0}));
    for (const auto& t : r.traces) {
        const auto& q = t.instance_id == "one" ? instances[0] : instances[2];
        EXPECT_EQ(exact_match(q.answers, t.extracted_answer), 1);
        EXPECT_EQ(t.cot_token_count, TokenCounter::whitespace().count(t.text));
        EXPECT_EQ(t.request_id, sample_request_id(t.instance_id, 0));
    }
}

TEST_F(Acquire, RewardThresholdKeepsPartialMatches) {
    MockEndpoint mock(script());
    InferenceClient client(mock.endpoint_config());
    AcquireConfig cfg;
    cfg.retention = {RetentionRule::Mode::reward_threshold, 0.5};
    auto r = acquire_traces(instances, proxies, client, cfg);
    std::multiset<std::string> ids;
    for (const auto& t : r.traces) ids.insert(t.instance_id);
    EXPECT_EQ(ids.count("one"), 1u);
    EXPECT_EQ(ids.count("three"), 1u);
    EXPECT_EQ(ids.count("two"), 0u);
}

TEST_F(Acquire, ContextOverflowSkipsInstance) {
    auto s = script();
    s.context_limit_chars = 400;
    MockEndpoint mock(s);
    InferenceClient client(mock.endpoint_config());
    auto big = proxies;
    big[1].text = std::string(1000, 'x');
    auto r = acquire_traces(instances, big, client, AcquireConfig{});
    EXPECT_EQ(r.skipped, 1u);
    ASSERT_EQ(r.rejects.size(), 1u);
    EXPECT_EQ(r.rejects[0].reason, "context_overflow");
    EXPECT_EQ(r.traces.size(), 2u);
}

TEST_F(Acquire, MissingProxyAndTemplateChecks) {
    MockEndpoint mock(script());
    InferenceClient client(mock.endpoint_config());
    std::vector<ProxyContext> partial{proxies[0]};
    EXPECT_THROW(acquire_traces(instances, partial, client, AcquireConfig{}), Error);
    AcquireConfig bad;
    bad.prompt = PromptTemplate{"{question} {context}"};
    EXPECT_THROW(acquire_traces(instances, proxies, client, bad), Error);
    EXPECT_EQ(mock.request_count(), 0u);
}

TEST_F(Acquire, ResumeReplaysWithoutDuplicateCalls) {
    TempDir tmp;
    MockEndpoint mock(script());
    {
        InferenceClient client(mock.endpoint_config(), std::make_shared<Transcript>(tmp / "t.jsonl"));
        std::span<const QaInstance> head(instances.data(), 2);
        acquire_traces(head, proxies, client, AcquireConfig{});
    }
    EXPECT_EQ(mock.request_count(), 2u);
    InferenceClient client(mock.endpoint_config(), std::make_shared<Transcript>(tmp / "t.jsonl"));
    auto r = acquire_traces(instances, proxies, client, AcquireConfig{});
    EXPECT_EQ(mock.request_count(), 3u);
    EXPECT_EQ(r.replayed, 2u);

    InferenceClient fresh(mock.endpoint_config());
    auto direct = acquire_traces(instances, proxies, fresh, AcquireConfig{});
    ASSERT_EQ(direct.traces.size(), r.traces.size());
    for (std::size_t i = 0; i < r.traces.size(); ++i) EXPECT_EQ(to_json(direct.traces[i]), to_json(r.traces[i]));
}

TEST_F(Acquire, TraceFileRoundTripRescored) {
    TempDir tmp;
    MockEndpoint mock(script());
    InferenceClient client(mock.endpoint_config());
    auto r = acquire_traces(instances, proxies, client, AcquireConfig{});
    save_traces(tmp / "traces.jsonl", r.traces);
    auto back = load_traces(tmp / "traces.jsonl", instances);
    ASSERT_EQ(back.size(), r.traces.size());
    EXPECT_EQ(to_json(back[0]), to_json(r.traces[0]));

    auto tampered = r.traces;
    tampered[0].extracted_answer = "shark";
    save_traces(tmp / "bad.jsonl", tampered);
    EXPECT_THROW(load_traces(tmp / "bad.jsonl", instances), Error);
}

TEST(AssembleSft, SingleTraceTakesBundleText) {
    std::vector<QaInstance> qs{instance("a", {"gold"})};
    std::vector<ContextBundle> bundles{bundle_for("a", "full long context with many many words")};
    std::vector<ReasoningTrace> traces{trace("a", answer("gold"), 0)};
    auto out = assemble_sft(traces, qs, bundles, SftSelection::all, 1);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].context_text, bundles[0].text);
    EXPECT_EQ(TokenCounter::whitespace().count(out[0].context_text), bundles[0].token_count);
    EXPECT_EQ(out[0].question, qs[0].question);
    EXPECT_EQ(out[0].trace_text, traces[0].text);
}

TEST(AssembleSft, SelectionModes) {
    std::vector<QaInstance> qs{instance("a", {"gold"}), instance("b", {"gold"})};
    std::vector<ContextBundle> bundles{bundle_for("a", "context of a"), bundle_for("b", "context of b")};
    std::vector<ReasoningTrace> traces{trace("a", "t0", 0), trace("a", "t1", 1), trace("a", "t2", 2),
                                       trace("b", "u0", 0)};
    auto all = assemble_sft(traces, qs, bundles, SftSelection::all, 5);
    ASSERT_EQ(all.size(), 4u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(all[i].context_text, "context of a");

    auto one = assemble_sft(traces, qs, bundles, SftSelection::one_per_instance, 5);
    ASSERT_EQ(one.size(), 2u);
    EXPECT_EQ(one[1].trace_text, "u0");
    auto again = assemble_sft(traces, qs, bundles, SftSelection::one_per_instance, 5);
    EXPECT_EQ(again[0].trace_text, one[0].trace_text);

    std::set<std::string> picked;
    for (std::uint64_t seed = 0; seed < 40; ++seed)
        picked.insert(assemble_sft(traces, qs, bundles, SftSelection::one_per_instance, seed)[0].trace_text);
    EXPECT_EQ(picked, (std::set<std::string>{"t0", "t1", "t2"}));
}

TEST(AssembleSft, MissingBundle) {
    std::vector<QaInstance> qs{instance("a", {"gold"})};
    std::vector<ContextBundle> none;
    std::vector<ReasoningTrace> traces{trace("a", "t", 0)};
    try {
        assemble_sft(traces, qs, none, SftSelection::all, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::missing_bundle);
        EXPECT_EQ(e.subject(), "a");
    }
}

TEST(AssembleSft, ExportMessagesUseFullContext) {
    TempDir tmp;
    std::vector<QaInstance> qs{instance("a", {"gold"})};
    std::vector<ContextBundle> bundles{bundle_for("a", "THE FULL CONTEXT")};
    std::vector<ReasoningTrace> traces{trace("a", answer("gold"), 0)};
    auto records = assemble_sft(traces, qs, bundles, SftSelection::all, 0);
    PromptTemplate tpl;
    save_sft(tmp / "sft.jsonl", records, tpl, "You are helpful.");
    auto j = json::parse(slurp(tmp / "sft.jsonl"));
    ASSERT_EQ(j["messages"].size(), 3u);
    EXPECT_EQ(j["messages"][0]["role"], "system");
    EXPECT_EQ(j["messages"][1]["content"], render_prompt(tpl, qs[0].question, "THE FULL CONTEXT"));
    EXPECT_EQ(j["messages"][2]["content"], traces[0].text);
    auto back = load_sft(tmp / "sft.jsonl");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].context_text, "THE FULL CONTEXT");
}

TEST(DatasetStats, Means) {
    std::vector<QaInstance> qs{instance("a", {"one two"}), instance("b", {"three"})};
    std::string hundred, three_hundred;
    for (int i = 0; i < 100; ++i) hundred += "w ";
    for (int i = 0; i < 300; ++i) three_hundred += "w ";
    std::vector<ContextBundle> bundles{bundle_for("a", hundred), bundle_for("b", three_hundred)};
    std::vector<ProxyContext> proxies{proxy_for("a", "w w"), proxy_for("b", "w w w w")};
    auto s = dataset_stats(qs, bundles, proxies, TokenCounter::whitespace());
    ASSERT_TRUE(s.full_context_mean);
    EXPECT_DOUBLE_EQ(*s.full_context_mean, 200.0);
    EXPECT_DOUBLE_EQ(*s.proxy_mean, 3.0);
    EXPECT_DOUBLE_EQ(*s.question_mean, 4.0);
    EXPECT_DOUBLE_EQ(*s.answer_mean, 1.5);
    EXPECT_DOUBLE_EQ(*s.proxy_full_ratio, 3.0 / 200.0);
}

TEST(DatasetStats, EmptyDatasetReportsAbsentMeans) {
    auto s = dataset_stats({}, {}, {}, TokenCounter::whitespace());
    EXPECT_EQ(s.n_instances, 0u);
    EXPECT_FALSE(s.full_context_mean);
    EXPECT_FALSE(s.proxy_mean);
    EXPECT_FALSE(s.question_mean);
    EXPECT_FALSE(s.answer_mean);
    auto j = to_json(s);
    EXPECT_TRUE(j["full_context_tokens_mean"].is_null());
    EXPECT_TRUE(j["proxy_full_ratio"].is_null());
}
