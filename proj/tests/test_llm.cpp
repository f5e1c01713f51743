#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "care/common.hpp"
#include "care/llm.hpp"
#include "care/stage_parse.hpp"

using namespace care;
using llm::BackendRole;
using llm::BackendSpec;
using llm::CallContext;
using llm::MockBackend;

namespace {

BackendSpec mock_spec(BackendRole role) {
    BackendSpec spec;
    spec.kind = llm::BackendKind::Mock;
    spec.role = role;
    spec.display = "mock:<inline>";
    return spec;
}

} // namespace

TEST_CASE("backend spec parsing") {
    const auto mock = BackendSpec::parse("mock:scripts/local.json", BackendRole::Local);
    CHECK(mock.kind == llm::BackendKind::Mock);
    CHECK(mock.script_path == "scripts/local.json");

    const auto http = BackendSpec::parse("http://localhost:8080#my-model",
                                         BackendRole::Remote);
    CHECK(http.kind == llm::BackendKind::Http);
    CHECK(http.endpoint == "http://localhost:8080");
    CHECK(http.model == "my-model");
    CHECK(http.role == BackendRole::Remote);

    CHECK_THROWS_AS(BackendSpec::parse("ftp://nope", BackendRole::Local), ValidationError);
    CHECK_THROWS_AS(BackendSpec::parse("http://localhost:1234", BackendRole::Local),
                    ValidationError); // missing #model
}

TEST_CASE("whitespace token counting") {
    CHECK(llm::count_tokens("") == 0);
    CHECK(llm::count_tokens("one") == 1);
    CHECK(llm::count_tokens("  a b\n c\t d  ") == 4);
}

TEST_CASE("per-sample usage totals add up across calls") {
    llm::Usage total;
    total += llm::Usage{100, 20, false};
    total += llm::Usage{200, 40, false};
    total += llm::Usage{150, 30, false};
    CHECK(total.total() == 540);
    CHECK_FALSE(total.estimated);
    total += llm::Usage{1, 1, true};
    CHECK(total.estimated);
}

TEST_CASE("stage output parsing: representative acquisition block") {
    const std::string text = R"({
      "need_data": true,
      "facts_keys": [
        "map_median_last1h",
        "lactate_latest_6h",
        "urine_output_mlkghr_6h",
        "norepi_eq_dose_max_1h"
      ],
      "reasoning": "Cross-domain evidence is needed before final decision-making."
    })";
    const auto parsed = llm::parse_acquisition(text);
    REQUIRE(parsed.ok());
    CHECK(parsed.value->need_data);
    REQUIRE(parsed.value->facts_keys.size() == 4);
    CHECK(parsed.value->facts_keys[1] == "lactate_latest_6h");
}

TEST_CASE("stage output parsing: enum and shape errors") {
    CHECK_FALSE(llm::parse_decision(R"({"final_action":"TREAT_X"})").ok());
    CHECK(llm::parse_decision(R"({"final_action":"TREAT_X"})").error.find("enum") !=
          std::string::npos);
    CHECK_FALSE(llm::parse_decision("no json at all").ok());
    CHECK_FALSE(llm::parse_acquisition(R"({"need_data": true})").ok());
    CHECK_FALSE(llm::parse_acquisition(R"({"need_data": true, "facts_keys": []})").ok());

    // need_data=false ignores stray keys.
    const auto quiet =
        llm::parse_acquisition(R"({"need_data": false, "facts_keys": ["x"]})");
    REQUIRE(quiet.ok());
    CHECK(quiet.value->facts_keys.empty());

    // Sufficiency consistency.
    CHECK(llm::parse_sufficiency(
              R"({"is_sufficient": true, "remaining_requested_keys": []})")
              .ok());
    CHECK_FALSE(llm::parse_sufficiency(
                    R"({"is_sufficient": true, "remaining_requested_keys": ["k"]})")
                    .ok());

    // Baseline turns: confidence range and requirement.
    CHECK_FALSE(llm::parse_baseline_turn(
                    R"({"final_action":"OBSERVE","confidence":101})", false)
                    .ok());
    CHECK_FALSE(llm::parse_baseline_turn(R"({"final_action":"OBSERVE"})", true).ok());
    const auto turn = llm::parse_baseline_turn(
        R"({"final_action":"INVESTIGATE_O","confidence":88,"reasoning":"r"})", true);
    REQUIRE(turn.ok());
    CHECK(*turn.value->confidence == 88);
}

TEST_CASE("fuzz: JSON recovered from 200 wrapped variants, and never throws") {
    const nlohmann::json planted = {
        {"final_action", "TREAT_S"},
        {"differential_diagnosis", "braces { } and \"quotes\" inside"},
    };
    const std::string body = planted.dump();
    Rng rng(606);
    const std::vector<std::string> prefixes = {
        "", "Sure, here you go:\n", "```json\n", "Notes { incomplete\nThen: ",
        "The answer is {not this one... just kidding. Real answer:\n"};
    const std::vector<std::string> suffixes = {"", "\n```", "\nHope this helps {",
                                               " trailing } brace", "\n\nDone."};
    for (int i = 0; i < 200; ++i) {
        std::string text = prefixes[rng.below(prefixes.size())] + body +
                           suffixes[rng.below(suffixes.size())];
        if (rng.bernoulli(0.3)) text = "> " + text;
        const auto extracted = llm::extract_first_json_object(text);
        REQUIRE(extracted.has_value());
        // The reference extractor is the planted object itself.
        CHECK(*extracted == planted);
        const auto parsed = llm::parse_decision(text);
        REQUIRE(parsed.ok());
        CHECK(parsed.value->final_action == llm::Action::TreatS);
    }
    // Arbitrary garbage must not throw.
    for (int i = 0; i < 200; ++i) {
        std::string garbage;
        const int len = static_cast<int>(rng.uniform_int(0, 60));
        for (int k = 0; k < len; ++k) {
            garbage.push_back(static_cast<char>(rng.uniform_int(32, 126)));
        }
        CHECK_NOTHROW(llm::extract_first_json_object(garbage));
        CHECK_NOTHROW(llm::parse_decision(garbage));
    }
}

TEST_CASE("scripted mock consumes keyed entries FIFO and falls back to default") {
    const nlohmann::json script = {
        {"mode", "script"},
        {"responses",
         nlohmann::json::array(
             {{{"sample_id", "s1"}, {"stage", "decision"}, {"text", "first"}},
              {{"sample_id", "s1"}, {"stage", "decision"}, {"text", "second"}}})},
        {"default", "fallback"},
    };
    MockBackend backend(mock_spec(BackendRole::Local), script);
    CallContext ctx{"s1", "decision", 0, "", 0};
    CHECK(backend.complete("p", ctx).text == "first");
    CHECK(backend.complete("p", ctx).text == "second");
    CHECK(backend.complete("p", ctx).text == "fallback");
    CallContext other{"s2", "acquisition", 0, "", 0};
    CHECK(backend.complete("p", other).text == "fallback");
}

TEST_CASE("scripted __FAIL__ raises BackendError and usage counts whitespace tokens") {
    const nlohmann::json script = {{"mode", "script"}, {"default", "__FAIL__"}};
    MockBackend failing(mock_spec(BackendRole::Local), script);
    CallContext ctx{"s1", "decision", 0, "", 0};
    CHECK_THROWS_AS(failing.complete("p", ctx), BackendError);

    const nlohmann::json ok_script = {{"mode", "script"}, {"default", "a b c"}};
    MockBackend ok(mock_spec(BackendRole::Local), ok_script);
    const auto completion = ok.complete("one two three four", ctx);
    CHECK(completion.usage.prompt_tokens == 4);
    CHECK(completion.usage.completion_tokens == 3);
    CHECK_FALSE(completion.usage.estimated);
}

TEST_CASE("seeded mock is deterministic per key, across instances and threads") {
    const nlohmann::json script = {{"mode", "seeded"}, {"seed", 42}};
    MockBackend a(mock_spec(BackendRole::Local), script);
    MockBackend b(mock_spec(BackendRole::Local), script);
    std::vector<std::string> first, second;
    for (int i = 0; i < 30; ++i) {
        CallContext ctx{"s" + std::to_string(i), "decision", 0, "", 0};
        first.push_back(a.complete("p", ctx).text);
    }
    // Different call order must not change anything.
    for (int i = 29; i >= 0; --i) {
        CallContext ctx{"s" + std::to_string(i), "decision", 0, "", 0};
        second.insert(second.begin(), b.complete("p", ctx).text);
    }
    CHECK(first == second);

    const nlohmann::json other_seed = {{"mode", "seeded"}, {"seed", 43}};
    MockBackend c(mock_spec(BackendRole::Local), other_seed);
    bool any_difference = false;
    for (int i = 0; i < 30; ++i) {
        CallContext ctx{"s" + std::to_string(i), "decision", 0, "", 0};
        if (c.complete("p", ctx).text != first[static_cast<std::size_t>(i)]) {
            any_difference = true;
        }
    }
    CHECK(any_difference);

    // All seeded stage outputs parse as their schema.
    const nlohmann::json full = {{"mode", "seeded"}, {"seed", 7}};
    MockBackend d(mock_spec(BackendRole::Local), full);
    for (int i = 0; i < 50; ++i) {
        const std::string id = "s" + std::to_string(i);
        CHECK(llm::parse_acquisition(
                  d.complete("p", CallContext{id, "acquisition", 0, "", 0}).text)
                  .ok());
        CHECK(llm::parse_advisory(
                  d.complete("p", CallContext{id, "advisory", 0, "", 0}).text)
                  .ok());
        CHECK(llm::parse_decision(
                  d.complete("p", CallContext{id, "decision", 0, "", 0}).text)
                  .ok());
        CHECK(llm::parse_baseline_turn(
                  d.complete("p", CallContext{id, "confmad", 1, "B", 0}).text, true)
                  .ok());
    }

    // Constant-action scripts really are constant.
    const nlohmann::json constant = {
        {"mode", "seeded"}, {"seed", 7}, {"constant_action", "OBSERVE"}};
    MockBackend e(mock_spec(BackendRole::Local), constant);
    for (int i = 0; i < 20; ++i) {
        const auto parsed = llm::parse_decision(
            e.complete("p", CallContext{"s" + std::to_string(i), "decision", 0, "", 0})
                .text);
        REQUIRE(parsed.ok());
        CHECK(parsed.value->final_action == llm::Action::Observe);
    }
}

TEST_CASE("remote-role backends refuse raw completion outside the payload path") {
    const nlohmann::json script = {{"mode", "script"}, {"default", "hello"}};
    MockBackend remote(mock_spec(BackendRole::Remote), script);
    CallContext ctx{"s1", "advisory", 0, "", 0};
    CHECK_THROWS_AS(remote.complete("raw prompt", ctx), PrivacyViolationError);
    {
        llm::RemoteCallScope scope;
        CHECK(remote.complete("raw prompt", ctx).text == "hello");
    }
    CHECK_THROWS_AS(remote.complete("raw prompt", ctx), PrivacyViolationError);

    MockBackend local(mock_spec(BackendRole::Local), script);
    CHECK(local.complete("raw prompt", ctx).text == "hello");
}

TEST_CASE("advise_remote scans, audits, and completes through the gate") {
    const rubric::RubricSchema schema = rubric::RubricSchema::default_schema();
    const nlohmann::json script = {
        {"mode", "script"},
        {"default", R"({"transition_candidates":["LIKELY_STABLE"],)"
                    R"("transition_guidance":"g","transition_reasoning":"r"})"}};
    MockBackend remote(mock_spec(BackendRole::Remote), script);

    Sample sample;
    sample.stay_id = "s9";
    sample.t_eval = 30;
    for (const FeatureKey key : all_feature_keys()) {
        sample.features[key] = TaggedValue{std::monostate{}};
    }
    sample.features[FeatureKey::MapMedianLast1h].value = 61.0;
    const privacy::SensitiveCorpus corpus = privacy::SensitiveCorpus::from_sample(sample);

    const rubric::RubricState state{true, "VERY_LIKELY_STABLE", 1, "fallback"};
    const privacy::RemotePayload payload = privacy::build_remote_payload(
        state, {}, schema, "Propose plausible category transitions.");

    privacy::AuditLog audit;
    CallContext ctx{sample.id(), "advisory", 0, "", 0};
    const auto completion = llm::advise_remote(remote, payload, corpus, audit, ctx);
    CHECK(llm::parse_advisory(completion.text).ok());
    CHECK(audit.to_remote_count() == 1);
    CHECK(audit.violation_count() == 0);
}

TEST_CASE("http backend: usage passthrough, estimation fallback, retry, failure") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::atomic<bool> with_usage{true};
    std::atomic<bool> fail_once{false};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                            httplib::Response& res) {
        ++hits;
        if (fail_once.exchange(false)) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
            return;
        }
        const nlohmann::json request = nlohmann::json::parse(req.body);
        CHECK(request.at("model") == "test-model");
        CHECK(request.at("temperature") == 0.0);
        nlohmann::json reply = {
            {"choices",
             nlohmann::json::array(
                 {{{"message", {{"role", "assistant"}, {"content", "alpha beta"}}}}})},
        };
        if (with_usage) {
            reply["usage"] = {{"prompt_tokens", 120}, {"completion_tokens", 30}};
        }
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&server] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::yield();

    const std::string spec_str =
        "http://127.0.0.1:" + std::to_string(port) + "#test-model";
    llm::BackendOptions options;
    options.retries = 2;
    options.timeout_seconds = 5;
    auto backend =
        llm::make_backend(BackendSpec::parse(spec_str, BackendRole::Local), options);
    CallContext ctx{"s1", "single", 0, "A", 0};

    auto completion = backend->complete("ping", ctx);
    CHECK(completion.text == "alpha beta");
    CHECK(completion.usage.prompt_tokens == 120);
    CHECK(completion.usage.completion_tokens == 30);
    CHECK_FALSE(completion.usage.estimated);

    with_usage = false;
    completion = backend->complete("two words", ctx);
    CHECK(completion.usage.prompt_tokens == 2);  // whitespace fallback
    CHECK(completion.usage.completion_tokens == 2);
    CHECK(completion.usage.estimated);

    fail_once = true;
    const int before = hits.load();
    completion = backend->complete("retry me", ctx);
    CHECK(completion.text == "alpha beta");
    CHECK(hits.load() == before + 2); // 503 then success

    server.stop();
    server_thread.join();

    // Dead endpoint: BackendError after exhausting retries.
    llm::BackendOptions fast;
    fast.retries = 1;
    fast.timeout_seconds = 1;
    auto dead = llm::make_backend(
        BackendSpec::parse("http://127.0.0.1:1#test-model", BackendRole::Local), fast);
    CHECK_THROWS_AS(dead->complete("ping", ctx), BackendError);
}
