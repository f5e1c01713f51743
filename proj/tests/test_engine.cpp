#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>

#include "care/engine.hpp"
#include "care/llm.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace care;
using engine::EngineConfig;
using engine::Prediction;
using engine::RunContext;
using engine::StageTrace;
using llm::Action;
using llm::BackendRole;
using llm::BackendSpec;
using llm::MockBackend;

namespace {

BackendSpec mock_spec(BackendRole role) {
    BackendSpec spec;
    spec.kind = llm::BackendKind::Mock;
    spec.role = role;
    spec.display = role == BackendRole::Remote ? "mock:remote" : "mock:local";
    return spec;
}

struct Harness {
    rubric::RubricSchema schema = rubric::RubricSchema::default_schema();
    privacy::AuditLog audit;
    std::unique_ptr<MockBackend> local;
    std::unique_ptr<MockBackend> remote;

    Harness(const nlohmann::json& local_script, const nlohmann::json& remote_script) {
        local = std::make_unique<MockBackend>(mock_spec(BackendRole::Local), local_script);
        remote = std::make_unique<MockBackend>(mock_spec(BackendRole::Remote), remote_script);
    }

    RunContext context() {
        RunContext ctx;
        ctx.local = local.get();
        ctx.remote = remote.get();
        ctx.audit = &audit;
        ctx.schema = &schema;
        ctx.config_digest = "testdigest";
        return ctx;
    }
};

nlohmann::json script_with(std::vector<std::pair<std::string, std::string>> stage_texts,
                           const std::string& fallback = "") {
    nlohmann::json responses = nlohmann::json::array();
    for (auto& [stage, text] : stage_texts) {
        responses.push_back({{"stage", stage}, {"text", text}});
    }
    nlohmann::json script = {{"mode", "script"}, {"responses", responses}};
    if (!fallback.empty()) script["default"] = fallback;
    return script;
}

std::string decision_json(const std::string& action) {
    return nlohmann::json{{"differential_diagnosis", "scripted"}, {"final_action", action}}
        .dump();
}

std::string no_data_json() {
    return nlohmann::json{{"need_data", false},
                          {"facts_keys", nlohmann::json::array()},
                          {"reasoning", "enough"}}
        .dump();
}

} // namespace

TEST_CASE("walk-through replay: fallback, 4-key acquisition, merge uplift, gated downgrade") {
    Harness h(script_with({{"acquisition", test_support::walkthrough_acquisition_json()},
                           {"decision", decision_json("INVESTIGATE_O")}}),
              script_with({{"advisory", test_support::walkthrough_advisory_json()}}));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});

    // Stage 1: programmatic fallback to the severity-1 category.
    CHECK(trace.initial_state.matched);
    CHECK(trace.initial_state.category == "VERY_LIKELY_STABLE");
    CHECK(trace.initial_state.severity == 1);
    CHECK(trace.initial_state.reason ==
          "Fallback to VERY_LIKELY_STABLE (No specific threshold met).");

    // Stage 2: one sufficient round retrieving the four requested keys.
    REQUIRE(trace.rounds.size() == 1);
    const auto& round = trace.rounds.front();
    REQUIRE(round.request.has_value());
    CHECK(round.request->need_data);
    CHECK(round.request->facts_keys.size() == 4);
    REQUIRE(round.retrieved.size() == 4);
    CHECK(round.retrieved[0].first == "map_median_last1h");
    CHECK(round.retrieved[0].second == "64");
    CHECK(round.retrieved[1].second == "1.1");
    CHECK(round.retrieved[2].second == "0.8");
    CHECK(round.retrieved[3].second == "0");
    REQUIRE(round.sufficiency.has_value());
    CHECK(round.sufficiency->is_sufficient);
    CHECK(round.sufficiency->remaining_requested_keys.empty());
    CHECK(round.sufficiency->updated_available_keys.size() == 4);

    // Stage 3: local recomputation is unchanged, merge uplifts one level.
    CHECK(trace.advisory_status == engine::AdvisoryStatus::Ok);
    REQUIRE(trace.advisory.has_value());
    CHECK(trace.advisory->transition_candidates.size() == 4);
    CHECK(trace.recomputed_state.category == "VERY_LIKELY_STABLE");
    CHECK(trace.merged_state.category == "LIKELY_STABLE");
    CHECK(trace.merged_state.severity == 2);
    CHECK(trace.merged_state.reason.find(rubric::kMergeMarker) != std::string::npos);

    // Stage 4: single-domain support downgrades the escalation.
    REQUIRE(trace.gate.has_value());
    CHECK(trace.gate->final_action == Action::TreatS);
    CHECK(trace.gate->gate == engine::GateDecision::DowngradeToTreatS);
    CHECK(trace.gate->support_count == 1);
    CHECK(trace.gate->support_flags.at("hemodynamic"));
    CHECK_FALSE(trace.gate->support_flags.at("perfusion"));
    CHECK_FALSE(trace.gate->support_flags.at("renal"));
    CHECK_FALSE(trace.gate->support_flags.at("pressor"));
    CHECK_FALSE(trace.gate->support_flags.at("organ"));

    CHECK(prediction == Prediction::Negative);
    CHECK(trace.remote_calls == 1);
    CHECK(h.audit.to_remote_count() == 1);
    CHECK(h.audit.violation_count() == 0);

    // Replay with fresh backends is bit-identical.
    Harness h2(script_with({{"acquisition", test_support::walkthrough_acquisition_json()},
                            {"decision", decision_json("INVESTIGATE_O")}}),
               script_with({{"advisory", test_support::walkthrough_advisory_json()}}));
    const auto context2 = h2.context();
    const auto [p2, t2] = engine::run_care(sample, context2, EngineConfig{});
    CHECK(p2 == prediction);
    CHECK(t2.to_json().dump() == trace.to_json().dump());
}

TEST_CASE("pass-through path: no data requested, OBSERVE, merge no-op") {
    Harness h(script_with({{"acquisition", no_data_json()},
                           {"decision", decision_json("OBSERVE")}}),
              script_with({{"advisory",
                            nlohmann::json{{"transition_candidates",
                                            nlohmann::json::array()},
                                           {"transition_guidance", ""},
                                           {"transition_reasoning", ""}}
                                .dump()}}));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Negative);
    REQUIRE(trace.rounds.size() == 1);
    CHECK(trace.rounds.front().retrieved.empty());
    CHECK(trace.merged_state == trace.recomputed_state);
    REQUIRE(trace.gate.has_value());
    CHECK(trace.gate->gate == engine::GateDecision::None); // gate only constrains escalation
    CHECK(trace.remote_calls == 1);
}

TEST_CASE("invalid requested keys are dropped and noted; subjective keys are not retrievable") {
    const std::string request = nlohmann::json{
        {"need_data", true},
        {"facts_keys", {"lactate_latest_6h", "not_a_key", "pain_max_last1h"}},
        {"reasoning", "r"}}.dump();
    Harness h(script_with({{"acquisition", request},
                           {"decision", decision_json("OBSERVE")}}),
              script_with({}, test_support::walkthrough_advisory_json()));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Negative);
    REQUIRE(trace.rounds.size() == 1);
    CHECK(trace.rounds.front().dropped_keys ==
          std::vector<std::string>{"not_a_key", "pain_max_last1h"});
    REQUIRE(trace.rounds.front().retrieved.size() == 1);
    CHECK(trace.rounds.front().retrieved.front().first == "lactate_latest_6h");
    CHECK(trace.rounds.front().sufficiency->is_sufficient);
}

TEST_CASE("adversarial unparseable acquisition terminates at the round cap") {
    Harness h(script_with({{"decision", decision_json("OBSERVE")}},
                          "no structured output, ever"),
              script_with({}, test_support::walkthrough_advisory_json()));
    const Sample sample = test_support::walkthrough_sample();
    EngineConfig config;
    config.max_acquisition_rounds = 3;
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, config);
    CHECK(trace.rounds.size() == 3);
    for (const auto& round : trace.rounds) {
        CHECK_FALSE(round.request_valid);
        CHECK(round.repair_used);
        CHECK(round.retrieved.empty());
    }
    CHECK_FALSE(trace.acquisition_valid);
    // The run still reaches a decision.
    CHECK(prediction == Prediction::Negative);
}

TEST_CASE("remote backend failure degrades stage 3 to a no-op merge") {
    Harness h(script_with({{"acquisition", no_data_json()},
                           {"decision", decision_json("OBSERVE")}}),
              script_with({}, "__FAIL__"));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Negative);
    CHECK(trace.advisory_status == engine::AdvisoryStatus::DegradedBackendFailure);
    CHECK_FALSE(trace.advisory.has_value());
    CHECK(trace.merged_state == trace.recomputed_state);
    CHECK(trace.remote_calls == 0);
    CHECK(h.audit.to_remote_count() == 1); // the attempt was audited
}

TEST_CASE("malformed advisory degrades without a second remote call") {
    Harness h(script_with({{"acquisition", no_data_json()},
                           {"decision", decision_json("OBSERVE")}}),
              script_with({}, "not json"));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Negative);
    CHECK(trace.advisory_status == engine::AdvisoryStatus::DegradedParseFailure);
    CHECK(trace.remote_calls == 1);
    CHECK(h.audit.to_remote_count() == 1); // never re-prompted
    CHECK(trace.merged_state == trace.recomputed_state);
}

TEST_CASE("local backend failure marks the run INVALID") {
    Harness h(script_with({}, "__FAIL__"),
              script_with({}, test_support::walkthrough_advisory_json()));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Invalid);
    CHECK(trace.local_backend_failed);
}

TEST_CASE("unparseable stage-4 output after repair budget is INVALID") {
    Harness h(script_with({{"acquisition", no_data_json()}}, "still not json"),
              script_with({}, test_support::walkthrough_advisory_json()));
    const Sample sample = test_support::walkthrough_sample();
    const auto context = h.context();
    const auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
    CHECK(prediction == Prediction::Invalid);
    CHECK_FALSE(trace.decision_valid);
    CHECK(trace.decision_repair_used);
    CHECK_FALSE(trace.gate.has_value());

    // A repair that succeeds keeps the run valid.
    Harness h2(script_with({{"acquisition", no_data_json()},
                            {"decision", "garbage first"},
                            {"decision", decision_json("TREAT_S")}}),
               script_with({}, test_support::walkthrough_advisory_json()));
    const auto context2 = h2.context();
    const auto [p2, t2] = engine::run_care(sample, context2, EngineConfig{});
    CHECK(p2 == Prediction::Negative);
    CHECK(t2.decision_valid);
    CHECK(t2.decision_repair_used);
}

TEST_CASE("ablation switches: neutral start, skipped advisory, backbone") {
    const Sample sample = test_support::walkthrough_sample();

    EngineConfig no_stage1;
    no_stage1.no_stage1 = true;
    {
        Harness h(script_with({{"acquisition", no_data_json()},
                               {"decision", decision_json("OBSERVE")}}),
                  script_with({}, test_support::walkthrough_advisory_json()));
        const auto context = h.context();
        const auto [prediction, trace] = engine::run_care(sample, context, no_stage1);
        CHECK(trace.initial_state.category == "POTENTIAL_OCCULT_SHOCK");
        CHECK(trace.initial_state.severity == 3);
        CHECK_FALSE(trace.initial_state.matched);
        // Recomputation still applies the cascade over the evidence.
        CHECK(trace.recomputed_state.category == "VERY_LIKELY_STABLE");
        CHECK(trace.remote_calls == 1);
        CHECK(prediction == Prediction::Negative);
    }

    EngineConfig no_stage3;
    no_stage3.no_stage3 = true;
    {
        Harness h(script_with({{"acquisition", no_data_json()},
                               {"decision", decision_json("OBSERVE")}}),
                  script_with({}, "__FAIL__"));
        auto context = h.context();
        context.remote = nullptr; // stage 3 disabled: remote not needed
        const auto [prediction, trace] = engine::run_care(sample, context, no_stage3);
        CHECK(trace.advisory_status == engine::AdvisoryStatus::SkippedAblation);
        CHECK(trace.merged_state == trace.recomputed_state);
        CHECK(trace.remote_calls == 0);
        CHECK(prediction == Prediction::Negative);
    }

    EngineConfig backbone;
    backbone.no_stage1 = true;
    backbone.no_stage3 = true;
    {
        Harness h(script_with({{"acquisition", no_data_json()},
                               {"decision", decision_json("OBSERVE")}}),
                  script_with({}, "__FAIL__"));
        auto context = h.context();
        context.remote = nullptr;
        const auto [prediction, trace] = engine::run_care(sample, context, backbone);
        CHECK(trace.initial_state.severity == 3);
        CHECK(trace.advisory_status == engine::AdvisoryStatus::SkippedAblation);
        CHECK(prediction == Prediction::Negative);
    }
}

TEST_CASE("balance gate matches the truth table over all 32 flag combinations x 3 actions") {
    const engine::GateConfig config;
    const std::array<Action, 3> actions = {Action::Observe, Action::TreatS,
                                           Action::InvestigateO};
    for (int use_missing = 0; use_missing <= 1; ++use_missing) {
        for (unsigned mask = 0; mask < 32; ++mask) {
            cohort::FeatureMap facts;
            const auto set_or_drop = [&](FeatureKey key, bool on, double on_value,
                                         double off_value) {
                if (on) {
                    facts[key] = on_value;
                } else if (!use_missing) {
                    facts[key] = off_value;
                } // else: left MISSING, must read as false
            };
            set_or_drop(FeatureKey::MapLowMinutesLast1hThr65, mask & 1u, 12.0, 2.0);
            if (!(mask & 1u)) facts[FeatureKey::MapMedianLast1h] = 80.0;
            set_or_drop(FeatureKey::LactateLatest6h, mask & 2u, 3.1, 0.8);
            set_or_drop(FeatureKey::UrineOutputMlkghr6h, mask & 4u, 0.3, 1.2);
            set_or_drop(FeatureKey::NorepiEqDoseMax1h, mask & 8u, 0.12, 0.0);
            set_or_drop(FeatureKey::SofaTotal, mask & 16u, 9.0, 3.0);

            const int support = std::popcount(mask);
            for (const Action action : actions) {
                const auto outcome = engine::balance_gate(action, facts, config);
                CHECK(outcome.support_count == support);
                const auto expected = oracles::gate_expected(
                    std::string(llm::action_name(action)), support, config.min_support);
                CHECK(std::string(llm::action_name(outcome.final_action)) ==
                      expected.action);
                CHECK((outcome.gate == engine::GateDecision::DowngradeToTreatS) ==
                      expected.downgraded);
            }
        }
    }
}

TEST_CASE("gate monotonicity: adding support never turns a retained escalation into a downgrade") {
    const engine::GateConfig config;
    const std::array<FeatureKey, 5> flag_keys = {
        FeatureKey::MapLowMinutesLast1hThr65, FeatureKey::LactateLatest6h,
        FeatureKey::UrineOutputMlkghr6h, FeatureKey::NorepiEqDoseMax1h,
        FeatureKey::SofaTotal};
    const std::array<double, 5> on_values = {12.0, 3.1, 0.3, 0.12, 9.0};
    for (unsigned mask = 0; mask < 32; ++mask) {
        cohort::FeatureMap facts;
        facts[FeatureKey::MapMedianLast1h] = 80.0;
        for (int b = 0; b < 5; ++b) {
            if (mask & (1u << b)) facts[flag_keys[b]] = on_values[b];
        }
        const auto base = engine::balance_gate(Action::InvestigateO, facts, config);
        if (base.gate != engine::GateDecision::None) continue;
        for (int b = 0; b < 5; ++b) {
            cohort::FeatureMap more = facts;
            more[flag_keys[b]] = on_values[b];
            const auto outcome = engine::balance_gate(Action::InvestigateO, more, config);
            CHECK(outcome.gate == engine::GateDecision::None);
            CHECK(outcome.final_action == Action::InvestigateO);
        }
    }
}

TEST_CASE("lactate plus pressor support retains the escalation") {
    cohort::FeatureMap facts;
    facts[FeatureKey::MapMedianLast1h] = 80.0;
    facts[FeatureKey::MapLowMinutesLast1hThr65] = 2.0;
    facts[FeatureKey::LactateLatest6h] = 3.1;
    facts[FeatureKey::NorepiEqDoseMax1h] = 0.12;
    const auto outcome =
        engine::balance_gate(Action::InvestigateO, facts, engine::GateConfig{});
    CHECK(outcome.support_count == 2);
    CHECK(outcome.final_action == Action::InvestigateO);
    CHECK(outcome.gate == engine::GateDecision::None);
}

TEST_CASE("20-sample scripted set matches a hand-stepped transcript oracle, bit-reproducibly") {
    // Five behaviour archetypes, four samples each. Expectations are
    // derived by stepping the protocol by hand per archetype.
    struct Expectation {
        Prediction prediction;
        int rounds;
        std::size_t retrieved;
        int merged_severity;
        int remote_calls;
        std::string gate; // "none" | "downgrade" | "absent"
    };

    const auto run_set = [](privacy::AuditLog& audit, std::vector<StageTrace>& traces) {
        const rubric::RubricSchema schema = rubric::RubricSchema::default_schema();
        std::vector<Prediction> predictions;
        for (int i = 0; i < 20; ++i) {
            const int archetype = i % 5;
            Sample sample = test_support::walkthrough_sample();
            sample.stay_id = "tx" + std::to_string(i);
            if (archetype == 2) {
                // High cross-domain support: perfusion + pressor + hemodynamic.
                sample.features[FeatureKey::LactateLatest6h].value = 3.1;
                sample.features[FeatureKey::NorepiEqDoseMax1h].value = 0.12;
            }

            nlohmann::json local_script;
            nlohmann::json remote_script =
                script_with({}, test_support::walkthrough_advisory_json());
            switch (archetype) {
                case 0: // quiet pass-through
                    local_script = script_with({{"acquisition", no_data_json()},
                                                {"decision", decision_json("OBSERVE")}});
                    remote_script = script_with(
                        {}, nlohmann::json{{"transition_candidates",
                                            nlohmann::json::array()},
                                           {"transition_guidance", ""},
                                           {"transition_reasoning", ""}}
                                .dump());
                    break;
                case 1: // low-support escalation attempt
                    local_script =
                        script_with({{"acquisition",
                                      test_support::walkthrough_acquisition_json()},
                                     {"decision", decision_json("INVESTIGATE_O")}});
                    break;
                case 2: // well-supported escalation
                    local_script =
                        script_with({{"acquisition",
                                      test_support::walkthrough_acquisition_json()},
                                     {"decision", decision_json("INVESTIGATE_O")}});
                    break;
                case 3: // acquisition never parses, decision still lands
                    local_script = script_with({{"decision", decision_json("TREAT_S")}},
                                               "never json");
                    break;
                case 4: // remote outage
                    local_script = script_with({{"acquisition", no_data_json()},
                                                {"decision", decision_json("OBSERVE")}});
                    remote_script = script_with({}, "__FAIL__");
                    break;
            }
            MockBackend local(mock_spec(BackendRole::Local), local_script);
            MockBackend remote(mock_spec(BackendRole::Remote), remote_script);
            RunContext context;
            context.local = &local;
            context.remote = &remote;
            context.audit = &audit;
            context.schema = &schema;
            context.config_digest = "txdigest";
            auto [prediction, trace] = engine::run_care(sample, context, EngineConfig{});
            predictions.push_back(prediction);
            traces.push_back(std::move(trace));
        }
        return predictions;
    };

    // Hand-stepped expectations per archetype:
    //  0: no retrieval, empty advisory -> merge no-op (severity 1), OBSERVE -> NEGATIVE.
    //  1: 4 keys, uplift to 2, INVESTIGATE_O with support 1 -> downgrade -> NEGATIVE.
    //  2: 4 keys; lactate 3.1 fires the severity-3 rule on recompute, which is a
    //     candidate -> merge no-op at 3; support 3 -> escalation retained -> POSITIVE.
    //  3: three dead rounds, no retrieval; recompute = initial (1); advisory uplift
    //     to 2; TREAT_S -> NEGATIVE.
    //  4: remote outage -> degraded advisory, severity stays 1, OBSERVE -> NEGATIVE.
    const std::array<Expectation, 5> by_archetype = {{
        {Prediction::Negative, 1, 0, 1, 1, "none"},
        {Prediction::Negative, 1, 4, 2, 1, "downgrade"},
        {Prediction::Positive, 1, 4, 3, 1, "none"},
        {Prediction::Negative, 3, 0, 2, 1, "none"},
        {Prediction::Negative, 1, 0, 1, 0, "none"},
    }};

    privacy::AuditLog audit_a;
    std::vector<StageTrace> traces_a;
    const auto predictions_a = run_set(audit_a, traces_a);

    for (int i = 0; i < 20; ++i) {
        const auto& expected = by_archetype[i % 5];
        CAPTURE(i);
        CHECK(predictions_a[i] == expected.prediction);
        CHECK(traces_a[i].rounds.size() == static_cast<std::size_t>(expected.rounds));
        std::size_t retrieved = 0;
        for (const auto& round : traces_a[i].rounds) retrieved += round.retrieved.size();
        CHECK(retrieved == expected.retrieved);
        CHECK(traces_a[i].merged_state.severity == expected.merged_severity);
        CHECK(traces_a[i].remote_calls == expected.remote_calls);
        if (expected.gate == "downgrade") {
            CHECK(traces_a[i].gate->gate == engine::GateDecision::DowngradeToTreatS);
        } else {
            CHECK(traces_a[i].gate->gate == engine::GateDecision::None);
        }
    }

    // Second pass over fresh backends: identical predictions and traces.
    privacy::AuditLog audit_b;
    std::vector<StageTrace> traces_b;
    const auto predictions_b = run_set(audit_b, traces_b);
    CHECK(predictions_a == predictions_b);
    for (int i = 0; i < 20; ++i) {
        CHECK(traces_a[i].to_json().dump() == traces_b[i].to_json().dump());
    }
    CHECK(audit_a.to_remote_count() == audit_b.to_remote_count());
}
