#include "care/engine.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "care/common.hpp"

namespace care::engine {

namespace {

std::optional<double> numeric(const cohort::FeatureMap& facts, FeatureKey key) {
    const auto it = facts.find(key);
    if (it == facts.end()) return std::nullopt;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    return std::nullopt;
}

// Stage-1 local inputs: the two subjective features plus the direct
// objective snapshot.
cohort::FeatureMap stage1_features(const Sample& sample) {
    cohort::FeatureMap out;
    for (const FeatureKey key : all_feature_keys()) {
        if (feature_exposure(key) == Exposure::ObjectiveRetrievable) continue;
        out[key] = sample.value(key);
    }
    return out;
}

void render_lines(std::ostream& os, const Sample& sample,
                  const std::vector<FeatureKey>& keys) {
    for (const FeatureKey key : keys) {
        os << "- " << feature_name(key) << ": " << render_feature_value(sample.value(key))
           << "\n";
    }
}

std::vector<FeatureKey> snapshot_keys() {
    return keys_with_exposure(Exposure::ObjectiveDirect);
}

std::vector<FeatureKey> bedside_keys() {
    auto keys = keys_with_exposure(Exposure::SubjectiveDirect);
    for (const FeatureKey key : keys_with_exposure(Exposure::ObjectiveDirect)) {
        keys.push_back(key);
    }
    return keys;
}

bool requestable(FeatureKey key) {
    return feature_exposure(key) != Exposure::SubjectiveDirect;
}

} // namespace

std::string_view prediction_name(Prediction p) {
    switch (p) {
        case Prediction::Positive: return "POSITIVE";
        case Prediction::Negative: return "NEGATIVE";
        case Prediction::Invalid: return "INVALID";
    }
    return "INVALID";
}

Prediction prediction_from_action(llm::Action action) {
    return action == llm::Action::InvestigateO ? Prediction::Positive : Prediction::Negative;
}

nlohmann::json gate_config_to_json(const GateConfig& gate) {
    return nlohmann::json{
        {"lactate_thr", gate.lactate_thr},
        {"urine_thr", gate.urine_thr},
        {"sofa_thr", gate.sofa_thr},
        {"hemo_map_low65_minutes", gate.hemo_map_low65_minutes},
        {"hemo_map_median", gate.hemo_map_median},
        {"min_support", gate.min_support},
    };
}

GateConfig gate_config_from_json(const nlohmann::json& j) {
    GateConfig gate;
    gate.lactate_thr = j.value("lactate_thr", gate.lactate_thr);
    gate.urine_thr = j.value("urine_thr", gate.urine_thr);
    gate.sofa_thr = j.value("sofa_thr", gate.sofa_thr);
    gate.hemo_map_low65_minutes = j.value("hemo_map_low65_minutes", gate.hemo_map_low65_minutes);
    gate.hemo_map_median = j.value("hemo_map_median", gate.hemo_map_median);
    gate.min_support = j.value("min_support", gate.min_support);
    return gate;
}

std::string_view advisory_status_name(AdvisoryStatus status) {
    switch (status) {
        case AdvisoryStatus::Ok: return "ok";
        case AdvisoryStatus::SkippedAblation: return "skipped_ablation";
        case AdvisoryStatus::DegradedBackendFailure: return "degraded_backend_failure";
        case AdvisoryStatus::DegradedParseFailure: return "degraded_parse_failure";
        case AdvisoryStatus::RefusedPrivacy: return "refused_privacy";
    }
    return "ok";
}

GateOutcome balance_gate(llm::Action candidate, const cohort::FeatureMap& facts,
                         const GateConfig& config) {
    GateOutcome outcome;
    const auto low65 = numeric(facts, FeatureKey::MapLowMinutesLast1hThr65);
    const auto map_median = numeric(facts, FeatureKey::MapMedianLast1h);
    const auto lactate = numeric(facts, FeatureKey::LactateLatest6h);
    const auto urine = numeric(facts, FeatureKey::UrineOutputMlkghr6h);
    const auto norepi = numeric(facts, FeatureKey::NorepiEqDoseMax1h);
    const auto sofa_total = numeric(facts, FeatureKey::SofaTotal);

    outcome.support_flags["hemodynamic"] =
        (low65 && *low65 >= config.hemo_map_low65_minutes) ||
        (map_median && *map_median < config.hemo_map_median);
    outcome.support_flags["perfusion"] = lactate && *lactate >= config.lactate_thr;
    outcome.support_flags["renal"] = urine && *urine < config.urine_thr;
    outcome.support_flags["pressor"] = norepi && *norepi > 0;
    outcome.support_flags["organ"] = sofa_total && *sofa_total >= config.sofa_thr;

    for (const auto& [name, flag] : outcome.support_flags) {
        if (flag) ++outcome.support_count;
    }

    outcome.final_action = candidate;
    outcome.gate = GateDecision::None;
    if (candidate == llm::Action::InvestigateO &&
        outcome.support_count < config.min_support) {
        outcome.final_action = llm::Action::TreatS;
        outcome.gate = GateDecision::DowngradeToTreatS;
    }
    return outcome;
}

std::string render_acquisition_prompt(const Sample& sample, const rubric::RubricState& state,
                                      const rubric::RubricSchema& schema,
                                      const std::vector<std::pair<std::string, std::string>>&
                                          facts_so_far,
                                      int round) {
    std::ostringstream os;
    os << "You are an ICU triage assistant planning targeted evidence acquisition.\n\n";
    os << "### Local Objective Snapshot\n";
    os << "These values are already available before any new retrieval.\n";
    render_lines(os, sample, snapshot_keys());
    os << "\n### Current Rubric State\n";
    os << "- Category: " << state.category << "\n";
    os << "- Rationale: " << state.reason << "\n";
    const rubric::Category* category = schema.find(state.category);
    if (category && !category->evidence_requirements.empty()) {
        os << "\n### Typical Evidence For This Category\n- ";
        for (std::size_t i = 0; i < category->evidence_requirements.size(); ++i) {
            if (i > 0) os << ", ";
            os << domain_name(category->evidence_requirements[i]);
        }
        os << "\n";
    }
    os << "\n### Retrievable Fact Keys\n";
    for (const FeatureKey key : keys_with_exposure(Exposure::ObjectiveRetrievable)) {
        os << "- " << feature_name(key) << "\n";
    }
    if (!facts_so_far.empty()) {
        os << "\n### Facts Retrieved So Far\n";
        for (const auto& [key, value] : facts_so_far) {
            os << "- " << key << ": " << value << "\n";
        }
    }
    os << "\n### Task: Evidence Acquisition Planning (round " << round << ")\n";
    os << "Decide whether additional objective data is needed before final "
          "decision-making.\n";
    os << "Respond with one JSON object:\n";
    os << "{\"need_data\": <true|false>, \"facts_keys\": [<fact keys to retrieve>], "
          "\"reasoning\": \"<short justification>\"}\n";
    return os.str();
}

std::string render_decision_prompt(const Sample& sample,
                                   const std::vector<std::pair<std::string, std::string>>&
                                       facts_report,
                                   const rubric::RubricState& initial,
                                   const rubric::RubricState& updated) {
    std::ostringstream os;
    os << "You are an ICU clinical triage safety agent making the final call.\n\n";
    os << "### Bedside Snapshot\n";
    render_lines(os, sample, bedside_keys());
    os << "\n### Retrieved Facts Report\n";
    if (facts_report.empty()) {
        os << "No additional facts were retrieved.\n";
    } else {
        os << "You requested additional objective clinical data, and the monitoring "
              "system returned:\n";
        for (const auto& [key, value] : facts_report) {
            os << "- " << key << ": " << value << "\n";
        }
    }
    os << "\n### Heuristic Pre-Assessment (for reference only)\n";
    os << "- Initial estimate: " << initial.category << "\n";
    os << "- Updated estimate: " << updated.category << "\n";
    os << "- Updated-state rationale: " << updated.reason << "\n";
    os << "\n### Final Triage Decision\n";
    os << "Choose exactly one action: OBSERVE (no escalation), TREAT_S (supportive "
          "measures), or INVESTIGATE_O (escalate for suspected worsening).\n";
    os << "Respond with one JSON object:\n";
    os << "{\"differential_diagnosis\": \"<assessment>\", \"final_action\": "
          "\"<OBSERVE|TREAT_S|INVESTIGATE_O>\"}\n";
    return os.str();
}

namespace {

struct CallRecorder {
    StageTrace& trace;

    llm::Completion run(llm::Backend& backend, const std::string& prompt,
                        const llm::CallContext& ctx) {
        llm::Completion completion = backend.complete(prompt, ctx);
        trace.calls.push_back({ctx.stage, completion.usage.prompt_tokens,
                               completion.usage.completion_tokens,
                               completion.usage.estimated});
        trace.usage_total += completion.usage;
        return completion;
    }
};

} // namespace

std::pair<Prediction, StageTrace> run_care(const Sample& sample, const RunContext& context,
                                           const EngineConfig& config) {
    const rubric::RubricSchema& schema = *context.schema;
    StageTrace trace;
    trace.stay_id = sample.stay_id;
    trace.t_eval = sample.t_eval;
    trace.config_digest = context.config_digest;
    CallRecorder recorder{trace};

    // Stage 1: programmatic initial assignment (or fixed neutral start).
    cohort::FeatureMap known = stage1_features(sample);
    if (config.no_stage1) {
        const rubric::Category& neutral = schema.by_severity(3);
        trace.initial_state = rubric::RubricState{
            false, neutral.name, neutral.severity,
            "Fixed neutral start (initial assignment disabled)."};
    } else {
        trace.initial_state = rubric::assign_initial_state(known, schema, config.rules);
    }

    // Stage 2: category-aware acquisition loop against the local fact store.
    std::vector<std::pair<std::string, std::string>> facts_report;
    std::set<std::string> retrieved_names;
    try {
        for (int round = 0; round < config.max_acquisition_rounds; ++round) {
            AcquisitionRound record;
            record.round = round;
            const std::string prompt = render_acquisition_prompt(
                sample, trace.initial_state, schema, facts_report, round);
            llm::CallContext ctx{sample.id(), "acquisition", round, "", 0};
            llm::Completion completion = recorder.run(*context.local, prompt, ctx);
            auto parsed = llm::parse_acquisition(completion.text);
            if (!parsed.ok() && config.max_repair_attempts > 0) {
                record.repair_used = true;
                ctx.attempt = 1;
                completion = recorder.run(*context.local,
                                          prompt + std::string(kFormatReminder), ctx);
                parsed = llm::parse_acquisition(completion.text);
            }
            if (!parsed.ok()) {
                // Proceed with no retrieval this round.
                record.request_valid = false;
                trace.acquisition_valid = false;
                trace.rounds.push_back(std::move(record));
                continue;
            }
            record.request_valid = true;
            llm::AcquisitionRequest request = *parsed.value;

            std::vector<FeatureKey> valid_keys;
            for (const auto& name : request.facts_keys) {
                const auto key = feature_from_name(name);
                if (!key || !requestable(*key)) {
                    record.dropped_keys.push_back(name);
                    continue;
                }
                valid_keys.push_back(*key);
            }
            record.request = request;

            if (!request.need_data) {
                trace.rounds.push_back(std::move(record));
                break;
            }

            for (const FeatureKey key : valid_keys) {
                const std::string name(feature_name(key));
                known[key] = sample.value(key);
                if (retrieved_names.insert(name).second) {
                    facts_report.emplace_back(name, render_feature_value(sample.value(key)));
                }
                record.retrieved.emplace_back(name, render_feature_value(sample.value(key)));
            }

            // Programmatic sufficiency: a requested key is satisfied once it
            // is materialized locally (a MISSING value surfaces as "N/A").
            llm::SufficiencyResult sufficiency;
            sufficiency.updated_available_keys.assign(retrieved_names.begin(),
                                                      retrieved_names.end());
            sufficiency.is_sufficient = sufficiency.remaining_requested_keys.empty();
            record.sufficiency = sufficiency;
            const bool stop = sufficiency.is_sufficient;
            trace.rounds.push_back(std::move(record));
            if (stop) break;
        }
    } catch (const BackendError&) {
        trace.local_backend_failed = true;
        trace.acquisition_valid = false;
        trace.recomputed_state = trace.initial_state;
        trace.merged_state = trace.initial_state;
        trace.prediction = Prediction::Invalid;
        return {Prediction::Invalid, trace};
    }

    // Stage 3: local recomputation, remote advisory on metadata only,
    // constrained merge. The remote side is consulted at most once.
    trace.recomputed_state = rubric::recompute_state(known, schema, config.rules);
    if (config.no_stage3) {
        trace.advisory_status = AdvisoryStatus::SkippedAblation;
        trace.merged_state = trace.recomputed_state;
    } else {
        rubric::RemoteAdvisory advisory;
        trace.advisory_status = AdvisoryStatus::Ok;
        try {
            std::vector<privacy::TaggedItem> evidence;
            for (const auto& name : retrieved_names) {
                evidence.push_back(privacy::TaggedItem::metadata(name));
            }
            const privacy::RemotePayload payload = privacy::build_remote_payload(
                trace.initial_state, evidence, schema, config.task_description);
            const privacy::SensitiveCorpus corpus = privacy::SensitiveCorpus::from_sample(sample);
            llm::CallContext ctx{sample.id(), "advisory", 0, "", 0};
            llm::Completion completion =
                llm::advise_remote(*context.remote, payload, corpus, *context.audit, ctx);
            trace.calls.push_back({ctx.stage, completion.usage.prompt_tokens,
                                   completion.usage.completion_tokens,
                                   completion.usage.estimated});
            trace.usage_total += completion.usage;
            ++trace.remote_calls;

            // The one-remote-call cap leaves no repair budget for stage 3;
            // a malformed advisory degrades to a no-op merge.
            const auto parsed = llm::parse_advisory(completion.text);
            if (parsed.ok()) {
                advisory.transition_candidates = parsed.value->transition_candidates;
                advisory.transition_guidance = parsed.value->transition_guidance;
                advisory.transition_reasoning = parsed.value->transition_reasoning;
                trace.advisory = *parsed.value;
            } else {
                trace.advisory_status = AdvisoryStatus::DegradedParseFailure;
            }
        } catch (const BackendError&) {
            trace.advisory_status = AdvisoryStatus::DegradedBackendFailure;
        } catch (const PrivacyViolationError&) {
            trace.advisory_status = AdvisoryStatus::RefusedPrivacy;
        }
        const rubric::MergeOutcome merged =
            rubric::constrained_merge(trace.recomputed_state, advisory, schema);
        trace.merged_state = merged.state;
        trace.dropped_candidates = merged.dropped_candidates;
    }

    // Stage 4: gated final decision over the accumulated trace.
    try {
        const std::string prompt =
            render_decision_prompt(sample, facts_report, trace.initial_state,
                                   trace.merged_state);
        llm::CallContext ctx{sample.id(), "decision", 0, "", 0};
        llm::Completion completion = recorder.run(*context.local, prompt, ctx);
        auto parsed = llm::parse_decision(completion.text);
        int attempt = 0;
        while (!parsed.ok() && attempt < config.max_repair_attempts) {
            ++attempt;
            trace.decision_repair_used = true;
            ctx.attempt = attempt;
            completion =
                recorder.run(*context.local, prompt + std::string(kFormatReminder), ctx);
            parsed = llm::parse_decision(completion.text);
        }
        if (!parsed.ok()) {
            trace.decision_valid = false;
            trace.prediction = Prediction::Invalid;
            return {Prediction::Invalid, trace};
        }
        trace.decision = *parsed.value;
        trace.gate = balance_gate(parsed.value->final_action, known, config.gate);
        trace.prediction = prediction_from_action(trace.gate->final_action);
    } catch (const BackendError&) {
        trace.local_backend_failed = true;
        trace.decision_valid = false;
        trace.prediction = Prediction::Invalid;
        return {Prediction::Invalid, trace};
    }

    return {trace.prediction, trace};
}

nlohmann::json StageTrace::to_json() const {
    nlohmann::json rounds_json = nlohmann::json::array();
    for (const auto& round : rounds) {
        nlohmann::json r = {
            {"round", round.round},
            {"request_valid", round.request_valid},
            {"repair_used", round.repair_used},
        };
        if (round.request) {
            r["request"] = {{"need_data", round.request->need_data},
                            {"facts_keys", round.request->facts_keys},
                            {"reasoning", round.request->reasoning}};
        }
        if (!round.dropped_keys.empty()) r["dropped_keys"] = round.dropped_keys;
        nlohmann::json retrieved = nlohmann::json::object();
        for (const auto& [key, value] : round.retrieved) retrieved[key] = value;
        r["retrieved"] = retrieved;
        if (round.sufficiency) {
            r["sufficiency"] = {
                {"is_sufficient", round.sufficiency->is_sufficient},
                {"remaining_requested_keys", round.sufficiency->remaining_requested_keys},
                {"updated_available_keys", round.sufficiency->updated_available_keys}};
        }
        rounds_json.push_back(std::move(r));
    }

    nlohmann::json calls_json = nlohmann::json::array();
    for (const auto& call : calls) {
        calls_json.push_back({{"stage", call.stage},
                              {"prompt_tokens", call.prompt_tokens},
                              {"completion_tokens", call.completion_tokens},
                              {"estimated", call.estimated}});
    }

    nlohmann::json j = {
        {"stay_id", stay_id},
        {"t_eval", t_eval},
        {"workflow", workflow},
        {"config_digest", config_digest},
        {"initial_state", rubric::rubric_state_to_json(initial_state)},
        {"acquisition_rounds", rounds_json},
        {"advisory_status", std::string(advisory_status_name(advisory_status))},
        {"recomputed_state", rubric::rubric_state_to_json(recomputed_state)},
        {"merged_state", rubric::rubric_state_to_json(merged_state)},
        {"prediction", std::string(prediction_name(prediction))},
        {"stage_valid",
         {{"acquisition", acquisition_valid}, {"decision", decision_valid}}},
        {"local_backend_failed", local_backend_failed},
        {"calls", calls_json},
        {"usage",
         {{"prompt_tokens", usage_total.prompt_tokens},
          {"completion_tokens", usage_total.completion_tokens},
          {"estimated", usage_total.estimated}}},
        {"remote_calls", remote_calls},
    };
    if (advisory) {
        j["advisory"] = {{"transition_candidates", advisory->transition_candidates},
                         {"transition_guidance", advisory->transition_guidance},
                         {"transition_reasoning", advisory->transition_reasoning}};
    }
    if (!dropped_candidates.empty()) j["dropped_candidates"] = dropped_candidates;
    if (decision) {
        j["decision"] = {{"differential_diagnosis", decision->differential_diagnosis},
                         {"candidate_action", std::string(llm::action_name(decision->final_action))}};
    }
    j["decision_repair_used"] = decision_repair_used;
    if (gate) {
        nlohmann::json flags = nlohmann::json::object();
        for (const auto& [name, flag] : gate->support_flags) flags[name] = flag;
        j["gate"] = {
            {"final_action", std::string(llm::action_name(gate->final_action))},
            {"balance_gate", gate->gate == GateDecision::DowngradeToTreatS
                                 ? "downgrade_to_treat_s"
                                 : "none"},
            {"support_count", gate->support_count},
            {"support_flags", flags},
        };
    }
    return j;
}

} // namespace care::engine
