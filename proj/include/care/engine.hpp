#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/cohort.hpp"
#include "care/features.hpp"
#include "care/llm.hpp"
#include "care/privacy.hpp"
#include "care/rubric.hpp"
#include "care/stage_parse.hpp"

namespace care::engine {

enum class Prediction { Positive, Negative, Invalid };

std::string_view prediction_name(Prediction p);
Prediction prediction_from_action(llm::Action action);

struct GateConfig {
    double lactate_thr = 2.0;        // perfusion support at or above
    double urine_thr = 0.5;          // renal support strictly below
    double sofa_thr = 8;             // organ support at or above
    double hemo_map_low65_minutes = 10; // hemodynamic support at or above, or
    double hemo_map_median = 65;        // ... MAP median strictly below
    int min_support = 2;
};

nlohmann::json gate_config_to_json(const GateConfig& gate);
GateConfig gate_config_from_json(const nlohmann::json& j);

enum class GateDecision { None, DowngradeToTreatS };

struct GateOutcome {
    llm::Action final_action = llm::Action::Observe;
    GateDecision gate = GateDecision::None;
    int support_count = 0;
    std::map<std::string, bool> support_flags; // hemodynamic/perfusion/renal/pressor/organ
};

// Programmatic multi-domain support check. An INVESTIGATE_O candidate with
// fewer than min_support true flags is downgraded to TREAT_S; the gate only
// constrains escalation. MISSING facts contribute false.
GateOutcome balance_gate(llm::Action candidate, const cohort::FeatureMap& facts,
                         const GateConfig& config);

struct EngineConfig {
    int max_acquisition_rounds = 3;
    int max_repair_attempts = 1;
    bool no_stage1 = false; // fixed neutral severity-3 start
    bool no_stage3 = false; // skip remote advisory and merge
    GateConfig gate;
    rubric::RuleThresholds rules;
    std::string task_description =
        "Decide which category transitions deserve consideration for a monitored "
        "intensive-care patient, given only the current category and the types of "
        "evidence collected.";
};

enum class AdvisoryStatus {
    Ok,
    SkippedAblation,
    DegradedBackendFailure,
    DegradedParseFailure,
    RefusedPrivacy,
};

std::string_view advisory_status_name(AdvisoryStatus status);

struct AcquisitionRound {
    int round = 0;
    bool request_valid = false;
    bool repair_used = false;
    std::optional<llm::AcquisitionRequest> request;
    std::vector<std::string> dropped_keys;
    std::vector<std::pair<std::string, std::string>> retrieved; // key -> rendered value
    std::optional<llm::SufficiencyResult> sufficiency;
};

struct CallUsage {
    std::string stage;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    bool estimated = false;
};

struct StageTrace {
    std::string stay_id;
    int t_eval = 0;
    std::string workflow = "care";
    std::string config_digest;

    rubric::RubricState initial_state;
    std::vector<AcquisitionRound> rounds;

    AdvisoryStatus advisory_status = AdvisoryStatus::Ok;
    std::optional<llm::AdvisoryOutput> advisory;
    std::vector<std::string> dropped_candidates;
    rubric::RubricState recomputed_state;
    rubric::RubricState merged_state;

    std::optional<llm::DecisionOutput> decision;
    bool decision_repair_used = false;
    std::optional<GateOutcome> gate;

    Prediction prediction = Prediction::Invalid;
    bool acquisition_valid = true;
    bool decision_valid = true;
    bool local_backend_failed = false;

    std::vector<CallUsage> calls;
    llm::Usage usage_total;
    int remote_calls = 0;

    nlohmann::json to_json() const;
};

struct RunContext {
    llm::Backend* local = nullptr;
    llm::Backend* remote = nullptr; // may be null when no_stage3
    privacy::AuditLog* audit = nullptr;
    const rubric::RubricSchema* schema = nullptr;
    std::string config_digest;
};

// Executes the four-stage workflow for one sample: programmatic initial
// assignment, the evidence-acquisition loop, metadata-only remote advisory
// with local recomputation and constrained merge, then the gated final
// decision. Prediction is INVALID only when the stage-4 output stays
// unparseable after the repair budget or the local backend fails.
std::pair<Prediction, StageTrace> run_care(const Sample& sample, const RunContext& context,
                                           const EngineConfig& config);

// Prompt renderers, exposed for protocol tests.
std::string render_acquisition_prompt(const Sample& sample, const rubric::RubricState& state,
                                      const rubric::RubricSchema& schema,
                                      const std::vector<std::pair<std::string, std::string>>&
                                          facts_so_far,
                                      int round);
std::string render_decision_prompt(const Sample& sample,
                                   const std::vector<std::pair<std::string, std::string>>&
                                       facts_report,
                                   const rubric::RubricState& initial,
                                   const rubric::RubricState& updated);

inline constexpr std::string_view kFormatReminder =
    "\n\nYour previous answer was not a single valid JSON object of the required "
    "shape. Respond again with exactly one JSON object and nothing else.";

} // namespace care::engine
