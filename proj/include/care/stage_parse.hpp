#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace care::llm {

enum class Action { Observe, TreatS, InvestigateO };

std::string_view action_name(Action action);
std::optional<Action> action_from_name(std::string_view name);

enum class StageSchema { Acquisition, Sufficiency, Advisory, Decision, BaselineTurn };

struct ParseError {
    std::string detail;
};

template <class T>
struct Parsed {
    std::optional<T> value;
    std::string error;

    bool ok() const { return value.has_value(); }
};

// Extracts the first well-formed JSON object embedded in free text
// (prose, code fences, stray braces tolerated). Never throws.
std::optional<nlohmann::json> extract_first_json_object(const std::string& text);

struct AcquisitionRequest {
    bool need_data = false;
    std::vector<std::string> facts_keys;
    std::string reasoning;
};

struct SufficiencyResult {
    bool is_sufficient = false;
    std::vector<std::string> remaining_requested_keys;
    std::vector<std::string> updated_available_keys;
};

struct AdvisoryOutput {
    std::vector<std::string> transition_candidates;
    std::string transition_guidance;
    std::string transition_reasoning;
};

struct DecisionOutput {
    std::string differential_diagnosis;
    Action final_action = Action::Observe;
};

struct BaselineTurnOutput {
    std::string reasoning;
    Action final_action = Action::Observe;
    std::optional<int> confidence; // present in ConfMAD turns
};

Parsed<AcquisitionRequest> parse_acquisition(const std::string& text);
Parsed<SufficiencyResult> parse_sufficiency(const std::string& text);
Parsed<AdvisoryOutput> parse_advisory(const std::string& text);
Parsed<DecisionOutput> parse_decision(const std::string& text);
Parsed<BaselineTurnOutput> parse_baseline_turn(const std::string& text,
                                               bool require_confidence);

} // namespace care::llm
