#include "care/stage_parse.hpp"

namespace care::llm {

std::string_view action_name(Action action) {
    switch (action) {
        case Action::Observe: return "OBSERVE";
        case Action::TreatS: return "TREAT_S";
        case Action::InvestigateO: return "INVESTIGATE_O";
    }
    return "OBSERVE";
}

std::optional<Action> action_from_name(std::string_view name) {
    if (name == "OBSERVE") return Action::Observe;
    if (name == "TREAT_S") return Action::TreatS;
    if (name == "INVESTIGATE_O") return Action::InvestigateO;
    return std::nullopt;
}

namespace {

// Finds the matching close brace for the '{' at `start`, honouring string
// literals and escapes. Returns npos when unbalanced.
std::size_t matching_brace(const std::string& text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) return i;
        }
    }
    return std::string::npos;
}

std::optional<std::vector<std::string>> string_array(const nlohmann::json& j,
                                                     const char* field) {
    if (!j.contains(field) || !j.at(field).is_array()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& item : j.at(field)) {
        if (!item.is_string()) return std::nullopt;
        out.push_back(item.get<std::string>());
    }
    return out;
}

} // namespace

std::optional<nlohmann::json> extract_first_json_object(const std::string& text) {
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string::npos) {
        const std::size_t end = matching_brace(text, pos);
        if (end == std::string::npos) {
            ++pos;
            continue;
        }
        try {
            nlohmann::json j = nlohmann::json::parse(text.substr(pos, end - pos + 1));
            if (j.is_object()) return j;
        } catch (const nlohmann::json::exception&) {
            // fall through and try the next candidate start
        }
        ++pos;
    }
    return std::nullopt;
}

Parsed<AcquisitionRequest> parse_acquisition(const std::string& text) {
    const auto j = extract_first_json_object(text);
    if (!j) return {std::nullopt, "no JSON object found"};
    if (!j->contains("need_data") || !j->at("need_data").is_boolean()) {
        return {std::nullopt, "missing boolean field need_data"};
    }
    AcquisitionRequest request;
    request.need_data = j->at("need_data").get<bool>();
    request.reasoning = j->value("reasoning", std::string());
    if (request.need_data) {
        const auto keys = string_array(*j, "facts_keys");
        if (!keys || keys->empty()) {
            return {std::nullopt, "need_data is true but facts_keys is empty or missing"};
        }
        request.facts_keys = *keys;
    }
    // facts_keys is empty iff need_data is false; stray keys on a
    // need_data=false answer are dropped.
    return {request, ""};
}

Parsed<SufficiencyResult> parse_sufficiency(const std::string& text) {
    const auto j = extract_first_json_object(text);
    if (!j) return {std::nullopt, "no JSON object found"};
    if (!j->contains("is_sufficient") || !j->at("is_sufficient").is_boolean()) {
        return {std::nullopt, "missing boolean field is_sufficient"};
    }
    SufficiencyResult result;
    result.is_sufficient = j->at("is_sufficient").get<bool>();
    if (const auto remaining = string_array(*j, "remaining_requested_keys")) {
        result.remaining_requested_keys = *remaining;
    }
    if (const auto updated = string_array(*j, "updated_available_keys")) {
        result.updated_available_keys = *updated;
    }
    if (result.is_sufficient != result.remaining_requested_keys.empty()) {
        return {std::nullopt, "is_sufficient inconsistent with remaining_requested_keys"};
    }
    return {result, ""};
}

Parsed<AdvisoryOutput> parse_advisory(const std::string& text) {
    const auto j = extract_first_json_object(text);
    if (!j) return {std::nullopt, "no JSON object found"};
    const auto candidates = string_array(*j, "transition_candidates");
    if (!candidates) {
        return {std::nullopt, "missing array field transition_candidates"};
    }
    AdvisoryOutput advisory;
    advisory.transition_candidates = *candidates;
    advisory.transition_guidance = j->value("transition_guidance", std::string());
    advisory.transition_reasoning = j->value("transition_reasoning", std::string());
    return {advisory, ""};
}

Parsed<DecisionOutput> parse_decision(const std::string& text) {
    const auto j = extract_first_json_object(text);
    if (!j) return {std::nullopt, "no JSON object found"};
    if (!j->contains("final_action") || !j->at("final_action").is_string()) {
        return {std::nullopt, "missing string field final_action"};
    }
    const auto action = action_from_name(j->at("final_action").get<std::string>());
    if (!action) {
        return {std::nullopt,
                "final_action outside enum: " + j->at("final_action").dump()};
    }
    DecisionOutput decision;
    decision.final_action = *action;
    decision.differential_diagnosis = j->value("differential_diagnosis", std::string());
    return {decision, ""};
}

Parsed<BaselineTurnOutput> parse_baseline_turn(const std::string& text,
                                               bool require_confidence) {
    const auto j = extract_first_json_object(text);
    if (!j) return {std::nullopt, "no JSON object found"};
    if (!j->contains("final_action") || !j->at("final_action").is_string()) {
        return {std::nullopt, "missing string field final_action"};
    }
    const auto action = action_from_name(j->at("final_action").get<std::string>());
    if (!action) {
        return {std::nullopt,
                "final_action outside enum: " + j->at("final_action").dump()};
    }
    BaselineTurnOutput turn;
    turn.final_action = *action;
    turn.reasoning = j->value("reasoning", std::string());
    if (j->contains("confidence")) {
        if (!j->at("confidence").is_number_integer()) {
            return {std::nullopt, "confidence must be an integer"};
        }
        const int c = j->at("confidence").get<int>();
        if (c < 0 || c > 100) {
            return {std::nullopt, "confidence outside [0,100]: " + std::to_string(c)};
        }
        turn.confidence = c;
    } else if (require_confidence) {
        return {std::nullopt, "missing integer field confidence"};
    }
    return {turn, ""};
}

} // namespace care::llm
