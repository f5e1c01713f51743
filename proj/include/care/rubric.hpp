#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/cohort.hpp"
#include "care/features.hpp"

namespace care::rubric {

struct Category {
    std::string name;
    int severity = 0; // 1 (stable) .. 5 (worsening)
    std::string description;
    std::vector<ClinicalDomain> evidence_requirements;
};

// Ordered five-category severity scale. The default schema is embedded;
// alternatives load from a JSON file with the same "rubric_schema" shape.
class RubricSchema {
public:
    static RubricSchema default_schema();
    static RubricSchema from_json(const nlohmann::json& j);
    static RubricSchema from_file(const std::filesystem::path& path);

    const std::vector<Category>& categories() const { return categories_; }
    const Category* find(std::string_view name) const;
    const Category& by_severity(int severity) const;

    nlohmann::json to_json() const;
    std::string schema_text() const; // serialized form shared with the remote side

private:
    explicit RubricSchema(std::vector<Category> categories);
    void validate() const;

    std::vector<Category> categories_; // sorted by descending severity
};

struct RubricState {
    bool matched = false;
    std::string category;
    int severity = 0;
    std::string reason;

    bool operator==(const RubricState&) const = default;
};

nlohmann::json rubric_state_to_json(const RubricState& state);

struct RemoteAdvisory {
    std::vector<std::string> transition_candidates;
    std::string transition_guidance;
    std::string transition_reasoning;
};

// Rule-cascade thresholds. Configuration, not code constants: the run
// config can override any of them.
struct RuleThresholds {
    // severity 5
    int s5_sofa_cardiovascular = 4;
    double s5_map_low60_minutes = 30;
    // severity 4
    int s4_sofa_total = 10;
    double s4_map_low60_minutes = 15;
    // severity 3
    double s3_map_low65_minutes = 30;
    double s3_lactate = 2.0;
    // severity 2: any single moderate abnormality
    double s2_map_median = 60;
    double s2_map_low65_minutes = 15;
    int s2_sofa_total = 6;
    double s2_hr_high = 120;
    double s2_hr_low = 45;
    double s2_norepi = 0;  // strictly greater than
    double s2_urine = 0.5; // strictly less than
    double s2_spo2 = 92;   // strictly less than
    double s2_wbc_high = 15;
    double s2_wbc_low = 4; // strictly less than
    double s2_temp_high = 38.5;
    double s2_temp_low = 36.0;
    std::string normal_rhythm = "SR";
};

nlohmann::json rule_thresholds_to_json(const RuleThresholds& rules);
RuleThresholds rule_thresholds_from_json(const nlohmann::json& j);

// Deterministic rule cascade over whatever features are available;
// highest matching severity wins, otherwise fallback to the severity-1
// category. Missing features never fire a rule.
RubricState assign_initial_state(const cohort::FeatureMap& features,
                                 const RubricSchema& schema,
                                 const RuleThresholds& rules);

// Identical cascade over the post-retrieval feature set.
RubricState recompute_state(const cohort::FeatureMap& features_after_retrieval,
                            const RubricSchema& schema, const RuleThresholds& rules);

struct MergeOutcome {
    RubricState state;
    std::vector<std::string> dropped_candidates; // advisory names absent from the schema
};

// Bounded state update: no-op when the local category is among the
// candidates (or the candidate list is empty); otherwise move exactly one
// severity step toward the nearest candidate severity, ties toward higher
// severity. Unknown candidate names are dropped. The merged reason carries
// the "[REMOTE_CANDIDATE_MERGE]" marker.
MergeOutcome constrained_merge(const RubricState& local, const RemoteAdvisory& advisory,
                               const RubricSchema& schema);

inline constexpr std::string_view kMergeMarker = "[REMOTE_CANDIDATE_MERGE]";
inline constexpr std::string_view kFallbackReason =
    "Fallback to VERY_LIKELY_STABLE (No specific threshold met).";

} // namespace care::rubric
