#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace care {

// How a feature reaches a workflow: subjective bedside inputs and a small
// direct objective snapshot are visible up front; the remaining objective
// features are exposed only through the structured fact-key interface.
enum class Exposure {
    SubjectiveDirect,
    ObjectiveDirect,
    ObjectiveRetrievable,
};

enum class ClinicalDomain {
    Hemodynamic,
    Monitoring,
    Sofa,
    Perfusion,
    Renal,
    Pressor,
    Oxygenation,
    General,
    Inflammation,
    Rhythm,
    Pain,
    Sedation,
};

// The shared 22-feature universe, in canonical rendering order.
enum class FeatureKey {
    PainMaxLast1h,
    RassWindowLast1h,
    HrMedianLast1h,
    MapMedianLast1h,
    MapLowMinutesLast1hThr65,
    MapLowMinutesLast1hThr60,
    HasMapCoverageLast1h,
    SofaTotal,
    SofaCardiovascular,
    MapCoveredMinutesLast1h,
    LactateLatest6h,
    UrineOutputMlkghr6h,
    NorepiEqDoseMax1h,
    SofaResp,
    SofaCoag,
    SofaLiver,
    SofaCns,
    SofaRenal,
    Spo2Latest1h,
    TemperatureLatest4h,
    WbcLatest24h,
    RhythmRecent6h,
};

inline constexpr std::size_t kFeatureCount = 22;

std::span<const FeatureKey> all_feature_keys();
std::string_view feature_name(FeatureKey key);
std::optional<FeatureKey> feature_from_name(std::string_view name);
Exposure feature_exposure(FeatureKey key);
ClinicalDomain feature_domain(FeatureKey key);
std::vector<FeatureKey> keys_with_exposure(Exposure exposure);

std::string_view domain_name(ClinicalDomain domain);
std::optional<ClinicalDomain> domain_from_name(std::string_view name);

// Range-and-count summary of the prior-hour RASS observations.
struct RassWindow {
    int max = 0;
    int min = 0;
    int n = 0;

    bool operator==(const RassWindow&) const = default;
};

// A feature value; monostate marks MISSING (never a default number).
using FeatureValue = std::variant<std::monostate, double, bool, std::string, RassWindow>;

bool is_missing(const FeatureValue& v);
bool feature_value_equal(const FeatureValue& a, const FeatureValue& b);

// Text form used in prompts and fact reports; MISSING renders as "N/A".
std::string render_feature_value(const FeatureValue& v);

nlohmann::json feature_value_to_json(const FeatureValue& v);
FeatureValue feature_value_from_json(const nlohmann::json& j);

// Taint level of a piece of data. Every patient-derived value is
// SensitivePatient; names, schema text and category labels are metadata.
enum class Sensitivity {
    SensitivePatient,
    TaskMetadata,
};

struct TaggedValue {
    FeatureValue value;
    Sensitivity sensitivity = Sensitivity::SensitivePatient;
};

enum class Label { Positive, Negative };

std::string_view label_name(Label label);
std::optional<Label> label_from_name(std::string_view name);

// One benchmark case: a (stay, evaluation hour) pair with its full
// 22-feature vector and binary label.
struct Sample {
    std::string stay_id;
    int t_eval = 0;
    std::map<FeatureKey, TaggedValue> features;
    Label label = Label::Negative;

    std::string id() const;
    const FeatureValue& value(FeatureKey key) const;
    bool has(FeatureKey key) const;
};

nlohmann::json sample_to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);

// The flat evidence block shared by all workflows. Byte-identical for a
// given sample regardless of which workflow renders it.
std::string render_feature_block(const Sample& sample);

} // namespace care
