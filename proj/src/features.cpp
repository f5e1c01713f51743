#include "care/features.hpp"

#include <array>
#include <sstream>

#include "care/common.hpp"

namespace care {

namespace {

struct FeatureInfo {
    FeatureKey key;
    std::string_view name;
    Exposure exposure;
    ClinicalDomain domain;
};

constexpr std::array<FeatureInfo, kFeatureCount> kFeatureTable = {{
    {FeatureKey::PainMaxLast1h, "pain_max_last1h", Exposure::SubjectiveDirect, ClinicalDomain::Pain},
    {FeatureKey::RassWindowLast1h, "rass_window_last1h", Exposure::SubjectiveDirect, ClinicalDomain::Sedation},
    {FeatureKey::HrMedianLast1h, "hr_median_last1h", Exposure::ObjectiveDirect, ClinicalDomain::Hemodynamic},
    {FeatureKey::MapMedianLast1h, "map_median_last1h", Exposure::ObjectiveDirect, ClinicalDomain::Hemodynamic},
    {FeatureKey::MapLowMinutesLast1hThr65, "map_low_minutes_last1h_thr65", Exposure::ObjectiveDirect, ClinicalDomain::Hemodynamic},
    {FeatureKey::MapLowMinutesLast1hThr60, "map_low_minutes_last1h_thr60", Exposure::ObjectiveDirect, ClinicalDomain::Hemodynamic},
    {FeatureKey::HasMapCoverageLast1h, "has_map_coverage_last1h", Exposure::ObjectiveDirect, ClinicalDomain::Monitoring},
    {FeatureKey::SofaTotal, "sofa_total", Exposure::ObjectiveDirect, ClinicalDomain::Sofa},
    {FeatureKey::SofaCardiovascular, "sofa_cardiovascular", Exposure::ObjectiveDirect, ClinicalDomain::Sofa},
    {FeatureKey::MapCoveredMinutesLast1h, "map_covered_minutes_last1h", Exposure::ObjectiveRetrievable, ClinicalDomain::Monitoring},
    {FeatureKey::LactateLatest6h, "lactate_latest_6h", Exposure::ObjectiveRetrievable, ClinicalDomain::Perfusion},
    {FeatureKey::UrineOutputMlkghr6h, "urine_output_mlkghr_6h", Exposure::ObjectiveRetrievable, ClinicalDomain::Renal},
    {FeatureKey::NorepiEqDoseMax1h, "norepi_eq_dose_max_1h", Exposure::ObjectiveRetrievable, ClinicalDomain::Pressor},
    {FeatureKey::SofaResp, "sofa_resp", Exposure::ObjectiveRetrievable, ClinicalDomain::Sofa},
    {FeatureKey::SofaCoag, "sofa_coag", Exposure::ObjectiveRetrievable, ClinicalDomain::Sofa},
    {FeatureKey::SofaLiver, "sofa_liver", Exposure::ObjectiveRetrievable, ClinicalDomain::Sofa},
    {FeatureKey::SofaCns, "sofa_cns", Exposure::ObjectiveRetrievable, ClinicalDomain::Sofa},
    {FeatureKey::SofaRenal, "sofa_renal", Exposure::ObjectiveRetrievable, ClinicalDomain::Sofa},
    {FeatureKey::Spo2Latest1h, "spo2_latest_1h", Exposure::ObjectiveRetrievable, ClinicalDomain::Oxygenation},
    {FeatureKey::TemperatureLatest4h, "temperature_latest_4h", Exposure::ObjectiveRetrievable, ClinicalDomain::General},
    {FeatureKey::WbcLatest24h, "wbc_latest_24h", Exposure::ObjectiveRetrievable, ClinicalDomain::Inflammation},
    {FeatureKey::RhythmRecent6h, "rhythm_recent_6h", Exposure::ObjectiveRetrievable, ClinicalDomain::Rhythm},
}};

constexpr std::array<std::pair<ClinicalDomain, std::string_view>, 12> kDomainNames = {{
    {ClinicalDomain::Hemodynamic, "HEMODYNAMIC"},
    {ClinicalDomain::Monitoring, "MONITORING"},
    {ClinicalDomain::Sofa, "SOFA"},
    {ClinicalDomain::Perfusion, "PERFUSION"},
    {ClinicalDomain::Renal, "RENAL"},
    {ClinicalDomain::Pressor, "PRESSOR"},
    {ClinicalDomain::Oxygenation, "OXYGENATION"},
    {ClinicalDomain::General, "GENERAL"},
    {ClinicalDomain::Inflammation, "INFLAMMATION"},
    {ClinicalDomain::Rhythm, "RHYTHM"},
    {ClinicalDomain::Pain, "PAIN"},
    {ClinicalDomain::Sedation, "SEDATION"},
}};

const FeatureInfo& info(FeatureKey key) {
    return kFeatureTable[static_cast<std::size_t>(key)];
}

const FeatureValue kMissingValue{};

} // namespace

std::span<const FeatureKey> all_feature_keys() {
    static const std::array<FeatureKey, kFeatureCount> keys = [] {
        std::array<FeatureKey, kFeatureCount> out{};
        for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = kFeatureTable[i].key;
        return out;
    }();
    return keys;
}

std::string_view feature_name(FeatureKey key) { return info(key).name; }

std::optional<FeatureKey> feature_from_name(std::string_view name) {
    for (const auto& f : kFeatureTable) {
        if (f.name == name) return f.key;
    }
    return std::nullopt;
}

Exposure feature_exposure(FeatureKey key) { return info(key).exposure; }

ClinicalDomain feature_domain(FeatureKey key) { return info(key).domain; }

std::vector<FeatureKey> keys_with_exposure(Exposure exposure) {
    std::vector<FeatureKey> out;
    for (const auto& f : kFeatureTable) {
        if (f.exposure == exposure) out.push_back(f.key);
    }
    return out;
}

std::string_view domain_name(ClinicalDomain domain) {
    for (const auto& [d, n] : kDomainNames) {
        if (d == domain) return n;
    }
    return "UNKNOWN";
}

std::optional<ClinicalDomain> domain_from_name(std::string_view name) {
    for (const auto& [d, n] : kDomainNames) {
        if (n == name) return d;
    }
    return std::nullopt;
}

bool is_missing(const FeatureValue& v) {
    return std::holds_alternative<std::monostate>(v);
}

bool feature_value_equal(const FeatureValue& a, const FeatureValue& b) {
    return a == b;
}

std::string render_feature_value(const FeatureValue& v) {
    if (std::holds_alternative<std::monostate>(v)) return "N/A";
    if (const auto* d = std::get_if<double>(&v)) return render_number(*d);
    if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    const auto& w = std::get<RassWindow>(v);
    std::ostringstream os;
    os << "max=" << w.max << " min=" << w.min << " n=" << w.n;
    return os.str();
}

nlohmann::json feature_value_to_json(const FeatureValue& v) {
    if (std::holds_alternative<std::monostate>(v)) return nullptr;
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    const auto& w = std::get<RassWindow>(v);
    return nlohmann::json{{"max", w.max}, {"min", w.min}, {"n", w.n}};
}

FeatureValue feature_value_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::monostate{};
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object() && j.contains("max") && j.contains("min") && j.contains("n")) {
        return RassWindow{j.at("max").get<int>(), j.at("min").get<int>(), j.at("n").get<int>()};
    }
    throw ValidationError("unsupported feature value encoding: " + j.dump());
}

std::string_view label_name(Label label) {
    return label == Label::Positive ? "POSITIVE" : "NEGATIVE";
}

std::optional<Label> label_from_name(std::string_view name) {
    if (name == "POSITIVE") return Label::Positive;
    if (name == "NEGATIVE") return Label::Negative;
    return std::nullopt;
}

std::string Sample::id() const {
    return stay_id + "#" + std::to_string(t_eval);
}

const FeatureValue& Sample::value(FeatureKey key) const {
    const auto it = features.find(key);
    if (it == features.end()) return kMissingValue;
    return it->second.value;
}

bool Sample::has(FeatureKey key) const {
    const auto it = features.find(key);
    return it != features.end() && !is_missing(it->second.value);
}

nlohmann::json sample_to_json(const Sample& sample) {
    nlohmann::json features = nlohmann::json::object();
    for (const FeatureKey key : all_feature_keys()) {
        features[std::string(feature_name(key))] = feature_value_to_json(sample.value(key));
    }
    return nlohmann::json{
        {"stay_id", sample.stay_id},
        {"t_eval", sample.t_eval},
        {"features", features},
        {"label", std::string(label_name(sample.label))},
    };
}

Sample sample_from_json(const nlohmann::json& j) {
    Sample sample;
    sample.stay_id = j.at("stay_id").get<std::string>();
    sample.t_eval = j.at("t_eval").get<int>();
    const auto label = label_from_name(j.at("label").get<std::string>());
    if (!label) throw ValidationError("unknown label in sample: " + j.at("label").dump());
    sample.label = *label;
    const auto& features = j.at("features");
    for (const FeatureKey key : all_feature_keys()) {
        const std::string name(feature_name(key));
        if (!features.contains(name)) {
            throw ValidationError("sample " + sample.id() + " is missing feature key " + name);
        }
        sample.features[key] = TaggedValue{feature_value_from_json(features.at(name)),
                                           Sensitivity::SensitivePatient};
    }
    return sample;
}

std::string render_feature_block(const Sample& sample) {
    std::ostringstream os;
    for (const FeatureKey key : all_feature_keys()) {
        os << "- " << feature_name(key) << ": " << render_feature_value(sample.value(key))
           << "\n";
    }
    return os.str();
}

} // namespace care
