#include "care/rubric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "care/common.hpp"

namespace care::rubric {

namespace {

std::vector<ClinicalDomain> domains(std::initializer_list<ClinicalDomain> list) {
    return std::vector<ClinicalDomain>(list);
}

std::optional<double> numeric(const cohort::FeatureMap& features, FeatureKey key) {
    const auto it = features.find(key);
    if (it == features.end()) return std::nullopt;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    return std::nullopt;
}

std::optional<std::string> text(const cohort::FeatureMap& features, FeatureKey key) {
    const auto it = features.find(key);
    if (it == features.end()) return std::nullopt;
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    return std::nullopt;
}

bool stage_inputs_all_missing(const cohort::FeatureMap& features) {
    for (const auto& [key, value] : features) {
        if (std::holds_alternative<bool>(value)) continue; // coverage flag alone is vacuous
        if (!is_missing(value)) return false;
    }
    return true;
}

RubricState make_state(const Category& category, bool matched, std::string reason) {
    return RubricState{matched, category.name, category.severity, std::move(reason)};
}

} // namespace

RubricSchema::RubricSchema(std::vector<Category> categories)
    : categories_(std::move(categories)) {
    std::sort(categories_.begin(), categories_.end(),
              [](const Category& a, const Category& b) { return a.severity > b.severity; });
    validate();
}

void RubricSchema::validate() const {
    if (categories_.size() != 5) {
        throw ValidationError("rubric schema must define exactly five categories");
    }
    std::set<int> severities;
    std::set<std::string> names;
    for (const auto& c : categories_) {
        if (c.name.empty()) throw ValidationError("rubric category name must be nonempty");
        if (c.severity < 1 || c.severity > 5) {
            throw ValidationError("rubric severity out of range for " + c.name);
        }
        if (!severities.insert(c.severity).second) {
            throw ValidationError("duplicate rubric severity " + std::to_string(c.severity));
        }
        if (!names.insert(c.name).second) {
            throw ValidationError("duplicate rubric category name " + c.name);
        }
    }
}

RubricSchema RubricSchema::default_schema() {
    std::vector<Category> categories;
    categories.push_back({"VERY_LIKELY_WORSENING", 5,
                          "Active deterioration supported by abnormal findings across "
                          "several objective domains.",
                          domains({ClinicalDomain::Hemodynamic, ClinicalDomain::Pressor,
                                   ClinicalDomain::Sofa, ClinicalDomain::Perfusion})});
    categories.push_back({"LIKELY_WORSENING", 4,
                          "High concern for deterioration with incomplete cross-domain "
                          "confirmation.",
                          domains({ClinicalDomain::Hemodynamic, ClinicalDomain::Sofa,
                                   ClinicalDomain::Perfusion, ClinicalDomain::Renal})});
    categories.push_back({"POTENTIAL_OCCULT_SHOCK", 3,
                          "Reassuring bedside presentation, but objective deviations point "
                          "to possible occult instability.",
                          domains({ClinicalDomain::Hemodynamic, ClinicalDomain::Perfusion,
                                   ClinicalDomain::Renal, ClinicalDomain::Pressor})});
    categories.push_back({"LIKELY_STABLE", 2,
                          "No strong indication of active deterioration, though limited "
                          "abnormalities may be present.",
                          domains({ClinicalDomain::Hemodynamic, ClinicalDomain::Perfusion})});
    categories.push_back({"VERY_LIKELY_STABLE", 1,
                          "Calm bedside presentation without objective evidence of "
                          "deterioration.",
                          domains({ClinicalDomain::Hemodynamic, ClinicalDomain::Monitoring})});
    return RubricSchema(std::move(categories));
}

RubricSchema RubricSchema::from_json(const nlohmann::json& j) {
    if (!j.contains("rubric_schema") || !j.at("rubric_schema").is_array()) {
        throw ValidationError("rubric schema document must contain a rubric_schema array");
    }
    std::vector<Category> categories;
    for (const auto& item : j.at("rubric_schema")) {
        Category c;
        c.name = item.at("name").get<std::string>();
        c.severity = item.at("severity").get<int>();
        c.description = item.value("description", std::string());
        if (item.contains("evidence_requirements")) {
            for (const auto& d : item.at("evidence_requirements")) {
                const auto domain = domain_from_name(d.get<std::string>());
                if (!domain) {
                    throw ValidationError("unknown clinical domain in rubric: " + d.dump());
                }
                c.evidence_requirements.push_back(*domain);
            }
        }
        categories.push_back(std::move(c));
    }
    return RubricSchema(std::move(categories));
}

RubricSchema RubricSchema::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open rubric schema: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed rubric schema " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

const Category* RubricSchema::find(std::string_view name) const {
    for (const auto& c : categories_) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

const Category& RubricSchema::by_severity(int severity) const {
    for (const auto& c : categories_) {
        if (c.severity == severity) return c;
    }
    throw ValidationError("no rubric category with severity " + std::to_string(severity));
}

nlohmann::json RubricSchema::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : categories_) {
        nlohmann::json reqs = nlohmann::json::array();
        for (const auto d : c.evidence_requirements) reqs.push_back(std::string(domain_name(d)));
        arr.push_back({{"name", c.name},
                       {"severity", c.severity},
                       {"description", c.description},
                       {"evidence_requirements", reqs}});
    }
    return nlohmann::json{{"rubric_schema", arr}};
}

std::string RubricSchema::schema_text() const { return to_json().dump(2); }

nlohmann::json rubric_state_to_json(const RubricState& state) {
    return nlohmann::json{{"matched", state.matched},
                          {"category", state.category},
                          {"severity", state.severity},
                          {"reason", state.reason}};
}

nlohmann::json rule_thresholds_to_json(const RuleThresholds& r) {
    return nlohmann::json{
        {"s5_sofa_cardiovascular", r.s5_sofa_cardiovascular},
        {"s5_map_low60_minutes", r.s5_map_low60_minutes},
        {"s4_sofa_total", r.s4_sofa_total},
        {"s4_map_low60_minutes", r.s4_map_low60_minutes},
        {"s3_map_low65_minutes", r.s3_map_low65_minutes},
        {"s3_lactate", r.s3_lactate},
        {"s2_map_median", r.s2_map_median},
        {"s2_map_low65_minutes", r.s2_map_low65_minutes},
        {"s2_sofa_total", r.s2_sofa_total},
        {"s2_hr_high", r.s2_hr_high},
        {"s2_hr_low", r.s2_hr_low},
        {"s2_norepi", r.s2_norepi},
        {"s2_urine", r.s2_urine},
        {"s2_spo2", r.s2_spo2},
        {"s2_wbc_high", r.s2_wbc_high},
        {"s2_wbc_low", r.s2_wbc_low},
        {"s2_temp_high", r.s2_temp_high},
        {"s2_temp_low", r.s2_temp_low},
        {"normal_rhythm", r.normal_rhythm},
    };
}

RuleThresholds rule_thresholds_from_json(const nlohmann::json& j) {
    RuleThresholds r;
    r.s5_sofa_cardiovascular = j.value("s5_sofa_cardiovascular", r.s5_sofa_cardiovascular);
    r.s5_map_low60_minutes = j.value("s5_map_low60_minutes", r.s5_map_low60_minutes);
    r.s4_sofa_total = j.value("s4_sofa_total", r.s4_sofa_total);
    r.s4_map_low60_minutes = j.value("s4_map_low60_minutes", r.s4_map_low60_minutes);
    r.s3_map_low65_minutes = j.value("s3_map_low65_minutes", r.s3_map_low65_minutes);
    r.s3_lactate = j.value("s3_lactate", r.s3_lactate);
    r.s2_map_median = j.value("s2_map_median", r.s2_map_median);
    r.s2_map_low65_minutes = j.value("s2_map_low65_minutes", r.s2_map_low65_minutes);
    r.s2_sofa_total = j.value("s2_sofa_total", r.s2_sofa_total);
    r.s2_hr_high = j.value("s2_hr_high", r.s2_hr_high);
    r.s2_hr_low = j.value("s2_hr_low", r.s2_hr_low);
    r.s2_norepi = j.value("s2_norepi", r.s2_norepi);
    r.s2_urine = j.value("s2_urine", r.s2_urine);
    r.s2_spo2 = j.value("s2_spo2", r.s2_spo2);
    r.s2_wbc_high = j.value("s2_wbc_high", r.s2_wbc_high);
    r.s2_wbc_low = j.value("s2_wbc_low", r.s2_wbc_low);
    r.s2_temp_high = j.value("s2_temp_high", r.s2_temp_high);
    r.s2_temp_low = j.value("s2_temp_low", r.s2_temp_low);
    r.normal_rhythm = j.value("normal_rhythm", r.normal_rhythm);
    return r;
}

RubricState assign_initial_state(const cohort::FeatureMap& features,
                                 const RubricSchema& schema, const RuleThresholds& rules) {
    const auto sofa_cardio = numeric(features, FeatureKey::SofaCardiovascular);
    const auto sofa_total = numeric(features, FeatureKey::SofaTotal);
    const auto map_low60 = numeric(features, FeatureKey::MapLowMinutesLast1hThr60);
    const auto map_low65 = numeric(features, FeatureKey::MapLowMinutesLast1hThr65);
    const auto map_median = numeric(features, FeatureKey::MapMedianLast1h);
    const auto hr = numeric(features, FeatureKey::HrMedianLast1h);
    const auto lactate = numeric(features, FeatureKey::LactateLatest6h);
    const auto norepi = numeric(features, FeatureKey::NorepiEqDoseMax1h);
    const auto urine = numeric(features, FeatureKey::UrineOutputMlkghr6h);
    const auto spo2 = numeric(features, FeatureKey::Spo2Latest1h);
    const auto wbc = numeric(features, FeatureKey::WbcLatest24h);
    const auto temp = numeric(features, FeatureKey::TemperatureLatest4h);
    const auto rhythm = text(features, FeatureKey::RhythmRecent6h);

    if (sofa_cardio && map_low60 && *sofa_cardio >= rules.s5_sofa_cardiovascular &&
        *map_low60 >= rules.s5_map_low60_minutes) {
        return make_state(schema.by_severity(5), true,
                          "Matched " + schema.by_severity(5).name +
                              " (cardiovascular SOFA at ceiling with sustained MAP<60 burden).");
    }
    if (sofa_total && *sofa_total >= rules.s4_sofa_total) {
        return make_state(schema.by_severity(4), true,
                          "Matched " + schema.by_severity(4).name + " (high total SOFA).");
    }
    if (map_low60 && *map_low60 >= rules.s4_map_low60_minutes) {
        return make_state(schema.by_severity(4), true,
                          "Matched " + schema.by_severity(4).name +
                              " (sustained MAP<60 burden).");
    }
    if (map_low65 && *map_low65 >= rules.s3_map_low65_minutes) {
        return make_state(schema.by_severity(3), true,
                          "Matched " + schema.by_severity(3).name +
                              " (sustained MAP<65 burden).");
    }
    if (lactate && *lactate >= rules.s3_lactate) {
        return make_state(schema.by_severity(3), true,
                          "Matched " + schema.by_severity(3).name + " (elevated lactate).");
    }

    std::string moderate;
    if (map_median && *map_median < rules.s2_map_median) {
        moderate = "low MAP median";
    } else if (map_low65 && *map_low65 >= rules.s2_map_low65_minutes) {
        moderate = "notable MAP<65 burden";
    } else if (sofa_total && *sofa_total >= rules.s2_sofa_total) {
        moderate = "elevated total SOFA";
    } else if (hr && (*hr >= rules.s2_hr_high || *hr <= rules.s2_hr_low)) {
        moderate = "abnormal heart rate";
    } else if (norepi && *norepi > rules.s2_norepi) {
        moderate = "active vasopressor support";
    } else if (urine && *urine < rules.s2_urine) {
        moderate = "low urine output";
    } else if (spo2 && *spo2 < rules.s2_spo2) {
        moderate = "low oxygen saturation";
    } else if (wbc && (*wbc >= rules.s2_wbc_high || *wbc < rules.s2_wbc_low)) {
        moderate = "abnormal white cell count";
    } else if (temp && (*temp >= rules.s2_temp_high || *temp <= rules.s2_temp_low)) {
        moderate = "abnormal temperature";
    } else if (rhythm && *rhythm != rules.normal_rhythm) {
        moderate = "abnormal rhythm";
    }
    if (!moderate.empty()) {
        return make_state(schema.by_severity(2), true,
                          "Matched " + schema.by_severity(2).name + " (" + moderate + ").");
    }

    if (stage_inputs_all_missing(features)) {
        return make_state(schema.by_severity(1), false,
                          "Fallback to " + schema.by_severity(1).name +
                              " (missing inputs; no rule evaluable).");
    }
    return make_state(schema.by_severity(1), true,
                      "Fallback to " + schema.by_severity(1).name +
                          " (No specific threshold met).");
}

RubricState recompute_state(const cohort::FeatureMap& features_after_retrieval,
                            const RubricSchema& schema, const RuleThresholds& rules) {
    return assign_initial_state(features_after_retrieval, schema, rules);
}

MergeOutcome constrained_merge(const RubricState& local, const RemoteAdvisory& advisory,
                               const RubricSchema& schema) {
    MergeOutcome outcome;
    std::vector<int> candidate_severities;
    bool local_is_candidate = false;
    for (const auto& name : advisory.transition_candidates) {
        const Category* category = schema.find(name);
        if (!category) {
            outcome.dropped_candidates.push_back(name);
            continue;
        }
        candidate_severities.push_back(category->severity);
        if (name == local.category) local_is_candidate = true;
    }

    if (candidate_severities.empty() || local_is_candidate) {
        outcome.state = local;
        return outcome;
    }

    // Nearest candidate severity; ties resolve toward higher severity.
    int target = candidate_severities.front();
    for (const int s : candidate_severities) {
        const int d_s = std::abs(s - local.severity);
        const int d_t = std::abs(target - local.severity);
        if (d_s < d_t || (d_s == d_t && s > target)) target = s;
    }
    const int step = target > local.severity ? 1 : -1;
    const Category& merged = schema.by_severity(local.severity + step);

    outcome.state = local;
    outcome.state.category = merged.name;
    outcome.state.severity = merged.severity;
    outcome.state.reason = local.reason + " " + std::string(kMergeMarker) +
                           " Moved one severity step toward the remote transition "
                           "candidates (" +
                           local.category + " -> " + merged.name + ").";
    return outcome;
}

} // namespace care::rubric
