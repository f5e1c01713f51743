#include "care/privacy.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "care/common.hpp"

namespace care::privacy {

namespace {

bool token_boundary(char c) {
    return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.');
}

bool token_present(std::string_view payload, std::string_view token) {
    if (token.empty()) return false;
    std::size_t pos = 0;
    while ((pos = payload.find(token, pos)) != std::string_view::npos) {
        const bool left_ok = pos == 0 || token_boundary(payload[pos - 1]);
        const std::size_t end = pos + token.size();
        const bool right_ok = end == payload.size() || token_boundary(payload[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

bool severity_range_integer(std::string_view token) {
    return token.size() == 1 && token[0] >= '1' && token[0] <= '5';
}

} // namespace

nlohmann::json RemotePayload::to_json() const {
    return nlohmann::json{
        {"current_category", current_category},
        {"available_feature_keys", available_feature_keys},
        {"rubric_schema", rubric_schema},
        {"task_description", task_description},
    };
}

std::string RemotePayload::serialize() const { return to_json().dump(); }

RemotePayload build_remote_payload(const rubric::RubricState& state,
                                   std::span<const TaggedItem> evidence_keys,
                                   const rubric::RubricSchema& schema,
                                   const std::string& task_description) {
    if (!schema.find(state.category)) {
        throw ValidationError("remote payload state category not in schema: " +
                              state.category);
    }
    RemotePayload payload;
    payload.current_category = state.category;
    for (const auto& item : evidence_keys) {
        if (item.sensitivity != Sensitivity::TaskMetadata) {
            throw PrivacyViolationError(
                "refusing remote payload: input item is tagged SENSITIVE_PATIENT: \"" +
                item.text + "\"");
        }
        payload.available_feature_keys.push_back(item.text);
    }
    payload.rubric_schema = schema.schema_text();
    payload.task_description = task_description;
    return payload;
}

SensitiveCorpus SensitiveCorpus::from_sample(const Sample& sample) {
    SensitiveCorpus corpus;
    corpus.add_token(sample.stay_id);
    corpus.add_token(std::to_string(sample.t_eval));
    for (const auto& [key, tagged] : sample.features) {
        corpus.add_value(tagged.value);
    }
    return corpus;
}

void SensitiveCorpus::add_value(const FeatureValue& value) {
    if (std::holds_alternative<std::monostate>(value)) return;
    if (std::holds_alternative<bool>(value)) return;
    if (const auto* s = std::get_if<std::string>(&value)) {
        add_token(*s);
        return;
    }
    if (const auto* w = std::get_if<RassWindow>(&value)) {
        add_token(std::to_string(w->max));
        add_token(std::to_string(w->min));
        add_token(std::to_string(w->n));
        return;
    }
    const double v = std::get<double>(value);
    add_token(render_number(v));
    add_token(nlohmann::json(v).dump());
    if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 1e15) {
        // Both "64" and "64.0" spellings of an integral value.
        add_token(render_number(v) + ".0");
    }
}

void SensitiveCorpus::add_token(std::string token) {
    if (token.empty()) return;
    if (severity_range_integer(token)) return;
    for (const auto& existing : tokens_) {
        if (existing == token) return;
    }
    tokens_.push_back(std::move(token));
}

ScanResult scan_outbound(std::string_view serialized_payload, const SensitiveCorpus& corpus) {
    for (const auto& token : corpus.tokens()) {
        if (token_present(serialized_payload, token)) {
            return ScanResult::violation("sensitive token \"" + token +
                                         "\" found in outbound payload");
        }
    }
    return ScanResult::ok();
}

AuditLog::AuditLog(const std::filesystem::path& path, const std::string& config_digest) {
    out_ = std::make_unique<std::ofstream>(path);
    if (!*out_) throw ValidationError("cannot open audit log: " + path.string());
    const nlohmann::json header = {{"file_kind", "audit"}, {"config_digest", config_digest}};
    *out_ << header.dump() << "\n";
    out_->flush();
}

void AuditLog::record(AuditDirection direction, std::string_view payload_bytes,
                      const ScanResult& scan) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (direction == AuditDirection::ToRemote) ++to_remote_;
    if (!scan.clean) ++violations_;
    if (!out_) return;
    nlohmann::json entry = {
        {"timestamp", iso8601_utc_now()},
        {"direction", direction == AuditDirection::ToRemote ? "TO_REMOTE" : "TO_LOCAL"},
        {"payload_digest", fnv1a64_hex(payload_bytes)},
        {"scan_result", scan.clean ? "CLEAN" : "VIOLATION"},
    };
    if (!scan.clean) entry["detail"] = scan.detail;
    *out_ << entry.dump() << "\n";
    out_->flush();
}

std::size_t AuditLog::to_remote_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return to_remote_;
}

std::size_t AuditLog::violation_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return violations_;
}

} // namespace care::privacy
