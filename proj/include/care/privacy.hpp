#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/features.hpp"
#include "care/rubric.hpp"

namespace care::privacy {

// A piece of text with its taint level. Feature names, category names and
// schema text are metadata; anything rendered from a patient value is not.
struct TaggedItem {
    std::string text;
    Sensitivity sensitivity = Sensitivity::SensitivePatient;

    static TaggedItem metadata(std::string text) {
        return TaggedItem{std::move(text), Sensitivity::TaskMetadata};
    }
    static TaggedItem patient(std::string text) {
        return TaggedItem{std::move(text), Sensitivity::SensitivePatient};
    }
    static TaggedItem from_feature_key(FeatureKey key) {
        return metadata(std::string(feature_name(key)));
    }
    static TaggedItem from_feature_value(const FeatureValue& value) {
        return patient(render_feature_value(value));
    }
};

// The only data shape that may leave the local boundary: category name,
// evidence-type names, the shared schema text, and a fixed task
// description. Not constructible from patient values.
struct RemotePayload {
    std::string current_category;
    std::vector<std::string> available_feature_keys;
    std::string rubric_schema;
    std::string task_description;

    nlohmann::json to_json() const;
    std::string serialize() const;
};

// Builds the stage-3 payload. Every input must carry TaskMetadata
// sensitivity; a SensitivePatient item refuses the call with a
// PrivacyViolationError naming the offending text.
RemotePayload build_remote_payload(const rubric::RubricState& state,
                                   std::span<const TaggedItem> evidence_keys,
                                   const rubric::RubricSchema& schema,
                                   const std::string& task_description);

// The canonical token renderings of one sample's patient values, used by
// the serialization-time scan. Boolean values are excluded (no token of a
// JSON payload can distinguish them) and plain integers in the severity
// range 1..5 are exempted as schema constants; the type gate remains the
// primary defense for both.
class SensitiveCorpus {
public:
    static SensitiveCorpus from_sample(const Sample& sample);

    void add_value(const FeatureValue& value);
    void add_token(std::string token);
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
};

struct ScanResult {
    bool clean = true;
    std::string detail; // offending token when not clean

    static ScanResult ok() { return {true, ""}; }
    static ScanResult violation(std::string detail) { return {false, std::move(detail)}; }
};

// VIOLATION iff any corpus token occurs in the payload as a standalone
// token (neighbours outside [A-Za-z0-9_.]).
ScanResult scan_outbound(std::string_view serialized_payload, const SensitiveCorpus& corpus);

enum class AuditDirection { ToRemote, ToLocal };

struct AuditEntry {
    std::string timestamp;
    AuditDirection direction = AuditDirection::ToRemote;
    std::string payload_digest;
    ScanResult scan_result;
};

// Append-only JSON-lines audit log; writes are serialized through one
// writer. The first line carries the producing config digest.
class AuditLog {
public:
    AuditLog() = default; // disabled (in-memory counting only)
    AuditLog(const std::filesystem::path& path, const std::string& config_digest);

    void record(AuditDirection direction, std::string_view payload_bytes,
                const ScanResult& scan);

    std::size_t to_remote_count() const;
    std::size_t violation_count() const;

private:
    mutable std::mutex mutex_;
    std::unique_ptr<std::ofstream> out_;
    std::size_t to_remote_ = 0;
    std::size_t violations_ = 0;
};

} // namespace care::privacy
