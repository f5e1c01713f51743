#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/common.hpp"
#include "care/privacy.hpp"

namespace care::llm {

enum class BackendKind { Mock, Http };
enum class BackendRole { Local, Remote };

// Parsed form of a backend spec string: "mock:<script.json>" or
// "http:<url>#<model>". The role is assigned by the config slot the
// backend occupies and validated by the workflows.
struct BackendSpec {
    BackendKind kind = BackendKind::Mock;
    BackendRole role = BackendRole::Local;
    std::string endpoint;    // HTTP base URL
    std::string model;       // HTTP model identifier
    std::string script_path; // mock script file
    std::string display;     // original spec string, for reports

    static BackendSpec parse(const std::string& spec, BackendRole role);
};

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
    bool estimated = false; // true when the endpoint reported no usage

    long total() const { return prompt_tokens + completion_tokens; }
    Usage& operator+=(const Usage& other);
};

// Whitespace token count, the estimation fallback and the mock accounting.
long count_tokens(std::string_view text);

struct Completion {
    std::string text;
    Usage usage;
};

// Identifies a call for scripted/seeded mock lookup and logging.
struct CallContext {
    std::string sample_id;
    std::string stage;  // "acquisition", "advisory", "decision", "single", ...
    int round = 0;
    std::string agent;  // "A"/"B"/"C" for debate workflows, else empty
    int attempt = 0;    // repair attempts increment this
};

// RAII guard marking that the current thread is inside the privacy
// module's remote-payload path. Remote-role backends refuse completions
// issued outside such a scope.
class RemoteCallScope {
public:
    RemoteCallScope();
    ~RemoteCallScope();
    RemoteCallScope(const RemoteCallScope&) = delete;
    RemoteCallScope& operator=(const RemoteCallScope&) = delete;

    static bool active();
};

class WireLog;

class Backend {
public:
    virtual ~Backend() = default;

    const BackendSpec& spec() const { return spec_; }

    void set_wire_log(WireLog* log) { wire_log_ = log; }

    // Throws BackendError after exhausting retries; throws
    // PrivacyViolationError when a remote-role backend is driven outside
    // a RemoteCallScope.
    Completion complete(const std::string& prompt, const CallContext& ctx);

protected:
    explicit Backend(BackendSpec spec) : spec_(std::move(spec)) {}
    virtual Completion complete_impl(const std::string& prompt, const CallContext& ctx) = 0;

private:
    BackendSpec spec_;
    WireLog* wire_log_ = nullptr;
};

// Deterministic test backend. Script files support two modes:
//   {"mode":"script","responses":[{"sample_id":...,"stage":...,"round":...,
//    "agent":...,"attempt":...,"text":...}, ...],"default":"..."}
// where omitted key fields act as wildcards and same-key entries are
// consumed FIFO; and
//   {"mode":"seeded","seed":N, "acquire_probability":p,
//    "action_weights":{...},"constant_action":"...","malformed_rate":p,
//    "confidence_min":a,"confidence_max":b}
// which synthesizes schema-valid stage outputs from a hash of
// (sample_id, stage, round, agent, attempt, seed), so runs are
// bit-reproducible regardless of scheduling. The sentinel response text
// "__FAIL__" raises BackendError (for failure-path tests).
class MockBackend : public Backend {
public:
    explicit MockBackend(BackendSpec spec);
    MockBackend(BackendSpec spec, const nlohmann::json& script);

protected:
    Completion complete_impl(const std::string& prompt, const CallContext& ctx) override;

private:
    struct ScriptEntry {
        std::optional<std::string> sample_id;
        std::optional<std::string> stage;
        std::optional<int> round;
        std::optional<std::string> agent;
        std::optional<int> attempt;
        std::string text;
        bool consumed = false;
    };

    void init_from_json(const nlohmann::json& script);
    std::string seeded_response(const CallContext& ctx);
    std::string scripted_response(const CallContext& ctx);

    bool seeded_ = false;
    std::uint64_t seed_ = 0;
    double acquire_probability_ = 0.85;
    double malformed_rate_ = 0.0;
    int confidence_min_ = 40;
    int confidence_max_ = 95;
    std::optional<std::string> constant_action_;
    std::vector<std::pair<std::string, double>> action_weights_;
    std::vector<ScriptEntry> entries_;
    std::optional<std::string> default_text_;
    std::mutex mutex_;
};

// Minimal chat-completion client: POSTs {model, messages, temperature} to
// <endpoint>/v1/chat/completions and reads choices[0].message.content plus
// usage; falls back to whitespace counting (flagged estimated) when usage
// is absent. Retries transport errors and 5xx up to `retries` times.
class HttpBackend : public Backend {
public:
    HttpBackend(BackendSpec spec, double temperature, int retries, int timeout_seconds,
                int max_in_flight);

protected:
    Completion complete_impl(const std::string& prompt, const CallContext& ctx) override;

private:
    double temperature_;
    int retries_;
    int timeout_seconds_;
    std::unique_ptr<class InFlightLimiter> limiter_;
};

struct BackendOptions {
    double temperature = 0.0;
    int retries = 2;
    int timeout_seconds = 120;
    int max_in_flight = 8;
};

std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const BackendOptions& options);

// Redacting wire log: remote-bound bodies are stored verbatim (they are
// scanned clean by construction), local-bound bodies only as digests.
class WireLog {
public:
    WireLog() = default;
    WireLog(const std::filesystem::path& path, const std::string& config_digest);

    void record(const BackendSpec& spec, const CallContext& ctx, std::string_view request,
                std::string_view response);

private:
    std::mutex mutex_;
    std::unique_ptr<std::ofstream> out_;
};

// The single place where a remote-role backend may be driven: renders the
// remote prompt from a RemotePayload, scans it against the sample's
// sensitive corpus, writes audit entries, and only then completes.
// A scan violation refuses the call (PrivacyViolationError) after logging.
Completion advise_remote(Backend& backend, const privacy::RemotePayload& payload,
                         const privacy::SensitiveCorpus& corpus, privacy::AuditLog& audit,
                         const CallContext& ctx);

// Renders the stage-3 remote prompt for a payload (exposed for tests).
std::string render_remote_prompt(const privacy::RemotePayload& payload);

} // namespace care::llm
