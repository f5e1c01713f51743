#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "care/engine.hpp"
#include "care/llm.hpp"
#include "care/rubric.hpp"

namespace care::config {

struct BackendSlot {
    std::string spec; // "mock:<script>" or "http:<url>#<model>"
    llm::BackendRole role = llm::BackendRole::Local;
};

// Effective run configuration. Precedence: CLI flag > config file >
// built-in default; the CLI layer applies its overrides after from_file.
struct RunConfig {
    std::string workflow = "care";
    std::uint64_t seed = 0;
    int jobs = 1;
    double temperature = 0.0;
    int retries = 2;
    int timeout_seconds = 120;
    int max_in_flight = 8;
    int max_acquisition_rounds = 3;
    int max_repair_attempts = 1;
    bool no_stage1 = false;
    bool no_stage3 = false;

    std::string rubric_path; // empty: embedded default schema
    engine::GateConfig gate;
    rubric::RuleThresholds rules;

    std::optional<BackendSlot> local;
    std::optional<BackendSlot> remote;
    std::optional<BackendSlot> agent_a;
    std::optional<BackendSlot> agent_b;
    std::optional<BackendSlot> agent_c;

    std::string bench_path;
    std::string traces_path;
    std::string report_path;    // default: <traces>.report.json
    std::string audit_log_path; // empty: audit kept in memory only
    std::string wire_log_path;

    static RunConfig from_file(const std::filesystem::path& path);

    rubric::RubricSchema load_schema() const;

    // Canonical semantic content (no output paths, no execution knobs);
    // its FNV-1a 64 digest stamps every artifact the run produces.
    nlohmann::json canonical() const;
    std::string digest() const;

    // Workflow-specific completeness and role checks.
    void validate() const;

    engine::EngineConfig engine_config() const;
    llm::BackendOptions backend_options() const;
};

std::string_view role_name(llm::BackendRole role);
llm::BackendRole role_from_name(const std::string& name);

} // namespace care::config
