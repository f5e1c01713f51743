#include "care/config.hpp"

#include <fstream>
#include <set>

#include "care/common.hpp"

namespace care::config {

std::string_view role_name(llm::BackendRole role) {
    return role == llm::BackendRole::Remote ? "REMOTE" : "LOCAL";
}

llm::BackendRole role_from_name(const std::string& name) {
    if (name == "LOCAL") return llm::BackendRole::Local;
    if (name == "REMOTE") return llm::BackendRole::Remote;
    throw ValidationError("backend role must be LOCAL or REMOTE, got " + name);
}

namespace {

std::optional<BackendSlot> read_slot(const nlohmann::json& backends, const char* name,
                                     llm::BackendRole default_role) {
    if (!backends.contains(name)) return std::nullopt;
    const auto& j = backends.at(name);
    BackendSlot slot;
    if (j.is_string()) {
        slot.spec = j.get<std::string>();
        slot.role = default_role;
        return slot;
    }
    slot.spec = j.at("spec").get<std::string>();
    slot.role = j.contains("role") ? role_from_name(j.at("role").get<std::string>())
                                   : default_role;
    return slot;
}

nlohmann::json slot_json(const std::optional<BackendSlot>& slot) {
    if (!slot) return nullptr;
    return nlohmann::json{{"spec", slot->spec}, {"role", std::string(role_name(slot->role))}};
}

} // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed config " + path.string() + ": " + e.what());
    }

    RunConfig cfg;
    cfg.workflow = j.value("workflow", cfg.workflow);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.retries = j.value("retries", cfg.retries);
    cfg.timeout_seconds = j.value("timeout_seconds", cfg.timeout_seconds);
    cfg.max_in_flight = j.value("max_in_flight", cfg.max_in_flight);
    cfg.max_acquisition_rounds =
        j.value("max_acquisition_rounds", cfg.max_acquisition_rounds);
    cfg.max_repair_attempts = j.value("max_repair_attempts", cfg.max_repair_attempts);
    if (j.contains("ablation")) {
        cfg.no_stage1 = j.at("ablation").value("no_stage1", false);
        cfg.no_stage3 = j.at("ablation").value("no_stage3", false);
    }
    cfg.rubric_path = j.value("rubric", cfg.rubric_path);
    if (j.contains("gate")) cfg.gate = engine::gate_config_from_json(j.at("gate"));
    if (j.contains("rules")) cfg.rules = rubric::rule_thresholds_from_json(j.at("rules"));
    if (j.contains("backends")) {
        const auto& backends = j.at("backends");
        cfg.local = read_slot(backends, "local", llm::BackendRole::Local);
        cfg.remote = read_slot(backends, "remote", llm::BackendRole::Remote);
        cfg.agent_a = read_slot(backends, "agent_a", llm::BackendRole::Local);
        cfg.agent_b = read_slot(backends, "agent_b", llm::BackendRole::Local);
        cfg.agent_c = read_slot(backends, "agent_c", llm::BackendRole::Local);
    }
    if (j.contains("outputs")) {
        const auto& outputs = j.at("outputs");
        cfg.traces_path = outputs.value("traces", cfg.traces_path);
        cfg.report_path = outputs.value("report", cfg.report_path);
        cfg.audit_log_path = outputs.value("audit_log", cfg.audit_log_path);
        cfg.wire_log_path = outputs.value("wire_log", cfg.wire_log_path);
    }
    return cfg;
}

rubric::RubricSchema RunConfig::load_schema() const {
    if (rubric_path.empty()) return rubric::RubricSchema::default_schema();
    return rubric::RubricSchema::from_file(rubric_path);
}

nlohmann::json RunConfig::canonical() const {
    // Semantic content only: output paths and execution knobs (jobs,
    // retries, timeouts) do not alter results and stay out of the digest.
    return nlohmann::json{
        {"workflow", workflow},
        {"seed", seed},
        {"temperature", temperature},
        {"max_acquisition_rounds", max_acquisition_rounds},
        {"max_repair_attempts", max_repair_attempts},
        {"ablation", {{"no_stage1", no_stage1}, {"no_stage3", no_stage3}}},
        {"rubric", load_schema().to_json()},
        {"gate", engine::gate_config_to_json(gate)},
        {"rules", rubric::rule_thresholds_to_json(rules)},
        {"backends",
         {{"local", slot_json(local)},
          {"remote", slot_json(remote)},
          {"agent_a", slot_json(agent_a)},
          {"agent_b", slot_json(agent_b)},
          {"agent_c", slot_json(agent_c)}}},
    };
}

std::string RunConfig::digest() const { return fnv1a64_hex(canonical().dump()); }

void RunConfig::validate() const {
    static const std::set<std::string> kWorkflows = {"care", "single", "vote", "rsmad",
                                                     "confmad"};
    if (!kWorkflows.count(workflow)) {
        throw ValidationError("unknown workflow: " + workflow);
    }
    const auto require_local = [](const std::optional<BackendSlot>& slot,
                                  const std::string& name) {
        if (!slot) throw ValidationError("workflow requires backend slot: " + name);
        if (slot->role != llm::BackendRole::Local) {
            throw ValidationError("backend slot " + name +
                                  " must have role LOCAL (it sees raw patient values)");
        }
    };
    if (workflow == "care") {
        require_local(local, "local");
        if (!no_stage3) {
            if (!remote) {
                throw ValidationError(
                    "care workflow requires a remote backend unless stage 3 is disabled");
            }
            if (remote->role != llm::BackendRole::Remote) {
                throw ValidationError(
                    "backend slot remote must have role REMOTE for stage 3 advisory");
            }
        }
        return;
    }
    if (workflow == "single") {
        require_local(local, "local");
        return;
    }
    require_local(agent_a, "agent_a");
    require_local(agent_b, "agent_b");
    require_local(agent_c, "agent_c");
}

engine::EngineConfig RunConfig::engine_config() const {
    engine::EngineConfig cfg;
    cfg.max_acquisition_rounds = max_acquisition_rounds;
    cfg.max_repair_attempts = max_repair_attempts;
    cfg.no_stage1 = no_stage1;
    cfg.no_stage3 = no_stage3;
    cfg.gate = gate;
    cfg.rules = rules;
    return cfg;
}

llm::BackendOptions RunConfig::backend_options() const {
    llm::BackendOptions options;
    options.temperature = temperature;
    options.retries = retries;
    options.timeout_seconds = timeout_seconds;
    options.max_in_flight = max_in_flight;
    return options;
}

} // namespace care::config
