#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/engine.hpp"
#include "care/features.hpp"
#include "care/llm.hpp"
#include "care/stage_parse.hpp"

namespace care::baselines {

using engine::Prediction;

struct AgentTurn {
    std::string agent_id; // "A" | "B" | "C" ("" for single-pass)
    int round = 0;
    std::string prompt; // captured for protocol-visibility checks
    std::string reasoning;
    std::optional<llm::Action> action; // nullopt marks an invalid turn
    std::optional<int> confidence;     // present iff protocol is ConfMAD
    bool repair_used = false;
};

struct BaselineTrace {
    std::string stay_id;
    int t_eval = 0;
    std::string workflow;
    std::string config_digest;
    std::vector<AgentTurn> turns; // DebateHistory, in speaking order
    Prediction prediction = Prediction::Invalid;
    std::vector<engine::CallUsage> calls;
    llm::Usage usage_total;
    int backend_failures = 0; // turns lost to backend errors after retries

    nlohmann::json to_json() const;
};

struct BaselineConfig {
    int max_repair_attempts = 1;
    std::string config_digest;
};

struct BaselineResult {
    Prediction prediction = Prediction::Invalid;
    BaselineTrace trace;
};

// One LLM call over the flat 22-feature bundle.
BaselineResult run_single_pass(const Sample& sample, llm::Backend& backend,
                               const BaselineConfig& config);

// Three independent single-pass agents; majority over the binary mapping
// of valid votes, requiring at least two agreeing valid votes.
BaselineResult run_majority_vote(const Sample& sample,
                                 const std::array<llm::Backend*, 3>& backends,
                                 const BaselineConfig& config);

// Round-synchronous debate: round 0 independent; in rounds 1 and 2 each
// agent sees only the previous-round turns (the other agents' and its
// own); final = majority over valid round-2 turns.
BaselineResult run_rsmad(const Sample& sample, const std::array<llm::Backend*, 3>& backends,
                         const BaselineConfig& config);

// Confidence-aware sequential debate: agents speak A->B->C over a growing
// history that includes same-round earlier speakers; the valid round-2
// turn with the highest confidence wins, ties broken by ascending
// stable hash of (sample_id, agent_id).
BaselineResult run_confmad(const Sample& sample, const std::array<llm::Backend*, 3>& backends,
                           const BaselineConfig& config);

// Turn marker embedded in debate prompts; protocol tests grep for it.
std::string turn_marker(const std::string& agent_id, int round);

std::uint64_t confmad_tie_hash(const std::string& sample_id, const std::string& agent_id);

} // namespace care::baselines
