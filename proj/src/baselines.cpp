#include "care/baselines.hpp"

#include <sstream>

#include "care/common.hpp"

namespace care::baselines {

namespace {

const std::array<std::string, 3> kAgentIds = {"A", "B", "C"};

std::string base_prompt(const Sample& sample, bool with_confidence) {
    std::ostringstream os;
    os << "You are an ICU triage agent predicting short-horizon worsening of organ "
          "dysfunction.\n\n";
    os << "### Patient Feature Block\n";
    os << render_feature_block(sample);
    os << "\n### Task\n";
    os << "Assess whether this patient is likely to worsen within the next twelve "
          "hours.\n";
    os << "Choose exactly one action: OBSERVE (no escalation), TREAT_S (supportive "
          "measures), or INVESTIGATE_O (escalate for suspected worsening).\n";
    os << "Respond with one JSON object:\n";
    if (with_confidence) {
        os << "{\"reasoning\": \"<short>\", \"final_action\": "
              "\"<OBSERVE|TREAT_S|INVESTIGATE_O>\", \"confidence\": <integer 0-100>}\n";
    } else {
        os << "{\"reasoning\": \"<short>\", \"final_action\": "
              "\"<OBSERVE|TREAT_S|INVESTIGATE_O>\"}\n";
    }
    return os.str();
}

std::string render_turn(const AgentTurn& turn) {
    std::ostringstream os;
    os << turn_marker(turn.agent_id, turn.round) << " action="
       << (turn.action ? std::string(llm::action_name(*turn.action)) : std::string("INVALID"));
    if (turn.confidence) os << " confidence=" << *turn.confidence;
    os << " reasoning=" << (turn.reasoning.empty() ? "(none)" : turn.reasoning);
    return os.str();
}

struct TurnRunner {
    BaselineTrace& trace;
    const BaselineConfig& config;
    std::string stage;
    bool with_confidence = false;

    AgentTurn run(llm::Backend& backend, const std::string& agent_id, int round,
                  const std::string& prompt, const std::string& sample_id) {
        AgentTurn turn;
        turn.agent_id = agent_id;
        turn.round = round;
        turn.prompt = prompt;
        llm::CallContext ctx{sample_id, stage, round, agent_id, 0};
        try {
            llm::Completion completion = backend.complete(prompt, ctx);
            record(completion);
            auto parsed = llm::parse_baseline_turn(completion.text, with_confidence);
            int attempt = 0;
            while (!parsed.ok() && attempt < config.max_repair_attempts) {
                ++attempt;
                turn.repair_used = true;
                ctx.attempt = attempt;
                completion =
                    backend.complete(prompt + std::string(engine::kFormatReminder), ctx);
                record(completion);
                parsed = llm::parse_baseline_turn(completion.text, with_confidence);
            }
            if (parsed.ok()) {
                turn.action = parsed.value->final_action;
                turn.reasoning = parsed.value->reasoning;
                turn.confidence = parsed.value->confidence;
            }
        } catch (const BackendError&) {
            // Backend failure leaves the turn invalid.
            ++trace.backend_failures;
        }
        return turn;
    }

private:
    void record(const llm::Completion& completion) {
        trace.calls.push_back({stage, completion.usage.prompt_tokens,
                               completion.usage.completion_tokens,
                               completion.usage.estimated});
        trace.usage_total += completion.usage;
    }
};

// Majority over the binary mapping of valid votes; needs two agreeing
// valid votes, otherwise a vote failure (INVALID).
Prediction binary_majority(const std::vector<std::optional<llm::Action>>& actions) {
    int positive = 0, negative = 0;
    for (const auto& action : actions) {
        if (!action) continue;
        if (engine::prediction_from_action(*action) == Prediction::Positive) {
            ++positive;
        } else {
            ++negative;
        }
    }
    if (positive >= 2) return Prediction::Positive;
    if (negative >= 2) return Prediction::Negative;
    return Prediction::Invalid;
}

BaselineTrace make_trace(const Sample& sample, std::string workflow,
                         const BaselineConfig& config) {
    BaselineTrace trace;
    trace.stay_id = sample.stay_id;
    trace.t_eval = sample.t_eval;
    trace.workflow = std::move(workflow);
    trace.config_digest = config.config_digest;
    return trace;
}

} // namespace

std::string turn_marker(const std::string& agent_id, int round) {
    return "[turn agent=" + agent_id + " round=" + std::to_string(round) + "]";
}

std::uint64_t confmad_tie_hash(const std::string& sample_id, const std::string& agent_id) {
    return stable_hash64({sample_id, agent_id});
}

BaselineResult run_single_pass(const Sample& sample, llm::Backend& backend,
                               const BaselineConfig& config) {
    BaselineTrace trace = make_trace(sample, "single", config);
    TurnRunner runner{trace, config, "single", false};
    AgentTurn turn = runner.run(backend, "", 0, base_prompt(sample, false), sample.id());
    trace.prediction = turn.action ? engine::prediction_from_action(*turn.action)
                                   : Prediction::Invalid;
    trace.turns.push_back(std::move(turn));
    return {trace.prediction, trace};
}

BaselineResult run_majority_vote(const Sample& sample,
                                 const std::array<llm::Backend*, 3>& backends,
                                 const BaselineConfig& config) {
    BaselineTrace trace = make_trace(sample, "vote", config);
    TurnRunner runner{trace, config, "vote", false};
    std::vector<std::optional<llm::Action>> actions;
    for (std::size_t i = 0; i < backends.size(); ++i) {
        AgentTurn turn = runner.run(*backends[i], kAgentIds[i], 0,
                                    base_prompt(sample, false), sample.id());
        actions.push_back(turn.action);
        trace.turns.push_back(std::move(turn));
    }
    trace.prediction = binary_majority(actions);
    return {trace.prediction, trace};
}

BaselineResult run_rsmad(const Sample& sample, const std::array<llm::Backend*, 3>& backends,
                         const BaselineConfig& config) {
    BaselineTrace trace = make_trace(sample, "rsmad", config);
    TurnRunner runner{trace, config, "rsmad", false};
    const std::string base = base_prompt(sample, false);

    std::array<AgentTurn, 3> previous;
    for (std::size_t i = 0; i < backends.size(); ++i) {
        previous[i] = runner.run(*backends[i], kAgentIds[i], 0, base, sample.id());
        trace.turns.push_back(previous[i]);
    }

    for (int round = 1; round <= 2; ++round) {
        std::array<AgentTurn, 3> current;
        for (std::size_t i = 0; i < backends.size(); ++i) {
            std::ostringstream os;
            os << base;
            os << "\n### Debate Context: Previous Round Only\n";
            os << "The other agents answered in the previous round:\n";
            for (std::size_t j = 0; j < backends.size(); ++j) {
                if (j == i) continue;
                os << render_turn(previous[j]) << "\n";
            }
            os << "Your own previous answer:\n" << render_turn(previous[i]) << "\n";
            os << "Revise your answer if the previous round changes your assessment.\n";
            current[i] =
                runner.run(*backends[i], kAgentIds[i], round, os.str(), sample.id());
        }
        for (auto& turn : current) trace.turns.push_back(turn);
        previous = std::move(current);
    }

    std::vector<std::optional<llm::Action>> final_actions;
    for (const auto& turn : previous) final_actions.push_back(turn.action);
    trace.prediction = binary_majority(final_actions);
    return {trace.prediction, trace};
}

BaselineResult run_confmad(const Sample& sample, const std::array<llm::Backend*, 3>& backends,
                           const BaselineConfig& config) {
    BaselineTrace trace = make_trace(sample, "confmad", config);
    TurnRunner runner{trace, config, "confmad", true};
    const std::string base = base_prompt(sample, true);

    std::vector<AgentTurn> history;
    for (int round = 0; round <= 2; ++round) {
        for (std::size_t i = 0; i < backends.size(); ++i) {
            std::string prompt = base;
            if (!history.empty()) {
                std::ostringstream os;
                os << "\n### Debate History (all turns so far, in speaking order)\n";
                for (const auto& turn : history) os << render_turn(turn) << "\n";
                os << "Consider the history, then give your own updated answer.\n";
                prompt += os.str();
            }
            AgentTurn turn =
                runner.run(*backends[i], kAgentIds[i], round, prompt, sample.id());
            history.push_back(turn);
            trace.turns.push_back(std::move(turn));
        }
    }

    // Highest-confidence valid round-2 turn; ties resolved by ascending
    // hash of (sample_id, agent_id).
    const AgentTurn* winner = nullptr;
    for (const auto& turn : trace.turns) {
        if (turn.round != 2 || !turn.action || !turn.confidence) continue;
        if (!winner || *turn.confidence > *winner->confidence ||
            (*turn.confidence == *winner->confidence &&
             confmad_tie_hash(sample.id(), turn.agent_id) <
                 confmad_tie_hash(sample.id(), winner->agent_id))) {
            winner = &turn;
        }
    }
    trace.prediction =
        winner ? engine::prediction_from_action(*winner->action) : Prediction::Invalid;
    return {trace.prediction, trace};
}

nlohmann::json BaselineTrace::to_json() const {
    nlohmann::json turns_json = nlohmann::json::array();
    for (const auto& turn : turns) {
        nlohmann::json t = {
            {"agent", turn.agent_id},
            {"round", turn.round},
            {"action", turn.action ? std::string(llm::action_name(*turn.action))
                                   : std::string("INVALID")},
            {"reasoning", turn.reasoning},
            {"repair_used", turn.repair_used},
            {"prompt", turn.prompt},
        };
        if (turn.confidence) t["confidence"] = *turn.confidence;
        turns_json.push_back(std::move(t));
    }
    nlohmann::json calls_json = nlohmann::json::array();
    for (const auto& call : calls) {
        calls_json.push_back({{"stage", call.stage},
                              {"prompt_tokens", call.prompt_tokens},
                              {"completion_tokens", call.completion_tokens},
                              {"estimated", call.estimated}});
    }
    return nlohmann::json{
        {"stay_id", stay_id},
        {"t_eval", t_eval},
        {"workflow", workflow},
        {"config_digest", config_digest},
        {"turns", turns_json},
        {"prediction", std::string(engine::prediction_name(prediction))},
        {"calls", calls_json},
        {"usage",
         {{"prompt_tokens", usage_total.prompt_tokens},
          {"completion_tokens", usage_total.completion_tokens},
          {"estimated", usage_total.estimated}}},
        {"backend_failures", backend_failures},
    };
}

} // namespace care::baselines
