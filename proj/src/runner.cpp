#include "care/runner.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "care/baselines.hpp"
#include "care/engine.hpp"

namespace care::runner {

namespace {

eval::TraceRecord to_record(const nlohmann::json& trace_json) {
    eval::TraceRecord record;
    record.stay_id = trace_json.at("stay_id").get<std::string>();
    record.t_eval = trace_json.at("t_eval").get<int>();
    record.workflow = trace_json.at("workflow").get<std::string>();
    record.config_digest = trace_json.at("config_digest").get<std::string>();
    const std::string prediction = trace_json.at("prediction").get<std::string>();
    record.prediction = prediction == "POSITIVE"   ? engine::Prediction::Positive
                        : prediction == "NEGATIVE" ? engine::Prediction::Negative
                                                   : engine::Prediction::Invalid;
    record.prompt_tokens = trace_json.at("usage").at("prompt_tokens").get<long>();
    record.completion_tokens = trace_json.at("usage").at("completion_tokens").get<long>();
    record.estimated = trace_json.at("usage").value("estimated", false);
    return record;
}

} // namespace

RunResult execute_run(const config::RunConfig& cfg, const cohort::Bench& bench) {
    cfg.validate();
    const std::string digest = cfg.digest();
    const rubric::RubricSchema schema = cfg.load_schema();
    const llm::BackendOptions backend_options = cfg.backend_options();

    privacy::AuditLog audit = cfg.audit_log_path.empty()
                                  ? privacy::AuditLog()
                                  : privacy::AuditLog(cfg.audit_log_path, digest);
    std::unique_ptr<llm::WireLog> wire_log;
    if (!cfg.wire_log_path.empty()) {
        wire_log = std::make_unique<llm::WireLog>(cfg.wire_log_path, digest);
    }

    const auto build = [&](const std::optional<config::BackendSlot>& slot)
        -> std::unique_ptr<llm::Backend> {
        if (!slot) return nullptr;
        auto backend =
            llm::make_backend(llm::BackendSpec::parse(slot->spec, slot->role), backend_options);
        backend->set_wire_log(wire_log.get());
        return backend;
    };
    std::unique_ptr<llm::Backend> local = build(cfg.local);
    std::unique_ptr<llm::Backend> remote = build(cfg.remote);
    std::unique_ptr<llm::Backend> agent_a = build(cfg.agent_a);
    std::unique_ptr<llm::Backend> agent_b = build(cfg.agent_b);
    std::unique_ptr<llm::Backend> agent_c = build(cfg.agent_c);

    const engine::EngineConfig engine_cfg = cfg.engine_config();
    baselines::BaselineConfig baseline_cfg;
    baseline_cfg.max_repair_attempts = cfg.max_repair_attempts;
    baseline_cfg.config_digest = digest;

    const std::vector<Sample>& samples = bench.samples;
    std::vector<nlohmann::json> trace_lines(samples.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> remote_calls{0};
    std::atomic<std::size_t> samples_with_backend_failure{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    const auto worker = [&]() {
        for (;;) {
            const std::size_t index = next.fetch_add(1);
            if (index >= samples.size()) return;
            const Sample& sample = samples[index];
            try {
                if (cfg.workflow == "care") {
                    engine::RunContext context;
                    context.local = local.get();
                    context.remote = remote.get();
                    context.audit = &audit;
                    context.schema = &schema;
                    context.config_digest = digest;
                    auto [prediction, trace] = engine::run_care(sample, context, engine_cfg);
                    remote_calls += static_cast<std::size_t>(trace.remote_calls);
                    if (trace.local_backend_failed) ++samples_with_backend_failure;
                    trace_lines[index] = trace.to_json();
                } else if (cfg.workflow == "single") {
                    auto result = baselines::run_single_pass(sample, *local, baseline_cfg);
                    if (result.trace.backend_failures > 0) ++samples_with_backend_failure;
                    trace_lines[index] = result.trace.to_json();
                } else {
                    const std::array<llm::Backend*, 3> agents = {agent_a.get(), agent_b.get(),
                                                                 agent_c.get()};
                    baselines::BaselineResult result;
                    if (cfg.workflow == "vote") {
                        result = baselines::run_majority_vote(sample, agents, baseline_cfg);
                    } else if (cfg.workflow == "rsmad") {
                        result = baselines::run_rsmad(sample, agents, baseline_cfg);
                    } else {
                        result = baselines::run_confmad(sample, agents, baseline_cfg);
                    }
                    if (result.trace.backend_failures > 0) ++samples_with_backend_failure;
                    trace_lines[index] = result.trace.to_json();
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& thread : pool) thread.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    // Isolated failures degrade to INVALID predictions; a backend that
    // failed on every single sample is an outage, not a data point.
    if (!samples.empty() && samples_with_backend_failure.load() == samples.size()) {
        throw BackendError("backend failed (after retries) on all " +
                           std::to_string(samples.size()) + " samples");
    }

    // Backend identifiers, in stable slot order.
    std::vector<std::string> backend_ids;
    const auto add_backend = [&](const std::optional<config::BackendSlot>& slot) {
        if (slot) backend_ids.push_back(slot->spec);
    };
    if (cfg.workflow == "care" || cfg.workflow == "single") {
        add_backend(cfg.local);
        if (cfg.workflow == "care" && !cfg.no_stage3) add_backend(cfg.remote);
    } else {
        add_backend(cfg.agent_a);
        add_backend(cfg.agent_b);
        add_backend(cfg.agent_c);
    }

    // Traces are written in bench order regardless of scheduling.
    std::vector<eval::TraceRecord> records;
    records.reserve(samples.size());
    if (!cfg.traces_path.empty()) {
        std::ofstream out(cfg.traces_path);
        if (!out) throw ValidationError("cannot open traces output: " + cfg.traces_path);
        const nlohmann::json header = {{"file_kind", "traces"},
                                       {"config_digest", digest},
                                       {"workflow", cfg.workflow},
                                       {"backends", backend_ids}};
        out << header.dump() << "\n";
        for (const auto& line : trace_lines) out << line.dump() << "\n";
    }
    for (const auto& line : trace_lines) records.push_back(to_record(line));

    RunResult result;
    result.report = eval::aggregate_run(records, samples);
    result.remote_calls = remote_calls.load();
    result.audit_violations = audit.violation_count();
    result.report.backends = backend_ids;

    if (!cfg.report_path.empty()) {
        eval::write_report(cfg.report_path, result.report);
    }
    return result;
}

} // namespace care::runner
