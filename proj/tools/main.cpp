#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "care/cohort.hpp"
#include "care/common.hpp"
#include "care/config.hpp"
#include "care/eval.hpp"
#include "care/runner.hpp"
#include "care/rubric.hpp"
#include "care/synth.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;

struct GenArgs {
    std::size_t stays = 400;
    int hours = 72;
    std::uint64_t seed = 0;
    std::string out;
};

struct CohortArgs {
    std::string events;
    std::string out;
    std::size_t n_per_class = 500;
    std::uint64_t seed = 0;
    int min_hour_gap = 12;
};

struct RunArgs {
    std::string workflow;
    std::string bench;
    std::string config_path;
    std::string traces;
    std::string report;
    std::string audit_log;
    std::string wire_log;
    std::string rubric;
    std::string backend;
    std::string remote;
    std::string agent_a, agent_b, agent_c;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<double> temperature;
    bool no_stage1 = false;
    bool no_stage3 = false;
    bool backbone_only = false;
};

struct ReportArgs {
    std::vector<std::string> traces;
    std::string bench;
    std::string format = "table";
    std::string out;
    bool allow_mixed = false;
};

int cmd_gen_events(const GenArgs& args) {
    care::synth::GenerateOptions options;
    options.stays = args.stays;
    options.hours = args.hours;
    options.seed = args.seed;
    const auto events = care::synth::generate_events(options);
    care::synth::write_events_jsonl(args.out, events);
    std::cerr << "wrote " << events.size() << " events for " << args.stays << " stays to "
              << args.out << "\n";
    return kExitOk;
}

int cmd_build_cohort(const CohortArgs& args) {
    const care::EventSet events = care::read_events(args.events);
    care::cohort::BuildOptions options;
    options.n_per_class = args.n_per_class;
    options.seed = args.seed;
    options.min_hour_gap = args.min_hour_gap;
    const care::cohort::BuildResult result = care::cohort::build_benchmark(events, options);
    care::cohort::write_benchmark(args.out, result);
    std::cerr << "considered " << result.stats.hours_considered << " stay-hours, included "
              << result.stats.included << ", kept " << result.stats.kept_after_overlap
              << " after overlap exclusion (pool " << result.stats.pool_positive << " pos / "
              << result.stats.pool_negative << " neg)\n";
    if (events.stats.rejected_unknown_kind > 0 || events.stats.rejected_invalid > 0) {
        std::cerr << "warning: rejected " << events.stats.rejected_unknown_kind
                  << " events with unknown kind, " << events.stats.rejected_invalid
                  << " invalid events\n";
    }
    std::cerr << "wrote " << result.samples.size() << " samples to " << args.out
              << " (config digest " << result.config_digest << ")\n";
    return kExitOk;
}

int cmd_run(const RunArgs& args) {
    care::config::RunConfig cfg;
    if (!args.config_path.empty()) {
        cfg = care::config::RunConfig::from_file(args.config_path);
    }
    // CLI flags override the config file.
    if (!args.workflow.empty()) cfg.workflow = args.workflow;
    if (args.seed) cfg.seed = *args.seed;
    if (args.jobs) cfg.jobs = *args.jobs;
    if (args.temperature) cfg.temperature = *args.temperature;
    if (!args.rubric.empty()) cfg.rubric_path = args.rubric;
    if (!args.traces.empty()) cfg.traces_path = args.traces;
    if (!args.report.empty()) cfg.report_path = args.report;
    if (!args.audit_log.empty()) cfg.audit_log_path = args.audit_log;
    if (!args.wire_log.empty()) cfg.wire_log_path = args.wire_log;
    if (!args.backend.empty()) {
        cfg.local = care::config::BackendSlot{args.backend, care::llm::BackendRole::Local};
    }
    if (!args.remote.empty()) {
        cfg.remote = care::config::BackendSlot{args.remote, care::llm::BackendRole::Remote};
    }
    if (!args.agent_a.empty()) {
        cfg.agent_a = care::config::BackendSlot{args.agent_a, care::llm::BackendRole::Local};
    }
    if (!args.agent_b.empty()) {
        cfg.agent_b = care::config::BackendSlot{args.agent_b, care::llm::BackendRole::Local};
    }
    if (!args.agent_c.empty()) {
        cfg.agent_c = care::config::BackendSlot{args.agent_c, care::llm::BackendRole::Local};
    }
    if (args.no_stage1 || args.backbone_only) cfg.no_stage1 = true;
    if (args.no_stage3 || args.backbone_only) cfg.no_stage3 = true;
    if (!args.bench.empty()) cfg.bench_path = args.bench;

    if (cfg.bench_path.empty()) throw care::ValidationError("run requires --bench");
    if (cfg.traces_path.empty()) cfg.traces_path = cfg.workflow + ".traces.jsonl";
    if (cfg.report_path.empty()) cfg.report_path = cfg.traces_path + ".report.json";

    const care::cohort::Bench bench = care::cohort::read_benchmark(cfg.bench_path);
    const care::runner::RunResult result = care::runner::execute_run(cfg, bench);
    std::cerr << "workflow " << cfg.workflow << ": " << result.report.counts.n_total
              << " samples, valid rate " << result.report.valid_rate << ", traces at "
              << cfg.traces_path << ", report at " << cfg.report_path << "\n";
    if (result.audit_violations > 0) {
        std::cerr << "warning: " << result.audit_violations
                  << " outbound privacy scan violations were refused\n";
    }
    return kExitOk;
}

int cmd_report(const ReportArgs& args) {
    const care::cohort::Bench bench = care::cohort::read_benchmark(args.bench);
    std::vector<care::eval::RunReport> reports;
    std::string digest;
    for (const auto& path : args.traces) {
        const care::eval::TraceFile traces = care::eval::read_traces(path);
        if (digest.empty()) {
            digest = traces.config_digest;
        } else if (digest != traces.config_digest && !args.allow_mixed) {
            throw care::ValidationError(
                "trace files carry different config digests; pass --allow-mixed to "
                "compare them anyway");
        }
        care::eval::RunReport report =
            care::eval::aggregate_run(traces.records, bench.samples);
        report.backends = traces.backends;
        reports.push_back(std::move(report));
    }

    std::string rendered;
    if (args.format == "table") {
        rendered = care::eval::render_table(reports);
    } else if (args.format == "json") {
        if (reports.size() == 1) {
            rendered = reports.front().to_json().dump(2) + "\n";
        } else {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& report : reports) arr.push_back(report.to_json());
            rendered = arr.dump(2) + "\n";
        }
    } else {
        throw care::ValidationError("format must be json or table");
    }

    if (args.out.empty()) {
        std::cout << rendered;
    } else {
        std::ofstream out(args.out);
        if (!out) throw care::ValidationError("cannot open report output: " + args.out);
        out << rendered;
    }
    return kExitOk;
}

int cmd_validate_rubric(const std::string& path) {
    const care::rubric::RubricSchema schema = care::rubric::RubricSchema::from_file(path);
    std::cout << "rubric schema OK: " << schema.categories().size() << " categories (";
    for (std::size_t i = 0; i < schema.categories().size(); ++i) {
        if (i > 0) std::cout << ", ";
        std::cout << schema.categories()[i].name;
    }
    std::cout << ")\n";
    return kExitOk;
}

int cmd_make_rubric(const std::string& out_path) {
    // Offline authoring stub: emits the embedded default schema as a
    // starting point for manual editing.
    const std::string text = care::rubric::RubricSchema::default_schema().schema_text();
    if (out_path.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw care::ValidationError("cannot open rubric output: " + out_path);
        out << text << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Privacy-partitioned staged triage workflows over ICU event streams"};
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen-events", "Generate a synthetic event stream");
    gen->add_option("--stays", gen_args.stays, "Number of stays")->capture_default_str();
    gen->add_option("--hours", gen_args.hours, "Stay length in hours")->capture_default_str();
    gen->add_option("--seed", gen_args.seed, "Generator seed")->capture_default_str();
    gen->add_option("--out", gen_args.out, "Output JSONL path")->required();

    CohortArgs cohort_args;
    auto* cohort = app.add_subcommand(
        "build-cohort", "Build a balanced discordance benchmark from an event stream");
    cohort->add_option("--events", cohort_args.events, "Event file (JSONL or CSV)")->required();
    cohort->add_option("--out", cohort_args.out, "Benchmark output path")->required();
    cohort->add_option("--n-per-class", cohort_args.n_per_class, "Samples per class")
        ->capture_default_str();
    cohort->add_option("--seed", cohort_args.seed, "Selection seed")->capture_default_str();
    cohort->add_option("--min-hour-gap", cohort_args.min_hour_gap,
                       "Minimum hour gap between kept samples of one stay")
        ->capture_default_str();

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run a workflow over a benchmark");
    run->add_option("--workflow", run_args.workflow,
                    "care | single | vote | rsmad | confmad");
    run->add_option("--bench", run_args.bench, "Benchmark file")->required();
    run->add_option("--config", run_args.config_path, "Run config JSON");
    run->add_option("--traces", run_args.traces, "Trace output path (JSONL)");
    run->add_option("--report", run_args.report, "Report output path (JSON)");
    run->add_option("--audit-log", run_args.audit_log, "Privacy audit log path (JSONL)");
    run->add_option("--wire-log", run_args.wire_log, "Redacted wire log path (JSONL)");
    run->add_option("--rubric", run_args.rubric, "Rubric schema JSON path");
    run->add_option("--backend", run_args.backend, "Local backend spec");
    run->add_option("--remote", run_args.remote, "Remote backend spec (stage 3)");
    run->add_option("--agent-a", run_args.agent_a, "Agent A backend spec");
    run->add_option("--agent-b", run_args.agent_b, "Agent B backend spec");
    run->add_option("--agent-c", run_args.agent_c, "Agent C backend spec");
    std::uint64_t seed_value = 0;
    auto* seed_opt = run->add_option("--seed", seed_value, "Run seed");
    int jobs_value = 1;
    auto* jobs_opt = run->add_option("--jobs", jobs_value, "Concurrent engine instances");
    double temperature_value = 0.0;
    auto* temp_opt = run->add_option("--temperature", temperature_value,
                                     "Decoding temperature for HTTP backends");
    run->add_flag("--no-stage1", run_args.no_stage1,
                  "Ablation: fixed neutral severity-3 start");
    run->add_flag("--no-stage3", run_args.no_stage3,
                  "Ablation: skip remote advisory and merge");
    run->add_flag("--backbone-only", run_args.backbone_only,
                  "Ablation: both --no-stage1 and --no-stage3");

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "Aggregate traces into a run report");
    report->alias("eval");
    report->add_option("--traces", report_args.traces, "Trace files")->required();
    report->add_option("--bench", report_args.bench, "Benchmark file (labels)")->required();
    report->add_option("--format", report_args.format, "json | table")
        ->capture_default_str();
    report->add_option("--out", report_args.out, "Write to file instead of stdout");
    report->add_flag("--allow-mixed", report_args.allow_mixed,
                     "Permit trace files with differing config digests");

    std::string rubric_path;
    auto* validate =
        app.add_subcommand("validate-rubric", "Validate a rubric schema file");
    validate->add_option("--rubric", rubric_path, "Rubric schema JSON path")->required();

    std::string make_out;
    auto* make = app.add_subcommand(
        "make-rubric", "Emit the default rubric schema as an editable starting point");
    make->add_option("--out", make_out, "Output path (stdout when omitted)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_events(gen_args);
        if (cohort->parsed()) return cmd_build_cohort(cohort_args);
        if (run->parsed()) {
            if (!seed_opt->empty()) run_args.seed = seed_value;
            if (!jobs_opt->empty()) run_args.jobs = jobs_value;
            if (!temp_opt->empty()) run_args.temperature = temperature_value;
            return cmd_run(run_args);
        }
        if (report->parsed()) return cmd_report(report_args);
        if (validate->parsed()) return cmd_validate_rubric(rubric_path);
        if (make->parsed()) return cmd_make_rubric(make_out);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const care::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const care::PrivacyViolationError& e) {
        std::cerr << "privacy violation: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
