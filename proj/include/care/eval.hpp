#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "care/cohort.hpp"
#include "care/engine.hpp"

namespace care::eval {

struct ConfusionCounts {
    long tp = 0;
    long fp = 0;
    long tn = 0;
    long fn = 0;
    long invalid_count = 0;
    long n_total = 0;
};

struct Metrics {
    double tpr = 0;
    double tnr = 0;
    double ba = 0;
    double gmean = 0;
    double mcc = 0;
};

// Class-balanced metrics from the confusion matrix. MCC is defined as 0
// whenever a denominator factor vanishes (the constant-classifier case).
// Returns nullopt (UNDEFINED) when either class has no valid samples.
std::optional<Metrics> compute_metrics(const ConfusionCounts& counts);

// Minimal slice of a trace needed for aggregation; parses both engine and
// baseline trace lines.
struct TraceRecord {
    std::string stay_id;
    int t_eval = 0;
    std::string workflow;
    std::string config_digest;
    engine::Prediction prediction = engine::Prediction::Invalid;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    bool estimated = false;

    std::string id() const { return stay_id + "#" + std::to_string(t_eval); }
};

struct TraceFile {
    std::vector<TraceRecord> records;
    std::string config_digest;          // from the header line
    std::vector<std::string> backends;  // from the header line
};

TraceFile read_traces(const std::filesystem::path& path);

struct RunReport {
    std::string workflow;
    std::vector<std::string> backends;
    double valid_rate = 0;
    ConfusionCounts counts;
    std::optional<Metrics> metrics;
    double tokens_per_sample = 0; // averaged over all samples, invalid included
    bool tokens_estimated = false;
    bool degenerate_collapse = false; // TPR or TNR collapsed to zero
    std::string config_digest;

    nlohmann::json to_json() const;
};

// Joins traces with bench labels; every trace must match a bench sample
// and every bench sample must have exactly one trace, otherwise a hard
// error lists the orphans.
RunReport aggregate_run(const std::vector<TraceRecord>& traces,
                        const std::vector<Sample>& bench);

// Aligned-text comparison table, one row per report.
std::string render_table(const std::vector<RunReport>& reports);

void write_report(const std::filesystem::path& path, const RunReport& report);
RunReport read_report(const std::filesystem::path& path);

} // namespace care::eval
