#pragma once

#include <filesystem>

#include "care/cohort.hpp"
#include "care/config.hpp"
#include "care/eval.hpp"

namespace care::runner {

struct RunResult {
    eval::RunReport report;
    std::size_t remote_calls = 0;
    std::size_t audit_violations = 0;
};

// Drives one workflow over a benchmark: builds backends, runs samples
// through a bounded worker pool, writes the trace file (header line plus
// one trace per sample, in bench order), the report, and the audit/wire
// logs when configured. Engine instances share only immutable config and
// schema plus the thread-safe backends and log writers.
RunResult execute_run(const config::RunConfig& cfg, const cohort::Bench& bench);

} // namespace care::runner
