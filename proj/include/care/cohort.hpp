#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "care/events.hpp"
#include "care/features.hpp"

namespace care::cohort {

using FeatureMap = std::map<FeatureKey, FeatureValue>;

// Computes all 22 windowed features for (stay, t_eval). Lookbacks are
// half-open minute windows (t*60 - W, t*60]: 1h for bedside, MAP, HR,
// norepinephrine and SpO2; 4h temperature; 6h lactate/urine/rhythm;
// 24h WBC. SOFA features are the hourly values at t_eval. Missing data
// stays MISSING. Requires events sorted by time (throws IngestionError
// otherwise). Duplicate observations within the same minute are averaged
// before aggregation.
FeatureMap window_aggregate(std::span<const EventRecord> stay_events,
                            std::string_view stay_id, int t_eval);

struct Inclusion {
    bool include = false;
    std::string reason; // first failing criterion; empty when included
};

// Discordance criteria: no recorded pain, calm-but-not-deeply-sedated RASS
// window, and a cumulative MAP<65 burden of strictly more than 5 minutes
// with MAP coverage present.
Inclusion check_inclusion(const FeatureMap& features);

// POSITIVE iff the max SOFA over the next 12 observed hourly values
// exceeds the value at t_eval by at least 2; an empty follow-up window is
// NEGATIVE (no observed worsening).
Label compute_label(int sofa_at_t, std::span<const int> sofa_next_12h);

// Deterministic class-balanced selection: per-class pools are sorted by
// (stay_id, t_eval), shuffled with a platform-stable seeded generator and
// truncated to n_per_class; output is sorted by (stay_id, t_eval).
// Independent of pool input order. Throws ValidationError naming the
// deficient class when a class has fewer than n_per_class members.
std::vector<Sample> balanced_sample(const std::vector<Sample>& pool,
                                    std::size_t n_per_class, std::uint64_t seed);

struct BuildOptions {
    std::size_t n_per_class = 500;
    std::uint64_t seed = 0;
    int min_hour_gap = 12; // overlap exclusion between kept hours of one stay
};

struct BuildStats {
    std::size_t hours_considered = 0;
    std::size_t included = 0;
    std::size_t kept_after_overlap = 0;
    std::size_t pool_positive = 0;
    std::size_t pool_negative = 0;
    IngestStats ingest;
};

struct BuildResult {
    std::vector<Sample> samples;
    BuildStats stats;
    std::string config_digest;
};

// Full pipeline: enumerate candidate hours, aggregate, filter, label,
// apply overlap exclusion, then balanced_sample. Every emitted sample is
// re-validated against check_inclusion.
BuildResult build_benchmark(const EventSet& events, const BuildOptions& options);

struct Bench {
    std::vector<Sample> samples;
    std::string config_digest;
};

// Benchmark file: a JSON header line carrying the producing config digest,
// then one sample per line with MISSING encoded as null.
void write_benchmark(const std::filesystem::path& path, const BuildResult& result);
Bench read_benchmark(const std::filesystem::path& path);

} // namespace care::cohort
