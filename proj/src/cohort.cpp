#include "care/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "care/common.hpp"

namespace care::cohort {

namespace {

struct MinuteValue {
    int minute;
    double value;
};

// Collapses same-minute duplicates to their mean, preserving minute order.
std::vector<MinuteValue> per_minute_values(std::span<const EventRecord> events,
                                           EventKind kind, int win_begin, int win_end) {
    std::vector<MinuteValue> out;
    double sum = 0;
    int count = 0;
    int current = 0;
    for (const auto& e : events) {
        if (e.kind != kind) continue;
        if (e.time_min <= win_begin || e.time_min > win_end) continue;
        const double v = std::get<double>(e.value);
        if (count > 0 && e.time_min == current) {
            sum += v;
            ++count;
            continue;
        }
        if (count > 0) out.push_back({current, sum / count});
        current = e.time_min;
        sum = v;
        count = 1;
    }
    if (count > 0) out.push_back({current, sum / count});
    return out;
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

FeatureValue median_over(std::span<const EventRecord> events, EventKind kind,
                         int win_begin, int win_end) {
    const auto vals = per_minute_values(events, kind, win_begin, win_end);
    if (vals.empty()) return std::monostate{};
    std::vector<double> xs;
    xs.reserve(vals.size());
    for (const auto& v : vals) xs.push_back(v.value);
    return median(std::move(xs));
}

FeatureValue max_over(std::span<const EventRecord> events, EventKind kind,
                      int win_begin, int win_end) {
    const auto vals = per_minute_values(events, kind, win_begin, win_end);
    if (vals.empty()) return std::monostate{};
    double m = vals.front().value;
    for (const auto& v : vals) m = std::max(m, v.value);
    return m;
}

FeatureValue mean_over(std::span<const EventRecord> events, EventKind kind,
                       int win_begin, int win_end) {
    const auto vals = per_minute_values(events, kind, win_begin, win_end);
    if (vals.empty()) return std::monostate{};
    double sum = 0;
    for (const auto& v : vals) sum += v.value;
    return sum / static_cast<double>(vals.size());
}

FeatureValue latest_over(std::span<const EventRecord> events, EventKind kind,
                         int win_begin, int win_end) {
    const auto vals = per_minute_values(events, kind, win_begin, win_end);
    if (vals.empty()) return std::monostate{};
    return vals.back().value;
}

FeatureValue latest_string_over(std::span<const EventRecord> events, EventKind kind,
                                int win_begin, int win_end) {
    const EventRecord* last = nullptr;
    for (const auto& e : events) {
        if (e.kind != kind) continue;
        if (e.time_min <= win_begin || e.time_min > win_end) continue;
        last = &e;
    }
    if (!last) return std::monostate{};
    return std::get<std::string>(last->value);
}

struct MapSummary {
    FeatureValue median;
    FeatureValue low65_minutes;
    FeatureValue low60_minutes;
    double covered_minutes = 0;
    bool has_coverage = false;
};

// Last-observation-carried-forward at one-minute resolution inside the
// window: a reading covers the minutes from its own time until the next
// reading or the window end. Only readings inside the window contribute.
MapSummary summarize_map(std::span<const EventRecord> events, int win_begin, int win_end) {
    MapSummary summary;
    const auto vals = per_minute_values(events, EventKind::Map, win_begin, win_end);
    if (vals.empty()) return summary;
    summary.has_coverage = true;

    std::vector<double> xs;
    xs.reserve(vals.size());
    for (const auto& v : vals) xs.push_back(v.value);
    summary.median = median(std::move(xs));

    int covered = 0, low65 = 0, low60 = 0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const int from = vals[i].minute;
        const int to = (i + 1 < vals.size()) ? vals[i + 1].minute : win_end + 1;
        const int span = to - from;
        covered += span;
        if (vals[i].value < 65.0) low65 += span;
        if (vals[i].value < 60.0) low60 += span;
    }
    summary.covered_minutes = covered;
    summary.low65_minutes = static_cast<double>(low65);
    summary.low60_minutes = static_cast<double>(low60);
    return summary;
}

FeatureValue rass_window(std::span<const EventRecord> events, int win_begin, int win_end) {
    RassWindow w{};
    bool any = false;
    for (const auto& e : events) {
        if (e.kind != EventKind::Rass) continue;
        if (e.time_min <= win_begin || e.time_min > win_end) continue;
        const int v = static_cast<int>(std::get<double>(e.value));
        if (!any) {
            w.max = w.min = v;
            any = true;
        } else {
            w.max = std::max(w.max, v);
            w.min = std::min(w.min, v);
        }
        ++w.n;
    }
    if (!any) return std::monostate{};
    return w;
}

// Hourly SOFA value at hour h: the latest reading in ((h-1)*60, h*60].
FeatureValue hourly_value(std::span<const EventRecord> events, EventKind kind, int hour) {
    return latest_over(events, kind, (hour - 1) * 60, hour * 60);
}

void check_sorted(std::span<const EventRecord> events, std::string_view stay_id) {
    for (std::size_t i = 1; i < events.size(); ++i) {
        if (events[i].time_min < events[i - 1].time_min) {
            throw IngestionError("events for stay " + std::string(stay_id) +
                                 " are not sorted by time");
        }
    }
}

std::optional<double> numeric(const FeatureMap& features, FeatureKey key) {
    const auto it = features.find(key);
    if (it == features.end()) return std::nullopt;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    return std::nullopt;
}

bool sample_order(const Sample& a, const Sample& b) {
    if (a.stay_id != b.stay_id) return a.stay_id < b.stay_id;
    return a.t_eval < b.t_eval;
}

std::string build_config_digest(const BuildOptions& options) {
    const nlohmann::json canonical = {
        {"command", "build-cohort"},
        {"min_hour_gap", options.min_hour_gap},
        {"n_per_class", options.n_per_class},
        {"seed", options.seed},
    };
    return fnv1a64_hex(canonical.dump());
}

} // namespace

FeatureMap window_aggregate(std::span<const EventRecord> stay_events,
                            std::string_view stay_id, int t_eval) {
    check_sorted(stay_events, stay_id);
    const int t = t_eval * 60;
    FeatureMap out;

    out[FeatureKey::PainMaxLast1h] = max_over(stay_events, EventKind::Pain, t - 60, t);
    out[FeatureKey::RassWindowLast1h] = rass_window(stay_events, t - 60, t);
    out[FeatureKey::HrMedianLast1h] = median_over(stay_events, EventKind::Hr, t - 60, t);

    const MapSummary map = summarize_map(stay_events, t - 60, t);
    out[FeatureKey::MapMedianLast1h] = map.median;
    out[FeatureKey::MapLowMinutesLast1hThr65] = map.low65_minutes;
    out[FeatureKey::MapLowMinutesLast1hThr60] = map.low60_minutes;
    out[FeatureKey::HasMapCoverageLast1h] = map.has_coverage;
    out[FeatureKey::MapCoveredMinutesLast1h] = map.covered_minutes;

    out[FeatureKey::NorepiEqDoseMax1h] = max_over(stay_events, EventKind::NorepiEq, t - 60, t);
    out[FeatureKey::Spo2Latest1h] = latest_over(stay_events, EventKind::Spo2, t - 60, t);
    out[FeatureKey::TemperatureLatest4h] = latest_over(stay_events, EventKind::Temp, t - 240, t);
    out[FeatureKey::LactateLatest6h] = latest_over(stay_events, EventKind::Lactate, t - 360, t);
    out[FeatureKey::UrineOutputMlkghr6h] = mean_over(stay_events, EventKind::UrineRate, t - 360, t);
    out[FeatureKey::RhythmRecent6h] = latest_string_over(stay_events, EventKind::Rhythm, t - 360, t);
    out[FeatureKey::WbcLatest24h] = latest_over(stay_events, EventKind::Wbc, t - 1440, t);

    out[FeatureKey::SofaTotal] = hourly_value(stay_events, EventKind::SofaTotal, t_eval);
    out[FeatureKey::SofaResp] = hourly_value(stay_events, EventKind::SofaResp, t_eval);
    out[FeatureKey::SofaCoag] = hourly_value(stay_events, EventKind::SofaCoag, t_eval);
    out[FeatureKey::SofaLiver] = hourly_value(stay_events, EventKind::SofaLiver, t_eval);
    out[FeatureKey::SofaCardiovascular] = hourly_value(stay_events, EventKind::SofaCardio, t_eval);
    out[FeatureKey::SofaCns] = hourly_value(stay_events, EventKind::SofaCns, t_eval);
    out[FeatureKey::SofaRenal] = hourly_value(stay_events, EventKind::SofaRenal, t_eval);

    return out;
}

Inclusion check_inclusion(const FeatureMap& features) {
    const auto pain = numeric(features, FeatureKey::PainMaxLast1h);
    const auto rass_it = features.find(FeatureKey::RassWindowLast1h);
    const RassWindow* rass = nullptr;
    if (rass_it != features.end()) rass = std::get_if<RassWindow>(&rass_it->second);

    if (!pain || !rass) return {false, "missing_subjective"};
    if (*pain != 0.0) return {false, "pain"};
    if (rass->n < 1) return {false, "rass_n"};
    if (rass->max > 0) return {false, "rass_max"};
    if (rass->min <= -3) return {false, "rass_min"};

    const auto low65 = numeric(features, FeatureKey::MapLowMinutesLast1hThr65);
    if (!low65 || !(*low65 > 5.0)) return {false, "map_burden"};

    const auto cov_it = features.find(FeatureKey::HasMapCoverageLast1h);
    const bool* coverage =
        cov_it != features.end() ? std::get_if<bool>(&cov_it->second) : nullptr;
    if (!coverage || !*coverage) return {false, "map_coverage"};

    return {true, ""};
}

Label compute_label(int sofa_at_t, std::span<const int> sofa_next_12h) {
    for (const int v : sofa_next_12h) {
        if (v - sofa_at_t >= 2) return Label::Positive;
    }
    return Label::Negative;
}

std::vector<Sample> balanced_sample(const std::vector<Sample>& pool,
                                    std::size_t n_per_class, std::uint64_t seed) {
    std::vector<Sample> positives, negatives;
    for (const auto& s : pool) {
        (s.label == Label::Positive ? positives : negatives).push_back(s);
    }
    if (positives.size() < n_per_class) {
        throw ValidationError("insufficient POSITIVE samples: have " +
                              std::to_string(positives.size()) + ", need " +
                              std::to_string(n_per_class));
    }
    if (negatives.size() < n_per_class) {
        throw ValidationError("insufficient NEGATIVE samples: have " +
                              std::to_string(negatives.size()) + ", need " +
                              std::to_string(n_per_class));
    }
    std::sort(positives.begin(), positives.end(), sample_order);
    std::sort(negatives.begin(), negatives.end(), sample_order);

    Rng rng(seed);
    deterministic_shuffle(positives, rng);
    deterministic_shuffle(negatives, rng);

    std::vector<Sample> out;
    out.reserve(2 * n_per_class);
    out.insert(out.end(), positives.begin(), positives.begin() + n_per_class);
    out.insert(out.end(), negatives.begin(), negatives.begin() + n_per_class);
    std::sort(out.begin(), out.end(), sample_order);
    return out;
}

BuildResult build_benchmark(const EventSet& events, const BuildOptions& options) {
    BuildResult result;
    result.stats.ingest = events.stats;
    result.config_digest = build_config_digest(options);

    std::vector<Sample> pool;
    for (const auto& [stay_id, stay_events] : events.by_stay) {
        if (stay_events.empty()) continue;
        const int last_hour = stay_events.back().time_min / 60;

        // Hourly SOFA series for labeling, indexed by hour.
        std::map<int, int> sofa_by_hour;
        for (int h = 1; h <= last_hour; ++h) {
            const auto v = hourly_value(stay_events, EventKind::SofaTotal, h);
            if (const auto* d = std::get_if<double>(&v)) {
                sofa_by_hour[h] = static_cast<int>(*d);
            }
        }

        int last_kept = std::numeric_limits<int>::min();
        for (int h = 1; h <= last_hour; ++h) {
            ++result.stats.hours_considered;
            FeatureMap features = window_aggregate(stay_events, stay_id, h);
            const Inclusion inclusion = check_inclusion(features);
            if (!inclusion.include) continue;
            ++result.stats.included;

            const auto sofa_it = sofa_by_hour.find(h);
            if (sofa_it == sofa_by_hour.end()) continue; // unlabeled without SOFA at t
            std::vector<int> follow_up;
            for (int k = h + 1; k <= std::min(h + 12, last_hour); ++k) {
                const auto it = sofa_by_hour.find(k);
                if (it != sofa_by_hour.end()) follow_up.push_back(it->second);
            }
            const Label label = compute_label(sofa_it->second, follow_up);

            if (last_kept != std::numeric_limits<int>::min() &&
                h - last_kept < options.min_hour_gap) {
                continue; // overlap exclusion
            }
            last_kept = h;
            ++result.stats.kept_after_overlap;

            Sample sample;
            sample.stay_id = stay_id;
            sample.t_eval = h;
            sample.label = label;
            for (auto& [key, value] : features) {
                sample.features[key] = TaggedValue{std::move(value), Sensitivity::SensitivePatient};
            }
            (label == Label::Positive ? result.stats.pool_positive
                                      : result.stats.pool_negative)++;
            pool.push_back(std::move(sample));
        }
    }

    result.samples = balanced_sample(pool, options.n_per_class, options.seed);

    // Re-validate every emitted sample.
    for (const auto& sample : result.samples) {
        FeatureMap plain;
        for (const auto& [key, tagged] : sample.features) plain[key] = tagged.value;
        const Inclusion inclusion = check_inclusion(plain);
        if (!inclusion.include) {
            throw ValidationError("emitted sample " + sample.id() +
                                  " fails inclusion re-validation: " + inclusion.reason);
        }
    }
    return result;
}

void write_benchmark(const std::filesystem::path& path, const BuildResult& result) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open benchmark output: " + path.string());
    const nlohmann::json header = {
        {"file_kind", "bench"},
        {"config_digest", result.config_digest},
        {"n_samples", result.samples.size()},
    };
    out << header.dump() << "\n";
    for (const auto& sample : result.samples) {
        out << sample_to_json(sample).dump() << "\n";
    }
}

Bench read_benchmark(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open benchmark file: " + path.string());
    Bench bench;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        if (j.contains("file_kind")) {
            if (j.at("file_kind") == "bench" && j.contains("config_digest")) {
                bench.config_digest = j.at("config_digest").get<std::string>();
            }
            continue;
        }
        bench.samples.push_back(sample_from_json(j));
    }
    if (bench.samples.empty()) {
        throw ValidationError("benchmark file has no samples: " + path.string());
    }
    return bench;
}

} // namespace care::cohort
