#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace care {

enum class EventKind {
    Pain,
    Rass,
    Map,
    Hr,
    Spo2,
    Temp,
    Wbc,
    Lactate,
    UrineRate,
    NorepiEq,
    Rhythm,
    SofaTotal,
    SofaResp,
    SofaCoag,
    SofaLiver,
    SofaCardio,
    SofaCns,
    SofaRenal,
};

std::string_view event_kind_name(EventKind kind);
std::optional<EventKind> event_kind_from_name(std::string_view name);

// Rhythm events carry a categorical token; everything else is numeric.
using EventValue = std::variant<double, std::string>;

// One time-stamped clinical observation within a stay.
struct EventRecord {
    std::string stay_id;
    int time_min = 0;
    EventKind kind = EventKind::Map;
    EventValue value;
};

// Throws ValidationError on range violations (pain outside 0..10,
// RASS outside -5..+4, SOFA components outside 0..4, total outside 0..24,
// negative time, categorical/numeric mismatch).
void validate_event(const EventRecord& event);

struct IngestStats {
    std::size_t accepted = 0;
    std::size_t rejected_unknown_kind = 0;
    std::size_t rejected_invalid = 0;
};

// Events grouped by stay and stably sorted by time; downstream windowed
// aggregation requires (and re-checks) the sort.
struct EventSet {
    std::map<std::string, std::vector<EventRecord>> by_stay;
    IngestStats stats;
};

// Reads a JSON-lines or CSV event file; format picked by extension
// (.csv => CSV, anything else JSONL). Unknown kinds and invalid records
// are counted and skipped, malformed lines raise IngestionError.
EventSet read_events(const std::filesystem::path& path);

EventSet group_events(std::vector<EventRecord> records, IngestStats stats = {});

} // namespace care
