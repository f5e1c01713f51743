#include "care/events.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "care/common.hpp"

namespace care {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 18> kKindNames = {{
    {EventKind::Pain, "PAIN"},
    {EventKind::Rass, "RASS"},
    {EventKind::Map, "MAP"},
    {EventKind::Hr, "HR"},
    {EventKind::Spo2, "SPO2"},
    {EventKind::Temp, "TEMP"},
    {EventKind::Wbc, "WBC"},
    {EventKind::Lactate, "LACTATE"},
    {EventKind::UrineRate, "URINE_RATE"},
    {EventKind::NorepiEq, "NOREPI_EQ"},
    {EventKind::Rhythm, "RHYTHM"},
    {EventKind::SofaTotal, "SOFA_TOTAL"},
    {EventKind::SofaResp, "SOFA_RESP"},
    {EventKind::SofaCoag, "SOFA_COAG"},
    {EventKind::SofaLiver, "SOFA_LIVER"},
    {EventKind::SofaCardio, "SOFA_CARDIO"},
    {EventKind::SofaCns, "SOFA_CNS"},
    {EventKind::SofaRenal, "SOFA_RENAL"},
}};

bool is_integer(double v) { return std::isfinite(v) && v == std::floor(v); }

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

EventRecord parse_event_fields(std::string stay_id, int time_min,
                               const std::string& kind_name, EventValue value) {
    const auto kind = event_kind_from_name(kind_name);
    if (!kind) throw ValidationError("unknown event kind: " + kind_name);
    return EventRecord{std::move(stay_id), time_min, *kind, std::move(value)};
}

} // namespace

std::string_view event_kind_name(EventKind kind) {
    for (const auto& [k, n] : kKindNames) {
        if (k == kind) return n;
    }
    return "UNKNOWN";
}

std::optional<EventKind> event_kind_from_name(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

void validate_event(const EventRecord& event) {
    require(event.time_min >= 0, "event time must be >= 0");
    require(!event.stay_id.empty(), "event stay_id must be nonempty");
    const bool categorical = std::holds_alternative<std::string>(event.value);
    if (event.kind == EventKind::Rhythm) {
        require(categorical, "RHYTHM value must be categorical");
        return;
    }
    require(!categorical, std::string(event_kind_name(event.kind)) + " value must be numeric");
    const double v = std::get<double>(event.value);
    require(std::isfinite(v), "event value must be finite");
    switch (event.kind) {
        case EventKind::Pain:
            require(is_integer(v) && v >= 0 && v <= 10, "PAIN value must be an integer in [0,10]");
            break;
        case EventKind::Rass:
            require(is_integer(v) && v >= -5 && v <= 4, "RASS value must be an integer in [-5,4]");
            break;
        case EventKind::SofaTotal:
            require(is_integer(v) && v >= 0 && v <= 24, "SOFA_TOTAL must be an integer in [0,24]");
            break;
        case EventKind::SofaResp:
        case EventKind::SofaCoag:
        case EventKind::SofaLiver:
        case EventKind::SofaCardio:
        case EventKind::SofaCns:
        case EventKind::SofaRenal:
            require(is_integer(v) && v >= 0 && v <= 4,
                    "SOFA component must be an integer in [0,4]");
            break;
        default:
            break;
    }
}

EventSet group_events(std::vector<EventRecord> records, IngestStats stats) {
    EventSet set;
    set.stats = stats;
    for (auto& record : records) {
        set.by_stay[record.stay_id].push_back(std::move(record));
    }
    for (auto& [stay, events] : set.by_stay) {
        std::stable_sort(events.begin(), events.end(),
                         [](const EventRecord& a, const EventRecord& b) {
                             return a.time_min < b.time_min;
                         });
    }
    return set;
}

namespace {

EventSet read_events_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open events file: " + path.string());
    std::vector<EventRecord> records;
    IngestStats stats;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError(path.string() + ":" + std::to_string(line_no) +
                                 ": malformed JSON: " + e.what());
        }
        try {
            const std::string kind_name = j.at("kind").get<std::string>();
            EventValue value;
            if (j.at("value").is_string()) {
                value = j.at("value").get<std::string>();
            } else {
                value = j.at("value").get<double>();
            }
            EventRecord record = parse_event_fields(j.at("stay_id").get<std::string>(),
                                                    j.at("time_min").get<int>(),
                                                    kind_name, std::move(value));
            validate_event(record);
            records.push_back(std::move(record));
            ++stats.accepted;
        } catch (const ValidationError& e) {
            if (std::string(e.what()).rfind("unknown event kind", 0) == 0) {
                ++stats.rejected_unknown_kind;
            } else {
                ++stats.rejected_invalid;
            }
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError(path.string() + ":" + std::to_string(line_no) +
                                 ": bad event record: " + e.what());
        }
    }
    return group_events(std::move(records), stats);
}

EventSet read_events_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open events file: " + path.string());
    std::vector<EventRecord> records;
    IngestStats stats;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split(trim(line), ',');
        if (header.empty()) {
            header = fields;
            const std::vector<std::string> expected = {"stay_id", "time_min", "kind", "value"};
            if (header != expected) {
                throw IngestionError(path.string() +
                                     ": CSV header must be stay_id,time_min,kind,value");
            }
            continue;
        }
        if (fields.size() != 4) {
            throw IngestionError(path.string() + ":" + std::to_string(line_no) +
                                 ": expected 4 CSV fields");
        }
        try {
            const std::string& kind_name = fields[2];
            EventValue value;
            const auto kind = event_kind_from_name(kind_name);
            if (kind && *kind == EventKind::Rhythm) {
                value = fields[3];
            } else {
                try {
                    value = std::stod(fields[3]);
                } catch (const std::exception&) {
                    throw ValidationError("non-numeric value: " + fields[3]);
                }
            }
            EventRecord record = parse_event_fields(fields[0], std::stoi(fields[1]),
                                                    kind_name, std::move(value));
            validate_event(record);
            records.push_back(std::move(record));
            ++stats.accepted;
        } catch (const ValidationError& e) {
            if (std::string(e.what()).rfind("unknown event kind", 0) == 0) {
                ++stats.rejected_unknown_kind;
            } else {
                ++stats.rejected_invalid;
            }
        } catch (const std::exception& e) {
            throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": " +
                                 e.what());
        }
    }
    return group_events(std::move(records), stats);
}

} // namespace

EventSet read_events(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return read_events_csv(path);
    return read_events_jsonl(path);
}

} // namespace care
