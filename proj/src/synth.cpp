#include "care/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "care/common.hpp"

namespace care::synth {

namespace {

double round_to(double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return std::round(v * scale) / scale;
}

std::string stay_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05zu", index);
    return std::string(buf);
}

struct StayPlan {
    std::vector<bool> episode;   // per hour
    std::vector<int> sofa_total; // per hour, derived from components
};

void emit(std::vector<EventRecord>& out, const std::string& stay, int time_min,
          EventKind kind, double value) {
    out.push_back(EventRecord{stay, time_min, kind, value});
}

void emit(std::vector<EventRecord>& out, const std::string& stay, int time_min,
          EventKind kind, std::string value) {
    out.push_back(EventRecord{stay, time_min, kind, std::move(value)});
}

void generate_stay(std::vector<EventRecord>& out, const std::string& stay, int hours,
                   Rng& rng) {
    const int end_min = hours * 60;

    // Episode schedule: stretches of active deterioration.
    std::vector<bool> episode(hours + 1, false);
    int active_until = 0;
    for (int h = 1; h <= hours; ++h) {
        if (h > active_until && rng.bernoulli(0.025)) {
            active_until = h + static_cast<int>(rng.uniform_int(6, 12));
        }
        episode[h] = h <= active_until;
    }

    // SOFA component walks; two components carry each episode's rise.
    int comps[6] = {static_cast<int>(rng.uniform_int(0, 1)),
                    static_cast<int>(rng.uniform_int(0, 1)),
                    0,
                    static_cast<int>(rng.uniform_int(0, 2)),
                    static_cast<int>(rng.uniform_int(0, 1)),
                    static_cast<int>(rng.uniform_int(0, 1))};
    const int riser_a = static_cast<int>(rng.uniform_int(0, 5));
    const int riser_b = static_cast<int>(rng.uniform_int(0, 5));
    const EventKind comp_kinds[6] = {EventKind::SofaResp,  EventKind::SofaCoag,
                                     EventKind::SofaLiver, EventKind::SofaCardio,
                                     EventKind::SofaCns,   EventKind::SofaRenal};

    std::vector<bool> pressor_hour(hours + 1, false);
    for (int h = 1; h <= hours; ++h) {
        const bool rising = episode[h] && (h == 1 || !episode[h - 1] || rng.bernoulli(0.4));
        for (int c = 0; c < 6; ++c) {
            if (rising && (c == riser_a || c == riser_b)) {
                comps[c] = std::min(4, comps[c] + 1);
            } else if (rng.bernoulli(0.05)) {
                comps[c] += rng.bernoulli(0.5) ? 1 : -1;
                comps[c] = std::max(0, std::min(4, comps[c]));
            }
        }
        if (episode[h] && rng.bernoulli(0.5)) {
            pressor_hour[h] = true;
            comps[3] = std::max(comps[3], static_cast<int>(rng.uniform_int(1, 3)));
        }
        int total = 0;
        for (const int c : comps) total += c;
        total = std::min(total, 24);
        const int t = h * 60;
        emit(out, stay, t, EventKind::SofaTotal, total);
        for (int c = 0; c < 6; ++c) emit(out, stay, t, comp_kinds[c], comps[c]);
    }

    // MAP stream with intermittent hypotensive dips.
    const double base_map = rng.uniform(71, 83);
    std::vector<std::pair<int, int>> dips; // [from, to) minutes with low MAP
    for (int h = 1; h <= hours; ++h) {
        const double dip_p = episode[h] ? 0.8 : 0.55;
        if (rng.bernoulli(dip_p)) {
            const int len = static_cast<int>(rng.uniform_int(7, 30));
            const int start = (h - 1) * 60 + static_cast<int>(rng.uniform_int(0, 59 - 7));
            dips.emplace_back(start, std::min(start + len, h * 60 + 30));
        }
    }
    const auto in_dip = [&dips](int t) {
        for (const auto& [from, to] : dips) {
            if (t >= from && t < to) return true;
        }
        return false;
    };
    for (int t = static_cast<int>(rng.uniform_int(0, 4)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(4, 7))) {
        double v;
        if (in_dip(t)) {
            v = rng.uniform(54, 64.4);
        } else {
            v = base_map + rng.uniform(-4, 7);
        }
        emit(out, stay, t, EventKind::Map, std::round(v));
    }

    // Heart rate.
    const double base_hr = rng.uniform(72, 98);
    for (int t = static_cast<int>(rng.uniform_int(0, 5)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(5, 9))) {
        const double bump = episode[std::min(hours, t / 60 + 1)] ? 9 : 0;
        emit(out, stay, t, EventKind::Hr, std::round(base_hr + bump + rng.uniform(-6, 6)));
    }

    // Bedside pain and RASS: frequent, mostly reassuring.
    for (int t = static_cast<int>(rng.uniform_int(5, 40)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(40, 75))) {
        const double pain = rng.bernoulli(0.92) ? 0 : rng.uniform_int(1, 5);
        emit(out, stay, t, EventKind::Pain, pain);
    }
    for (int t = static_cast<int>(rng.uniform_int(5, 35)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(35, 70))) {
        const double p = rng.uniform();
        int rass = 0;
        if (p < 0.45) {
            rass = 0;
        } else if (p < 0.75) {
            rass = -1;
        } else if (p < 0.90) {
            rass = -2;
        } else if (p < 0.95) {
            rass = 1;
        } else {
            rass = -3;
        }
        emit(out, stay, t, EventKind::Rass, rass);
    }

    // Oxygenation, temperature, labs, urine, pressors, rhythm.
    for (int t = static_cast<int>(rng.uniform_int(0, 9)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(9, 13))) {
        const double drop = episode[std::min(hours, t / 60 + 1)] ? 2 : 0;
        emit(out, stay, t, EventKind::Spo2,
             std::min(100.0, std::round(rng.uniform(93, 100) - drop)));
    }
    for (int t = static_cast<int>(rng.uniform_int(30, 180)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(150, 210))) {
        const double bump = episode[std::min(hours, t / 60 + 1)] ? rng.uniform(0, 1.5) : 0;
        emit(out, stay, t, EventKind::Temp, round_to(rng.uniform(36.3, 37.8) + bump, 1));
    }
    for (int t = static_cast<int>(rng.uniform_int(60, 360)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(240, 400))) {
        const bool ep = episode[std::min(hours, t / 60 + 1)];
        const double v = ep ? rng.uniform(1.6, 4.6) : rng.uniform(0.6, 1.8);
        emit(out, stay, t, EventKind::Lactate, round_to(v, 1));
    }
    for (int t = static_cast<int>(rng.uniform_int(300, 900)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(600, 900))) {
        const double bump = episode[std::min(hours, t / 60 + 1)] ? rng.uniform(2, 6) : 0;
        emit(out, stay, t, EventKind::Wbc, round_to(rng.uniform(4.5, 13.5) + bump, 1));
    }
    for (int h = 1; h <= hours; ++h) {
        const int t = h * 60 - static_cast<int>(rng.uniform_int(1, 20));
        const double scale = episode[h] ? 0.5 : 1.0;
        emit(out, stay, t, EventKind::UrineRate,
             round_to(rng.uniform(0.35, 1.7) * scale, 2));
        if (pressor_hour[h]) {
            emit(out, stay, h * 60 - static_cast<int>(rng.uniform_int(1, 30)),
                 EventKind::NorepiEq, round_to(rng.uniform(0.03, 0.25), 2));
        }
    }
    for (int t = static_cast<int>(rng.uniform_int(10, 240)); t <= end_min;
         t += static_cast<int>(rng.uniform_int(180, 300))) {
        const double p = rng.uniform();
        std::string rhythm = "SR";
        if (p > 0.92) {
            rhythm = "AF";
        } else if (p > 0.87) {
            rhythm = "ST";
        }
        emit(out, stay, t, EventKind::Rhythm, rhythm);
    }
}

} // namespace

std::vector<EventRecord> generate_events(const GenerateOptions& options) {
    std::vector<EventRecord> out;
    for (std::size_t i = 0; i < options.stays; ++i) {
        Rng rng(splitmix64(options.seed ^ (0x517cc1b727220a95ull + i)));
        generate_stay(out, stay_name(i), options.hours, rng);
    }
    return out;
}

void write_events_jsonl(const std::filesystem::path& path,
                        const std::vector<EventRecord>& events) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open events output: " + path.string());
    for (const auto& event : events) {
        nlohmann::json j = {
            {"stay_id", event.stay_id},
            {"time_min", event.time_min},
            {"kind", std::string(event_kind_name(event.kind))},
        };
        if (const auto* s = std::get_if<std::string>(&event.value)) {
            j["value"] = *s;
        } else {
            j["value"] = std::get<double>(event.value);
        }
        out << j.dump() << "\n";
    }
}

} // namespace care::synth
