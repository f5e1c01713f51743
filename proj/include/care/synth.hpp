#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "care/events.hpp"

namespace care::synth {

struct GenerateOptions {
    std::size_t stays = 400;
    int hours = 72;           // stay length
    std::uint64_t seed = 0;
};

// Deterministic synthetic ICU event streams with frequent sign-symptom
// discordance: calm bedside observations over intermittent hypotensive
// burden, plus deterioration episodes that drive the SOFA walk upward.
// Each stay is generated from its own hash-derived generator, so output
// is independent of iteration order and stable across platforms.
std::vector<EventRecord> generate_events(const GenerateOptions& options);

void write_events_jsonl(const std::filesystem::path& path,
                        const std::vector<EventRecord>& events);

} // namespace care::synth
