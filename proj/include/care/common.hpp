#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace care {

// Error hierarchy. Validation problems exit the CLI with code 1,
// backend problems (after retries) with code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IngestionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PrivacyViolationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::uint64_t splitmix64(std::uint64_t state);

// Order-sensitive hash of several string parts, with separators so that
// ("ab","c") and ("a","bc") differ.
std::uint64_t stable_hash64(std::initializer_list<std::string_view> parts);

// Deterministic RNG: mt19937_64 (fully specified by the standard) plus
// hand-rolled draws, so results are identical across platforms and
// standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Unbiased draw in [0, n) via rejection sampling.
    std::uint64_t below(std::uint64_t n);

    // Inclusive integer range.
    long uniform_int(long lo, long hi);

    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

template <class T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.below(i)]);
    }
}

// Canonical text form of a numeric value: integral values without a
// fractional part ("64"), everything else via shortest %g ("1.1").
std::string render_number(double v);

std::string iso8601_utc_now();

std::string trim(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

} // namespace care
