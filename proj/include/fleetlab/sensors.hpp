#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace fleetlab::sensors {

using json = nlohmann::json;

// Deterministic stand-in for the vehicle bus. Generator sequences are fully
// determined by (kind, parameters, seed); the exact PRNG recipe is spelled
// out in the README so independent programs can reproduce every sample.

/// xorshift64* seeded through splitmix64. state0 = splitmix64(seed), with a
/// fixed fallback constant when that yields zero.
class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1): (next_u64() >> 11) * 2^-53.
    double next_unit();
    /// Uniform in (0, 1]: ((next_u64() >> 11) + 1) * 2^-53.
    double next_unit_open_low();

private:
    std::uint64_t state_;
};

struct GaussianGen {
    double mean = 0;
    double stddev = 1;
};
struct RampGen {
    double start = 0;
    double step = 1;
};
struct ReplayGen {
    std::string file;  // one decimal value per line, UTF-8
};

using Generator = std::variant<GaussianGen, RampGen, ReplayGen>;

struct SignalCatalog {
    std::map<std::string, Generator> signals;

    static SignalCatalog defaults();
    static SignalCatalog from_json(const json& doc);
    bool has(const std::string& name) const { return signals.count(name) > 0; }
};

class StreamError : public std::runtime_error {
public:
    explicit StreamError(const std::string& what) : std::runtime_error(what) {}
};

/// Single-cursor sample source. Independent cursors per open_stream call.
class SignalStream {
public:
    /// Throws StreamError for an unknown signal or an unreadable replay file.
    SignalStream(const std::string& name, const Generator& gen, std::uint64_t seed);

    /// Sample at the cursor; advances. Throws StreamError when a replay
    /// stream is exhausted.
    double next_sample();

    const std::string& name() const { return name_; }
    std::uint64_t cursor() const { return cursor_; }

private:
    std::string name_;
    Generator gen_;
    Xorshift64Star rng_;
    std::uint64_t cursor_ = 0;
    std::vector<double> replay_values_;
    std::optional<double> pending_gaussian_;
};

/// Stream seed derivation: splitmix input is seed XOR fnv1a64(signal name).
std::uint64_t stream_seed(std::uint64_t config_seed, const std::string& signal_name);

/// Throws StreamError for signals missing from the catalog.
SignalStream open_stream(const std::string& name, const SignalCatalog& catalog,
                         std::uint64_t seed);

}  // namespace fleetlab::sensors
