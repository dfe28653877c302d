#include "fleetlab/sensors.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "fleetlab/util.hpp"

namespace fleetlab::sensors {

Xorshift64Star::Xorshift64Star(std::uint64_t seed) {
    state_ = splitmix64(seed);
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;
}

std::uint64_t Xorshift64Star::next_u64() {
    std::uint64_t s = state_;
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    state_ = s;
    return s * 0x2545f4914f6cdd1dull;
}

double Xorshift64Star::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Xorshift64Star::next_unit_open_low() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

SignalCatalog SignalCatalog::defaults() {
    SignalCatalog cat;
    cat.signals["speed"] = GaussianGen{80.0, 15.0};
    cat.signals["rpm"] = GaussianGen{1800.0, 250.0};
    cat.signals["engine_temp"] = GaussianGen{88.0, 4.0};
    cat.signals["odometer"] = RampGen{0.0, 1.0};
    return cat;
}

SignalCatalog SignalCatalog::from_json(const json& doc) {
    SignalCatalog cat;
    if (!doc.is_object()) throw StreamError("signal catalog must be a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const json& g = it.value();
        std::string kind = g.value("kind", "");
        if (kind == "gaussian") {
            cat.signals[it.key()] = GaussianGen{g.value("mean", 0.0), g.value("stddev", 1.0)};
        } else if (kind == "ramp") {
            cat.signals[it.key()] = RampGen{g.value("start", 0.0), g.value("step", 1.0)};
        } else if (kind == "replay") {
            if (!g.contains("file")) throw StreamError("replay generator requires a file");
            cat.signals[it.key()] = ReplayGen{g["file"].get<std::string>()};
        } else {
            throw StreamError("unknown generator kind for signal " + it.key());
        }
    }
    return cat;
}

std::uint64_t stream_seed(std::uint64_t config_seed, const std::string& signal_name) {
    return config_seed ^ fnv1a64(signal_name);
}

SignalStream::SignalStream(const std::string& name, const Generator& gen, std::uint64_t seed)
    : name_(name), gen_(gen), rng_(seed) {
    if (const auto* replay = std::get_if<ReplayGen>(&gen_)) {
        std::ifstream in(replay->file);
        if (!in) throw StreamError("cannot open replay file " + replay->file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                replay_values_.push_back(std::stod(line));
            } catch (const std::exception&) {
                throw StreamError("bad replay value in " + replay->file + ": " + line);
            }
        }
    }
}

double SignalStream::next_sample() {
    double value = 0;
    if (const auto* g = std::get_if<GaussianGen>(&gen_)) {
        if (pending_gaussian_) {
            value = *pending_gaussian_;
            pending_gaussian_.reset();
        } else {
            // Box-Muller; u1 in (0,1] keeps the log finite.
            double u1 = rng_.next_unit_open_low();
            double u2 = rng_.next_unit();
            double r = std::sqrt(-2.0 * std::log(u1));
            double theta = 2.0 * std::numbers::pi * u2;
            value = g->mean + g->stddev * (r * std::cos(theta));
            pending_gaussian_ = g->mean + g->stddev * (r * std::sin(theta));
        }
    } else if (const auto* ramp = std::get_if<RampGen>(&gen_)) {
        value = ramp->start + ramp->step * static_cast<double>(cursor_);
    } else {
        if (cursor_ >= replay_values_.size())
            throw StreamError("replay stream " + name_ + " exhausted after " +
                              std::to_string(replay_values_.size()) + " samples");
        value = replay_values_[cursor_];
    }
    ++cursor_;
    return value;
}

SignalStream open_stream(const std::string& name, const SignalCatalog& catalog,
                         std::uint64_t seed) {
    auto it = catalog.signals.find(name);
    if (it == catalog.signals.end()) throw StreamError("unknown signal: " + name);
    return SignalStream(name, it->second, seed);
}

}  // namespace fleetlab::sensors
