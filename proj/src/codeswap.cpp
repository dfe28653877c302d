#include "fleetlab/codeswap.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>

#include "fleetlab/md5.hpp"
#include "fleetlab/util.hpp"

namespace fleetlab::codeswap {

namespace fs = std::filesystem;

const char* target_name(Target t) {
    return t == Target::onboard ? "onboard" : "offboard";
}

std::optional<Target> target_from_name(std::string_view name) {
    if (name == "onboard") return Target::onboard;
    if (name == "offboard") return Target::offboard;
    return std::nullopt;
}

CustomModule CustomModule::make(std::string source, std::string user_id, Target target) {
    CustomModule m;
    m.signature = codeswap::signature(source);
    m.source = std::move(source);
    m.user_id = std::move(user_id);
    m.target = target;
    m.deployed_at_ms = now_unix_ms();
    return m;
}

std::string signature(std::string_view source) {
    return md5_hex(source);
}

json ValidationReport::to_json() const {
    json doc;
    doc["ok"] = ok;
    doc["violations"] = json::array();
    for (const auto& v : violations)
        doc["violations"].push_back({{"stage", v.stage}, {"message", v.message}});
    return doc;
}

std::vector<std::vector<double>> probe_inputs(std::uint64_t seed) {
    std::vector<std::vector<double>> inputs;
    inputs.push_back({0.0, 1.0, 2.0});
    std::uint64_t state = seed;
    auto next = [&state]() {
        state = splitmix64(state);
        return state;
    };
    for (int i = 0; i < 8; ++i) {
        std::size_t len = 1 + next() % 64;
        std::vector<double> v(len);
        for (auto& x : v) {
            // uniform in [-100, 100]
            x = (static_cast<double>(next() >> 11) * 0x1.0p-53) * 200.0 - 100.0;
        }
        inputs.push_back(std::move(v));
    }
    return inputs;
}

ValidationReport validate_custom(const std::string& source, Target target,
                                 const ValidateOptions& options) {
    ValidationReport report;
    auto reject = [&](std::string stage, std::string message) {
        report.violations.push_back({std::move(stage), std::move(message)});
        return report;
    };

    // Stage 1: syntax load.
    script::Program prog;
    try {
        prog = script::parse_program(source);
    } catch (const script::ParseError& e) {
        return reject("syntax", e.what());
    }

    // Stage 2: entry point and arity.
    const script::Function* entry = prog.find("custom_code");
    if (!entry) return reject("entry_point", "no function custom_code defined");
    if (entry->params.size() != 1)
        return reject("entry_point", "custom_code takes exactly one argument, found " +
                                         std::to_string(entry->params.size()));

    // Stages 3+4: probe runs with per-probe return-type checks. Probes see
    // the parameter environment of their target: off-board modules always
    // receive input_count/input_length at execution time.
    std::uint64_t seed = options.probe_seed;
    if (seed == 0) seed = fnv1a64(signature(source));
    sandbox::json (*params_fn)(const std::vector<double>&) = nullptr;
    if (target == Target::offboard) {
        params_fn = [](const std::vector<double>& input) -> sandbox::json {
            return {{"input_count", 1}, {"input_length", input.size()}};
        };
    }
    auto probes = sandbox::run_probes(source, probe_inputs(seed), options.probe_timeout,
                                      params_fn);
    if (!probes.ok) return reject(probes.stage, probes.message);

    // Stage 5: capability scan over the whole source, including branches the
    // probes never reached.
    auto restricted = script::scan_restricted_names(source);
    if (!restricted.empty()) {
        for (const auto& name : restricted)
            report.violations.push_back({"capability", "restricted name: " + name});
        return report;
    }

    report.ok = true;
    return report;
}

CodeStore::CodeStore(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
}

fs::path CodeStore::path_for(const std::string& user_id, Target target) const {
    return dir_ / (user_id + "." + target_name(target) + ".script");
}

void CodeStore::store(const CustomModule& m) {
    if (!is_safe_identifier(m.user_id))
        throw std::invalid_argument("unsafe user id: " + m.user_id);
    static std::atomic<std::uint64_t> counter{0};
    fs::path final_path = path_for(m.user_id, m.target);
    fs::path tmp_path = final_path;
    tmp_path += ".tmp." + std::to_string(::getpid()) + "." +
                std::to_string(counter.fetch_add(1, std::memory_order_relaxed));
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp_path.string());
        out.write(m.source.data(), static_cast<std::streamsize>(m.source.size()));
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp_path.string());
    }
    fs::rename(tmp_path, final_path);
}

std::optional<CustomModule> CodeStore::load(const std::string& user_id, Target target) const {
    fs::path path = path_for(user_id, target);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string source((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) return std::nullopt;

    CustomModule m;
    m.source = std::move(source);
    m.user_id = user_id;
    m.target = target;
    m.signature = signature(m.source);
    std::error_code ec;
    auto mtime = fs::last_write_time(path, ec);
    if (!ec) {
        m.deployed_at_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               mtime.time_since_epoch())
                               .count();
    }
    return m;
}

const char* ExecFailure::kind_name() const {
    switch (kind) {
        case Kind::not_deployed: return "not_deployed";
        case Kind::timeout: return "timeout";
        case Kind::fault: return "fault";
        case Kind::capability: return "capability";
        case Kind::return_type: return "return_type";
    }
    return "?";
}

ExecOutcome execute_custom(const CustomModule& m, const std::vector<double>& input,
                           const json& params, std::chrono::milliseconds timeout) {
    ExecOutcome outcome;
    sandbox::Outcome run = sandbox::run_entry(m.source, input, params, timeout);
    if (run.ok) {
        outcome.result = CustomResult{std::move(run.value), m.signature, run.elapsed_ms};
        return outcome;
    }
    ExecFailure failure;
    failure.message = run.message;
    failure.elapsed_ms = run.elapsed_ms;
    switch (run.error) {
        case sandbox::ErrorKind::timeout: failure.kind = ExecFailure::Kind::timeout; break;
        case sandbox::ErrorKind::capability: failure.kind = ExecFailure::Kind::capability; break;
        case sandbox::ErrorKind::return_type: failure.kind = ExecFailure::Kind::return_type; break;
        default: failure.kind = ExecFailure::Kind::fault; break;
    }
    outcome.failure = failure;
    return outcome;
}

}  // namespace fleetlab::codeswap
