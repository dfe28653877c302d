#pragma once

#include <sys/types.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fleetlab::harness {

using json = nlohmann::json;

/// A supervised child process with stdout/stderr captured to a log file.
class Process {
public:
    Process() = default;
    Process(Process&&) noexcept;
    Process& operator=(Process&&) noexcept;
    Process(const Process&) = delete;
    Process& operator=(const Process&) = delete;
    ~Process();

    static Process spawn(const std::vector<std::string>& argv,
                         const std::filesystem::path& log_path);  // throws on failure

    pid_t pid() const { return pid_; }
    bool alive() const;
    /// SIGTERM, escalate to SIGKILL after grace; reaps the child.
    void terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(2000));

private:
    pid_t pid_ = -1;
};

struct BinPaths {
    std::filesystem::path bridge;
    std::filesystem::path client;

    /// Looks next to the current executable, then in FLEETLAB_BIN_DIR.
    static BinPaths discover();
};

struct ClientSpec {
    std::string client_id;
    std::string model = "type_a";
    std::uint64_t seed = 1;
    double exec_timeout_s = 10.0;
};

struct FleetOptions {
    double time_scale = 1000.0;
    double client_timeout_s = 10.0;
    double exec_timeout_s = 10.0;
    double deploy_ack_timeout_s = 10.0;
};

/// One bridge process plus n client processes on loopback, with working
/// directories and logs under a common root.
class Fleet {
public:
    Fleet(BinPaths bins, std::filesystem::path workdir, FleetOptions options);
    ~Fleet();

    void start_bridge();
    /// Blocks until the bridge accepts connections; returns the port.
    std::uint16_t bridge_port();
    void start_client(const ClientSpec& spec);
    /// Waits until `count` clients are registered. Throws on timeout.
    void await_registered(std::size_t count, double timeout_s = 15.0);

    void kill_client(const std::string& client_id);
    void stop_all();

    /// {node name -> {pid, start_time_ms}} from live health probes.
    json snapshot_start_times();

    std::filesystem::path audit_path() const;
    const std::filesystem::path& workdir() const { return workdir_; }
    std::vector<std::string> client_ids() const;

private:
    friend struct BenchAccess;
    BinPaths bins_;
    std::filesystem::path workdir_;
    FleetOptions options_;
    std::optional<Process> bridge_;
    std::uint16_t port_ = 0;
    std::map<std::string, Process> clients_;
    std::map<std::string, ClientSpec> client_specs_;
};

struct ScenarioReport {
    bool ok = true;
    std::vector<json> checks;  // {name, ok, detail}

    json to_json() const;
    void add(const std::string& name, bool ok, const std::string& detail);
};

/// Executes a scenario file: timed actions against a fresh fleet, then
/// assertions over the audit log and fetched iteration records.
ScenarioReport run_scenario(const json& scenario, const std::filesystem::path& scenario_dir,
                            const std::filesystem::path& workdir, const BinPaths& bins);

struct BenchReport {
    double replace_offboard_ms = 0;
    double replace_onboard_ms = 0;
    double redeploy_ms = 0;
    int runs = 0;
    int clients = 0;
    bool start_times_constant_during_replace = false;
    bool start_times_changed_on_redeploy = false;

    double ratio_offboard() const { return redeploy_ms / replace_offboard_ms; }
    double ratio_onboard() const { return redeploy_ms / replace_onboard_ms; }
    json to_json() const;
};

/// Replacement latency versus scripted stop/copy/restart redeployment.
BenchReport bench_replace_vs_redeploy(const BinPaths& bins, const std::filesystem::path& workdir,
                                      int n_clients, int runs);

/// Audit-log helpers shared by assertions and tests.
/// Returns per (assignment_id, iteration) the set of kept signatures.
std::map<std::pair<std::string, std::int64_t>, std::vector<std::string>> kept_signatures(
    const std::vector<json>& audit_lines);

/// True when every delivered iteration kept exactly one signature.
bool audit_signature_pure(const std::vector<json>& audit_lines, std::string* detail);

}  // namespace fleetlab::harness
