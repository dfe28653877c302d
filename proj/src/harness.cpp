#include "fleetlab/harness.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "fleetlab/audit.hpp"
#include "fleetlab/codeswap.hpp"
#include "fleetlab/session.hpp"
#include "fleetlab/util.hpp"

namespace fleetlab::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Process

Process::Process(Process&& other) noexcept : pid_(other.pid_) {
    other.pid_ = -1;
}

Process& Process::operator=(Process&& other) noexcept {
    if (this != &other) {
        terminate();
        pid_ = other.pid_;
        other.pid_ = -1;
    }
    return *this;
}

Process::~Process() {
    terminate();
}

Process Process::spawn(const std::vector<std::string>& argv, const fs::path& log_path) {
    if (argv.empty()) throw std::runtime_error("spawn: empty argv");
    int log_fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (log_fd < 0) throw std::runtime_error("cannot open log " + log_path.string());

    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    pid_t pid = fork();
    if (pid < 0) {
        ::close(log_fd);
        throw std::runtime_error("fork failed");
    }
    if (pid == 0) {
        dup2(log_fd, STDOUT_FILENO);
        dup2(log_fd, STDERR_FILENO);
        ::close(log_fd);
        execv(cargv[0], cargv.data());
        _exit(127);
    }
    ::close(log_fd);
    Process p;
    p.pid_ = pid;
    return p;
}

bool Process::alive() const {
    if (pid_ < 0) return false;
    return ::kill(pid_, 0) == 0;
}

void Process::terminate(std::chrono::milliseconds grace) {
    if (pid_ < 0) return;
    ::kill(pid_, SIGTERM);
    auto deadline = std::chrono::steady_clock::now() + grace;
    int status = 0;
    while (true) {
        pid_t rc = waitpid(pid_, &status, WNOHANG);
        if (rc == pid_ || (rc < 0 && errno == ECHILD)) break;
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid_, SIGKILL);
            waitpid(pid_, &status, 0);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    pid_ = -1;
}

// ---------------------------------------------------------------------------
// BinPaths / Fleet

BinPaths BinPaths::discover() {
    BinPaths paths;
    fs::path dir;
    if (const char* env = std::getenv("FLEETLAB_BIN_DIR")) {
        dir = env;
    } else {
        std::error_code ec;
        fs::path self = fs::read_symlink("/proc/self/exe", ec);
        if (!ec) dir = self.parent_path();
    }
    paths.bridge = dir / "fleetlab-bridge";
    paths.client = dir / "fleetlab-client";
    if (!fs::exists(paths.bridge) || !fs::exists(paths.client))
        throw std::runtime_error("cannot find fleetlab-bridge/fleetlab-client near " +
                                 dir.string() + "; set FLEETLAB_BIN_DIR");
    return paths;
}

Fleet::Fleet(BinPaths bins, fs::path workdir, FleetOptions options)
    : bins_(std::move(bins)), workdir_(std::move(workdir)), options_(options) {
    fs::create_directories(workdir_);
}

Fleet::~Fleet() {
    stop_all();
}

void Fleet::start_bridge() {
    fs::path port_file = workdir_ / "bridge.port";
    std::error_code ec;
    fs::remove(port_file, ec);
    std::vector<std::string> argv = {
        bins_.bridge.string(),
        "--port", "0",
        "--port-file", port_file.string(),
        "--store-dir", (workdir_ / "bridge-store").string(),
        "--audit-log", (workdir_ / "audit.jsonl").string(),
        "--client-timeout", std::to_string(options_.client_timeout_s),
        "--exec-timeout", std::to_string(options_.exec_timeout_s),
        "--deploy-ack-timeout", std::to_string(options_.deploy_ack_timeout_s),
    };
    bridge_ = Process::spawn(argv, workdir_ / "bridge.log");
    port_ = 0;
}

std::uint16_t Fleet::bridge_port() {
    if (port_ != 0) return port_;
    fs::path port_file = workdir_ / "bridge.port";
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (std::chrono::steady_clock::now() < deadline) {
        if (auto text = read_text_file(port_file)) {
            int port = std::atoi(text->c_str());
            if (port > 0) {
                port_ = static_cast<std::uint16_t>(port);
                return port_;
            }
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(3));
    }
    throw std::runtime_error("bridge did not publish a port in time");
}

void Fleet::start_client(const ClientSpec& spec) {
    std::vector<std::string> argv = {
        bins_.client.string(),
        "--client-id", spec.client_id,
        "--model", spec.model,
        "--bridge", "127.0.0.1:" + std::to_string(bridge_port()),
        "--seed", std::to_string(spec.seed),
        "--timeout", std::to_string(spec.exec_timeout_s),
        "--time-scale", std::to_string(options_.time_scale),
        "--store-dir", (workdir_ / (spec.client_id + "-store")).string(),
    };
    clients_[spec.client_id] = Process::spawn(argv, workdir_ / (spec.client_id + ".log"));
    client_specs_[spec.client_id] = spec;
}

void Fleet::await_registered(std::size_t count, double timeout_s) {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                        std::chrono::duration<double>(timeout_s));
    std::string last_error = "never connected";
    while (std::chrono::steady_clock::now() < deadline) {
        try {
            session::Session s("127.0.0.1", bridge_port(), "harness");
            auto reply = s.registry();
            if (reply.ok && reply.body["clients"].size() >= count) return;
            last_error = "registered " + std::to_string(reply.body["clients"].size()) + " of " +
                         std::to_string(count);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    throw std::runtime_error("clients did not register in time: " + last_error);
}

void Fleet::kill_client(const std::string& client_id) {
    auto it = clients_.find(client_id);
    if (it == clients_.end()) throw std::runtime_error("no such client " + client_id);
    // Hard kill: simulates a node dropping off the network.
    ::kill(it->second.pid(), SIGKILL);
    it->second.terminate(std::chrono::milliseconds(0));
    clients_.erase(it);
}

void Fleet::stop_all() {
    clients_.clear();  // Process dtor terminates
    bridge_.reset();
    port_ = 0;
}

json Fleet::snapshot_start_times() {
    json snap = json::object();
    session::Session s("127.0.0.1", bridge_port(), "harness");
    auto bridge_pong = s.ping();
    if (bridge_pong.ok)
        snap["bridge"] = {{"pid", bridge_pong.body.value("pid", 0)},
                          {"start_time_ms", bridge_pong.body.value("start_time_ms", 0)}};
    for (const auto& [client_id, proc] : clients_) {
        auto pong = s.ping_client(client_id);
        if (pong.ok)
            snap[client_id] = {{"pid", pong.body.value("pid", 0)},
                               {"start_time_ms", pong.body.value("start_time_ms", 0)}};
        else
            snap[client_id] = {{"error", pong.error}};
    }
    return snap;
}

fs::path Fleet::audit_path() const {
    return workdir_ / "audit.jsonl";
}

std::vector<std::string> Fleet::client_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, proc] : clients_) ids.push_back(id);
    return ids;
}

// ---------------------------------------------------------------------------
// Audit helpers

std::map<std::pair<std::string, std::int64_t>, std::vector<std::string>> kept_signatures(
    const std::vector<json>& audit_lines) {
    std::map<std::pair<std::string, std::int64_t>, std::vector<std::string>> kept;
    for (const auto& line : audit_lines) {
        if (line.value("event", "") != "kept") continue;
        if (!line.contains("iteration") || line["iteration"].is_null()) continue;
        kept[{line.value("assignment_id", ""), line["iteration"].get<std::int64_t>()}].push_back(
            line.value("signature", ""));
    }
    return kept;
}

bool audit_signature_pure(const std::vector<json>& audit_lines, std::string* detail) {
    for (const auto& [key, sigs] : kept_signatures(audit_lines)) {
        for (const auto& sig : sigs) {
            if (sig != sigs.front()) {
                if (detail)
                    *detail = "assignment " + key.first + " iteration " +
                              std::to_string(key.second) + " kept both " + sigs.front() +
                              " and " + sig;
                return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Scenario runner

void ScenarioReport::add(const std::string& name, bool check_ok, const std::string& detail) {
    checks.push_back({{"name", name}, {"ok", check_ok}, {"detail", detail}});
    if (!check_ok) ok = false;
}

json ScenarioReport::to_json() const {
    return {{"ok", ok}, {"checks", checks}};
}

namespace {

struct ScenarioContext {
    Fleet* fleet = nullptr;
    std::vector<std::string> assignment_ids;   // in submit order
    std::vector<std::string> deploy_signatures;  // in deploy order
    std::map<std::string, std::unique_ptr<session::Session>> sessions;
    json start_times_baseline;

    session::Session& session_for(const std::string& user) {
        auto it = sessions.find(user);
        if (it == sessions.end()) {
            auto s = std::make_unique<session::Session>("127.0.0.1", fleet->bridge_port(), user);
            it = sessions.emplace(user, std::move(s)).first;
        }
        return *it->second;
    }

    std::string resolve_assignment(const std::string& ref) const {
        if (!ref.empty() && ref[0] == '#') {
            std::size_t idx = std::stoul(ref.substr(1));
            if (idx < assignment_ids.size()) return assignment_ids[idx];
            throw std::runtime_error("assignment reference out of range: " + ref);
        }
        return ref;
    }
};

json fetch_records(ScenarioContext& ctx, const std::string& user, const std::string& assignment) {
    auto reply = ctx.session_for(user).fetch_results(assignment);
    if (!reply.ok) throw std::runtime_error("fetch_results failed: " + reply.error);
    return reply.body;
}

std::string load_source(const json& args, const fs::path& scenario_dir) {
    if (args.contains("source")) return args["source"].get<std::string>();
    fs::path p = args.value("source_file", "");
    if (p.is_relative()) p = scenario_dir / p;
    auto text = read_text_file(p);
    if (!text) throw std::runtime_error("cannot read " + p.string());
    return *text;
}

json load_spec_doc(const json& args, const fs::path& scenario_dir) {
    if (args.contains("spec")) return args["spec"];
    fs::path p = args.value("spec_file", "");
    if (p.is_relative()) p = scenario_dir / p;
    auto text = read_text_file(p);
    if (!text) throw std::runtime_error("cannot read " + p.string());
    return json::parse(*text);
}

void run_assert(ScenarioContext& ctx, const json& args, ScenarioReport& report) {
    std::string kind = args.value("kind", "");
    std::string user = args.value("user", "u1");
    if (kind == "signature_pure") {
        auto lines = audit::AuditLog::read_file(ctx.fleet->audit_path());
        std::string detail;
        bool pure = audit_signature_pure(lines, &detail);
        report.add("signature_pure", pure, detail);
        return;
    }
    if (kind == "iteration_count") {
        std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
        json body = fetch_records(ctx, user, id);
        std::size_t expected = args.value("expected", 0u);
        std::size_t got = body["records"].size();
        report.add("iteration_count " + id, got == expected,
                   "expected " + std::to_string(expected) + ", got " + std::to_string(got));
        return;
    }
    if (kind == "all_status_ok") {
        std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
        json body = fetch_records(ctx, user, id);
        bool all_ok = true;
        std::string detail;
        for (const auto& record : body["records"]) {
            if (record.value("status", "") != "ok") {
                all_ok = false;
                detail = "iteration " + std::to_string(record.value("iteration", -1)) +
                         " status " + record.value("status", "");
                break;
            }
        }
        report.add("all_status_ok " + id, all_ok, detail);
        return;
    }
    if (kind == "signature_transition") {
        std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
        std::string from = args.contains("from_deploy")
                               ? ctx.deploy_signatures.at(args["from_deploy"].get<std::size_t>())
                               : args.value("from", "");
        std::string to = args.contains("to_deploy")
                             ? ctx.deploy_signatures.at(args["to_deploy"].get<std::size_t>())
                             : args.value("to", "");
        json body = fetch_records(ctx, user, id);
        bool ok = true;
        std::string detail;
        bool switched = false;
        std::vector<std::string> seq;
        for (const auto& record : body["records"]) {
            if (!record.contains("signature") || record["signature"].is_null()) continue;
            seq.push_back(record["signature"].get<std::string>());
        }
        if (seq.empty()) {
            ok = false;
            detail = "no signed iteration records";
        }
        for (std::size_t i = 0; ok && i < seq.size(); ++i) {
            const std::string& sig = seq[i];
            if (sig != from && sig != to) {
                ok = false;
                detail = "unexpected signature " + sig;
            } else if (sig == to) {
                switched = true;
            } else if (switched && sig == from) {
                ok = false;
                detail = "signature flapped back to the old version at record " +
                         std::to_string(i);
            }
        }
        if (ok && seq.front() != from) {
            ok = false;
            detail = "first record already carries the new signature";
        }
        if (ok && seq.back() != to) {
            ok = false;
            detail = "last record still carries the old signature";
        }
        report.add("signature_transition " + id, ok, detail);
        return;
    }
    if (kind == "start_times_unchanged") {
        json now = ctx.fleet->snapshot_start_times();
        bool same = now == ctx.start_times_baseline;
        report.add("start_times_unchanged", same,
                   same ? "" : "baseline " + ctx.start_times_baseline.dump() + " now " +
                                   now.dump());
        return;
    }
    if (kind == "final_model") {
        std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
        json body = fetch_records(ctx, user, id);
        double tol = args.value("tol", 1e-9);
        std::vector<double> expected = args["expected"].get<std::vector<double>>();
        const json& records = body["records"];
        bool ok = false;
        std::string detail = "no ok records";
        for (auto it = records.rbegin(); it != records.rend(); ++it) {
            if ((*it).value("status", "") != "ok") continue;
            auto got = (*it)["offboard"].get<std::vector<double>>();
            ok = got.size() == expected.size();
            detail = "length mismatch";
            if (ok) {
                for (std::size_t i = 0; i < got.size(); ++i) {
                    if (std::fabs(got[i] - expected[i]) > tol) {
                        ok = false;
                        detail = "element " + std::to_string(i) + ": " + std::to_string(got[i]) +
                                 " vs " + std::to_string(expected[i]);
                        break;
                    }
                }
                if (ok) detail = "";
            }
            break;
        }
        report.add("final_model " + id, ok, detail);
        return;
    }
    report.add("assert " + kind, false, "unknown assertion kind");
}

}  // namespace

ScenarioReport run_scenario(const json& scenario, const fs::path& scenario_dir,
                            const fs::path& workdir, const BinPaths& bins) {
    ScenarioReport report;
    FleetOptions options;
    options.time_scale = scenario.value("time_scale", 1000.0);
    if (scenario.contains("options")) {
        const json& o = scenario["options"];
        options.client_timeout_s = o.value("client_timeout_s", options.client_timeout_s);
        options.exec_timeout_s = o.value("exec_timeout_s", options.exec_timeout_s);
        options.deploy_ack_timeout_s =
            o.value("deploy_ack_timeout_s", options.deploy_ack_timeout_s);
    }
    Fleet fleet(bins, workdir, options);
    ScenarioContext ctx;
    ctx.fleet = &fleet;

    auto t0 = std::chrono::steady_clock::now();
    try {
        for (const auto& step : scenario.at("actions")) {
            std::string action = step.value("action", "");
            json args = step.value("args", json::object());
            if (step.contains("at_ms")) {
                auto when = t0 + std::chrono::milliseconds(step["at_ms"].get<std::int64_t>());
                std::this_thread::sleep_until(when);
            }
            if (action == "start_bridge") {
                fleet.start_bridge();
                fleet.bridge_port();
            } else if (action == "start_clients") {
                int count = args.value("count", 1);
                std::uint64_t seed_base = args.value("seed_base", 100);
                for (int i = 1; i <= count; ++i) {
                    ClientSpec spec;
                    spec.client_id = args.value("prefix", "c") + std::to_string(i);
                    spec.model = args.value("model", "type_a");
                    spec.seed = seed_base + static_cast<std::uint64_t>(i);
                    spec.exec_timeout_s = args.value("exec_timeout_s", options.exec_timeout_s);
                    fleet.start_client(spec);
                }
                fleet.await_registered(fleet.client_ids().size());
            } else if (action == "deploy") {
                std::string user = args.value("user", "u1");
                std::string target = args.value("target", "onboard");
                std::string source = load_source(args, scenario_dir);
                json selector = args.value("selector", json("all"));
                auto reply = ctx.session_for(user).deploy(
                    target == "onboard" ? "deploy_onboard" : "deploy_offboard", source, selector);
                if (!reply.ok) throw std::runtime_error("deploy failed: " + reply.error);
                ctx.deploy_signatures.push_back(reply.body.value("signature", ""));
            } else if (action == "submit") {
                std::string user = args.value("user", "u1");
                json doc = load_spec_doc(args, scenario_dir);
                doc["user_id"] = user;
                auto reply = ctx.session_for(user).submit(doc);
                if (!reply.ok) throw std::runtime_error("submit failed: " + reply.error);
                ctx.assignment_ids.push_back(reply.assignment_id);
            } else if (action == "wait_records") {
                std::string user = args.value("user", "u1");
                std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
                std::size_t count = args.value("count", 1u);
                double timeout_s = args.value("timeout_s", 60.0);
                auto deadline = std::chrono::steady_clock::now() +
                                std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(timeout_s));
                while (true) {
                    json body = fetch_records(ctx, user, id);
                    if (body["records"].size() >= count) break;
                    if (std::chrono::steady_clock::now() > deadline)
                        throw std::runtime_error("timed out waiting for records of " + id);
                    std::this_thread::sleep_for(std::chrono::milliseconds(5));
                }
            } else if (action == "wait_finished") {
                std::string user = args.value("user", "u1");
                std::string id = ctx.resolve_assignment(args.value("assignment", "#0"));
                double timeout_s = args.value("timeout_s", 120.0);
                auto deadline = std::chrono::steady_clock::now() +
                                std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(timeout_s));
                while (true) {
                    json body = fetch_records(ctx, user, id);
                    if (body.value("finished", false)) break;
                    if (std::chrono::steady_clock::now() > deadline)
                        throw std::runtime_error("timed out waiting for " + id);
                    std::this_thread::sleep_for(std::chrono::milliseconds(5));
                }
            } else if (action == "sleep") {
                std::this_thread::sleep_for(std::chrono::milliseconds(args.value("ms", 0)));
            } else if (action == "kill_client") {
                fleet.kill_client(args.value("client_id", ""));
            } else if (action == "snapshot_start_times") {
                ctx.start_times_baseline = fleet.snapshot_start_times();
            } else if (action == "assert") {
                run_assert(ctx, args, report);
            } else {
                throw std::runtime_error("unknown scenario action: " + action);
            }
        }
    } catch (const std::exception& e) {
        report.add("scenario", false, e.what());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

void write_with_sync(const fs::path& to, const std::string& data) {
    int fd = ::open(to.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw std::runtime_error("cannot write " + to.string());
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n <= 0) {
            ::close(fd);
            throw std::runtime_error("short write " + to.string());
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    fsync(fd);
    ::close(fd);
}

// The redeploy payload mirrors the real thing: ~1 MiB of zipped installation
// data that each node has to receive and unpack. Header: 8 bytes of
// uncompressed length, then the zlib stream.
std::string make_install_payload() {
    // Moderately compressible synthetic installation data, sized so the
    // compressed payload lands near 1 MiB.
    auto build_raw = [](std::size_t size) {
        std::string raw(size, '\0');
        std::uint64_t x = 0x9d2c5680u;
        for (std::size_t i = 0; i < size; i += 64) {
            x = splitmix64(x);
            std::memcpy(&raw[i], &x, std::min<std::size_t>(8, size - i));
        }
        return raw;
    };
    auto deflate_all = [](const std::string& raw) {
        uLongf bound = compressBound(static_cast<uLong>(raw.size()));
        std::string out(bound, '\0');
        if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                      reinterpret_cast<const Bytef*>(raw.data()),
                      static_cast<uLong>(raw.size()), Z_BEST_SPEED) != Z_OK)
            throw std::runtime_error("payload compression failed");
        out.resize(bound);
        return out;
    };

    std::size_t raw_size = 4u << 20;
    std::string raw = build_raw(raw_size);
    std::string compressed = deflate_all(raw);
    // One resize pass toward a ~1 MiB transfer size.
    double scale = static_cast<double>(1u << 20) / static_cast<double>(compressed.size());
    raw_size = static_cast<std::size_t>(static_cast<double>(raw_size) * scale);
    raw = build_raw(std::max<std::size_t>(raw_size, 1u << 20));
    compressed = deflate_all(raw);

    std::string payload(8, '\0');
    std::uint64_t n = raw.size();
    std::memcpy(payload.data(), &n, 8);
    payload += compressed;
    return payload;
}

// One node's install step: receive the payload copy, unpack it, sync it to
// the node's installation directory.
void install_payload(const std::string& payload, const fs::path& node_dir) {
    fs::create_directories(node_dir);
    write_with_sync(node_dir / "payload.zip", payload);

    if (payload.size() < 8) throw std::runtime_error("corrupt payload");
    std::uint64_t raw_size = 0;
    std::memcpy(&raw_size, payload.data(), 8);
    std::string raw(raw_size, '\0');
    uLongf got = static_cast<uLongf>(raw_size);
    if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &got,
                   reinterpret_cast<const Bytef*>(payload.data() + 8),
                   static_cast<uLong>(payload.size() - 8)) != Z_OK ||
        got != raw_size)
        throw std::runtime_error("payload unpack failed");
    write_with_sync(node_dir / "installed.bin", raw);
}

const char* kBenchModule = R"(fn custom_code(xs) {
  let s = 0;
  let i = 0;
  while (i < len(xs)) {
    s = s + xs[i];
    i = i + 1;
  }
  if (len(xs) == 0) { return 0; }
  return s / len(xs);
}
)";

}  // namespace

json BenchReport::to_json() const {
    return {{"replace_offboard_ms", replace_offboard_ms},
            {"replace_onboard_ms", replace_onboard_ms},
            {"redeploy_ms", redeploy_ms},
            {"ratio_offboard", ratio_offboard()},
            {"ratio_onboard", ratio_onboard()},
            {"runs", runs},
            {"clients", clients},
            {"start_times_constant_during_replace", start_times_constant_during_replace},
            {"start_times_changed_on_redeploy", start_times_changed_on_redeploy}};
}

BenchReport bench_replace_vs_redeploy(const BinPaths& bins, const fs::path& workdir,
                                      int n_clients, int runs) {
    BenchReport report;
    report.runs = runs;
    report.clients = n_clients;

    fs::create_directories(workdir);
    // The installation payload a standard redeployment pushes to every node:
    // ~1 MiB of zipped data, unpacked at install time.
    std::string payload = make_install_payload();

    double sum_off = 0, sum_on = 0, sum_redeploy = 0;
    bool constant_ok = true, changed_ok = true;

    // One live fleet, as deployed in the field; replacement runs against the
    // warm system, redeployment restarts it from scratch each time.
    fs::path run_dir = workdir / "fleet";
    FleetOptions options;
    options.time_scale = 1000;
    Fleet fleet(bins, run_dir, options);
    auto start_fleet = [&] {
        fleet.start_bridge();
        fleet.bridge_port();
        for (int i = 1; i <= n_clients; ++i)
            fleet.start_client({"c" + std::to_string(i), "type_a",
                                static_cast<std::uint64_t>(100 + i), 10.0});
        fleet.await_registered(static_cast<std::size_t>(n_clients));
    };
    start_fleet();

    {
        // Untimed warm-up pass.
        session::Session s("127.0.0.1", fleet.bridge_port(), "bench");
        s.deploy("deploy_offboard", kBenchModule, json("all"));
        s.deploy("deploy_onboard", kBenchModule, json("all"));
    }

    json before = fleet.snapshot_start_times();
    for (int run = 0; run < runs; ++run) {
        session::Session s("127.0.0.1", fleet.bridge_port(), "bench");
        // A fresh module version per run, like an analyst iterating on code.
        std::string module = std::string(kBenchModule) + "# v" + std::to_string(run) + "\n";

        auto t_off = mono_now();
        auto off_reply = s.deploy("deploy_offboard", module, json("all"));
        double off_ms = elapsed_ms(t_off);
        if (!off_reply.ok) throw std::runtime_error("offboard deploy failed: " + off_reply.error);

        auto t_on = mono_now();
        auto on_reply = s.deploy("deploy_onboard", module, json("all"));
        double on_ms = elapsed_ms(t_on);
        if (!on_reply.ok) throw std::runtime_error("onboard deploy failed: " + on_reply.error);
        if (!on_reply.body.value("ok", false))
            throw std::runtime_error("onboard deploy partial: " + on_reply.body.dump());

        sum_off += off_ms;
        sum_on += on_ms;
    }
    json after = fleet.snapshot_start_times();
    if (before != after) constant_ok = false;

    for (int run = 0; run < runs; ++run) {
        // Scripted standard redeployment: stop every node, push the zipped
        // payload to each node, unpack it, restart, wait for re-registration.
        json live = fleet.snapshot_start_times();
        auto t_re = mono_now();
        fleet.stop_all();
        for (int i = 0; i <= n_clients; ++i) {
            fs::path node_dir =
                run_dir / (i == 0 ? "bridge-install" : "c" + std::to_string(i) + "-install");
            install_payload(payload, node_dir);
        }
        start_fleet();
        double redeploy_ms = elapsed_ms(t_re);
        sum_redeploy += redeploy_ms;

        json restarted = fleet.snapshot_start_times();
        for (auto it = live.begin(); it != live.end(); ++it) {
            if (restarted.contains(it.key()) && restarted[it.key()] == it.value())
                changed_ok = false;
        }
    }
    fleet.stop_all();

    report.replace_offboard_ms = sum_off / runs;
    report.replace_onboard_ms = sum_on / runs;
    report.redeploy_ms = sum_redeploy / runs;
    report.start_times_constant_during_replace = constant_ok;
    report.start_times_changed_on_redeploy = changed_ok;
    return report;
}

}  // namespace fleetlab::harness
