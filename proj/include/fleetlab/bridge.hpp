#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fleetlab/aggregate.hpp"
#include "fleetlab/audit.hpp"
#include "fleetlab/codeswap.hpp"
#include "fleetlab/net.hpp"
#include "fleetlab/spec.hpp"
#include "fleetlab/wire.hpp"

namespace fleetlab::bridge {

/// Placeholder routing id for messages that exist outside any assignment
/// (registration, pings, deploys). The wire schema wants the field non-empty.
inline constexpr const char* kSystemId = "-";

struct BridgeConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0: ephemeral
    std::filesystem::path store_dir;
    std::filesystem::path audit_path;     // defaults to store_dir/audit.jsonl
    double client_timeout_s = 30.0;       // grace beyond nominal task duration
    double deploy_ack_timeout_s = 10.0;   // per-client deploy/ping ack wait
    double exec_timeout_s = 10.0;         // off-board custom execution
};

/// The central server: accepts analyst sessions and client connections,
/// spawns one assignment handler per submitted assignment, filters results
/// by signature majority, runs off-board computations, and routes iteration
/// records back to watchers.
class BridgeServer {
public:
    explicit BridgeServer(BridgeConfig config);
    ~BridgeServer();

    void start();  // throws net::NetError when the port cannot be bound
    void stop();

    std::uint16_t port() const { return port_; }
    const std::filesystem::path& audit_path() const { return audit_->path(); }

    std::size_t running_handlers() const;
    std::vector<spec::RegistryEntry> registry_snapshot() const;

private:
    struct ClientInfo {
        std::string model;
        double time_scale = 1.0;
        net::ConnPtr conn;
    };

    struct Waiter {
        std::mutex m;
        std::condition_variable cv;
        bool done = false;
        wire::json reply;
    };

    struct AssignmentEvents {
        std::mutex m;
        std::string user_id;
        std::vector<wire::json> records;
        bool finished = false;
        std::vector<net::ConnPtr> watchers;
    };

    struct HandlerState {
        std::string assignment_id;
        spec::AssignmentSpec assignment;
        std::vector<std::string> clients;

        std::mutex m;
        std::condition_variable cv;
        std::int64_t current_iteration = -1;
        std::map<std::string, aggregate::ResultEnvelope> received;
        std::optional<std::vector<double>> carry_model;
        std::atomic<bool> done{false};
        std::thread thread;
    };

    void accept_loop();
    void serve_connection(net::ConnPtr conn);
    void handle_status(const wire::Message& msg, const net::ConnPtr& conn);
    void handle_submit(const wire::Message& msg, const net::ConnPtr& conn);
    void handle_deploy(const wire::Message& msg, const net::ConnPtr& conn);
    void handle_result(const wire::Message& msg);
    void handle_ack(const wire::Message& msg);
    void run_handler(std::shared_ptr<HandlerState> state);

    void unregister_client(const std::string& client_id, const net::ConnPtr& conn);
    std::shared_ptr<Waiter> add_waiter(const std::string& req_id);
    wire::json wait_for(const std::shared_ptr<Waiter>& waiter, const std::string& req_id,
                        double timeout_s);
    std::optional<std::string> deployed_onboard_signature(const spec::AssignmentSpec& a) const;
    void emit_record(const std::shared_ptr<AssignmentEvents>& events, const wire::json& record,
                     const std::string& assignment_id, const std::string& user_id);
    void send_error(const net::ConnPtr& conn, const std::string& assignment_id,
                    const std::string& user_id, const std::string& reason,
                    wire::json extra = wire::json::object());

    BridgeConfig config_;
    std::uint16_t port_ = 0;
    std::unique_ptr<net::Listener> listener_;
    std::unique_ptr<codeswap::CodeStore> store_;
    std::unique_ptr<audit::AuditLog> audit_;

    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex serve_threads_mutex_;
    std::vector<std::thread> serve_threads_;
    std::vector<net::ConnPtr> all_conns_;

    mutable std::mutex registry_mutex_;
    std::map<std::string, ClientInfo> registry_;

    mutable std::mutex handlers_mutex_;
    std::map<std::string, std::shared_ptr<HandlerState>> handlers_;

    std::mutex events_mutex_;
    std::map<std::string, std::shared_ptr<AssignmentEvents>> events_;

    std::mutex counters_mutex_;
    std::map<std::string, std::int64_t> user_counters_;

    std::mutex waiters_mutex_;
    std::map<std::string, std::shared_ptr<Waiter>> waiters_;
    std::atomic<std::uint64_t> req_counter_{0};
};

/// Wall-clock time captured when the process image started; reported by
/// health probes so tests can tell restarts from hot swaps.
std::int64_t process_start_ms();

}  // namespace fleetlab::bridge
