#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fleetlab/codeswap.hpp"
#include "fleetlab/net.hpp"
#include "fleetlab/sensors.hpp"
#include "fleetlab/spec.hpp"

namespace fleetlab::client {

struct ClientConfig {
    std::string client_id;
    std::string model = "type_a";
    std::string bridge_host = "127.0.0.1";
    std::uint16_t bridge_port = 0;
    std::uint64_t sensor_seed = 1;
    std::filesystem::path store_dir;
    double exec_timeout_s = 10.0;
    /// Sampling intervals are divided by this, so hour-long nominal tasks
    /// run in seconds. Results are unaffected: sample values depend only on
    /// the sensor seed.
    double time_scale = 1.0;
    double collect_cap_mult = 10.0;  // wall-clock cap, x nominal duration
    double collect_cap_min_s = 2.0;
    double connect_wait_s = 10.0;
    double connect_retry_interval_s = 0.025;
    sensors::SignalCatalog catalog = sensors::SignalCatalog::defaults();
};

/// A client node: connects out to the bridge, registers, and serves task and
/// deploy messages. Every task gets its own handler thread with a private
/// buffer and private stream cursors; nothing survives task completion.
class ClientNode {
public:
    explicit ClientNode(ClientConfig config);
    ~ClientNode();

    /// Connects, registers, and starts serving. False when the bridge is
    /// unreachable within connect_wait_s.
    bool start();
    void stop();
    /// Blocks until the bridge connection goes away.
    void wait();
    bool running() const { return running_.load(); }

    const ClientConfig& config() const { return config_; }

private:
    struct TaskThread {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
    };

    void recv_loop();
    void run_task(spec::TaskSpec task);
    void handle_deploy(wire::Message msg);
    void send_envelope(const std::string& assignment_id, const wire::json& body);
    void spawn(std::function<void()> fn);
    void reap_finished();

    ClientConfig config_;
    std::unique_ptr<codeswap::CodeStore> store_;
    net::ConnPtr conn_;
    std::thread recv_thread_;
    std::atomic<bool> running_{false};
    std::atomic<bool> stopping_{false};

    std::mutex exit_mutex_;
    std::condition_variable exit_cv_;
    bool recv_loop_done_ = false;

    std::mutex tasks_mutex_;
    std::vector<TaskThread> task_threads_;
};

}  // namespace fleetlab::client
