// The central bridge daemon.

#include <CLI11.hpp>
#include <csignal>
#include <iostream>

#include "fleetlab/bridge.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;

int main(int argc, char** argv) {
    bridge::process_start_ms();  // pin the start timestamp

    CLI::App app{"fleetlab bridge"};
    bridge::BridgeConfig config;
    std::string host = "127.0.0.1";
    int port = 4700;
    std::string store_dir = "bridge-store";
    std::string audit_log;
    std::string port_file;
    app.add_option("--host", host, "listen address");
    app.add_option("--port", port, "listen port (0 for ephemeral)");
    app.add_option("--port-file", port_file, "write the bound port to this file");
    app.add_option("--store-dir", store_dir, "custom-code storage directory");
    app.add_option("--audit-log", audit_log, "audit log path (JSON lines)");
    app.add_option("--client-timeout", config.client_timeout_s,
                   "per-iteration client grace period in seconds");
    app.add_option("--exec-timeout", config.exec_timeout_s,
                   "off-board custom execution timeout in seconds");
    app.add_option("--deploy-ack-timeout", config.deploy_ack_timeout_s,
                   "per-client deploy ack timeout in seconds");
    CLI11_PARSE(app, argc, argv);

    config.host = host;
    config.port = static_cast<std::uint16_t>(port);
    config.store_dir = store_dir;
    if (!audit_log.empty()) config.audit_path = audit_log;

    // Block the shutdown signals before any thread exists so sigwait below
    // is the only consumer.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    try {
        bridge::BridgeServer server(config);
        server.start();
        std::cout << "listening on " << host << ":" << server.port() << std::endl;
        if (!port_file.empty()) write_text_file(port_file, std::to_string(server.port()) + "\n");

        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
