// A client node daemon: connects out to the bridge and serves tasks until
// the connection drops or the process is stopped.

#include <CLI11.hpp>
#include <csignal>
#include <iostream>
#include <thread>

#include "fleetlab/bridge.hpp"
#include "fleetlab/client.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;

int main(int argc, char** argv) {
    bridge::process_start_ms();

    // Orderly shutdown on SIGTERM/SIGINT: stop the node, join task handlers.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    CLI::App app{"fleetlab client node"};
    client::ClientConfig config;
    std::string bridge_addr = "127.0.0.1:4700";
    std::string store_dir;
    std::string signals_file;
    app.add_option("--client-id", config.client_id, "unique client id")->required();
    app.add_option("--model", config.model, "vehicle model tag");
    app.add_option("--bridge", bridge_addr, "bridge address host:port");
    app.add_option("--seed", config.sensor_seed, "sensor stream seed");
    app.add_option("--timeout", config.exec_timeout_s, "custom execution timeout in seconds");
    app.add_option("--time-scale", config.time_scale,
                   "divide sampling intervals by this factor");
    app.add_option("--store-dir", store_dir, "custom-code storage directory");
    app.add_option("--signals", signals_file, "signal catalog JSON file");
    app.add_option("--connect-wait", config.connect_wait_s,
                   "seconds to keep retrying the first connect");
    CLI11_PARSE(app, argc, argv);

    auto pos = bridge_addr.rfind(':');
    if (pos == std::string::npos) {
        std::cerr << "--bridge must be host:port\n";
        return 2;
    }
    config.bridge_host = bridge_addr.substr(0, pos);
    config.bridge_port = static_cast<std::uint16_t>(std::stoi(bridge_addr.substr(pos + 1)));
    if (!store_dir.empty()) config.store_dir = store_dir;
    if (!signals_file.empty()) {
        auto text = read_text_file(signals_file);
        if (!text) {
            std::cerr << "cannot read " << signals_file << "\n";
            return 2;
        }
        try {
            config.catalog = sensors::SignalCatalog::from_json(nlohmann::json::parse(*text));
        } catch (const std::exception& e) {
            std::cerr << "bad signal catalog: " << e.what() << "\n";
            return 2;
        }
    }

    auto node = std::make_shared<client::ClientNode>(config);
    if (!node->start()) {
        std::cerr << "cannot reach bridge at " << bridge_addr << "\n";
        return 1;
    }
    std::cout << "registered as " << config.client_id << std::endl;

    std::thread([node, set] {
        int sig = 0;
        sigwait(&set, &sig);
        node->stop();
    }).detach();

    node->wait();
    node->stop();
    return 0;
}
