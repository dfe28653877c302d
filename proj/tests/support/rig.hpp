#pragma once

#include <filesystem>
#include <memory>
#include <thread>

#include "fleetlab/bridge.hpp"
#include "fleetlab/client.hpp"
#include "fleetlab/session.hpp"
#include "fleetlab/util.hpp"

namespace fleetlab::testsupport {

// An in-process bridge plus client nodes, for protocol-level tests that do
// not depend on process boundaries.
struct Rig {
    std::filesystem::path dir;
    std::unique_ptr<bridge::BridgeServer> server;
    std::vector<std::unique_ptr<client::ClientNode>> clients;

    struct Options {
        double client_timeout_s = 10.0;
        double exec_timeout_s = 5.0;
        double time_scale = 1000.0;
    };
    Options options;

    explicit Rig(const std::string& tag) : Rig(tag, Options()) {}

    Rig(const std::string& tag, Options opts) : options(opts) {
        dir = std::filesystem::temp_directory_path() /
              ("fleetlab-rig-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        bridge::BridgeConfig config;
        config.store_dir = dir / "bridge-store";
        config.audit_path = dir / "audit.jsonl";
        config.client_timeout_s = options.client_timeout_s;
        config.exec_timeout_s = options.exec_timeout_s;
        server = std::make_unique<bridge::BridgeServer>(config);
        server->start();
    }

    ~Rig() {
        for (auto& c : clients) c->stop();
        if (server) server->stop();
    }

    /// Returns false if the client could not register.
    bool add_client(const std::string& id, const std::string& model, std::uint64_t seed,
                    double exec_timeout_s = 5.0) {
        client::ClientConfig config;
        config.client_id = id;
        config.model = model;
        config.bridge_host = "127.0.0.1";
        config.bridge_port = server->port();
        config.sensor_seed = seed;
        config.store_dir = dir / (id + "-store");
        config.exec_timeout_s = exec_timeout_s;
        config.time_scale = options.time_scale;
        auto node = std::make_unique<client::ClientNode>(config);
        if (!node->start()) return false;
        clients.push_back(std::move(node));
        return true;
    }

    session::Session session(const std::string& user = "u1") {
        return session::Session("127.0.0.1", server->port(), user);
    }

    /// Polls fetch_results until the assignment finishes; returns the reply
    /// body ({records, finished}) or throws on timeout.
    wire::json wait_finished(session::Session& s, const std::string& id,
                             double timeout_s = 60.0) {
        auto deadline = mono_now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                         std::chrono::duration<double>(timeout_s));
        while (mono_now() < deadline) {
            auto reply = s.fetch_results(id);
            if (!reply.ok) throw std::runtime_error("fetch_results failed: " + reply.error);
            if (reply.body.value("finished", false)) return reply.body;
            std::this_thread::sleep_for(std::chrono::milliseconds(3));
        }
        throw std::runtime_error("assignment " + id + " did not finish in time");
    }

    std::filesystem::path audit_path() const { return dir / "audit.jsonl"; }
};

}  // namespace fleetlab::testsupport
