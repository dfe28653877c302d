#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <thread>

#include "fleetlab/audit.hpp"
#include "fleetlab/bridge.hpp"
#include "fleetlab/client.hpp"
#include "fleetlab/harness.hpp"
#include "fleetlab/session.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;
using json = nlohmann::json;

namespace {

const char* kIdentity = "fn custom_code(xs) { return xs; }\n";
const char* kDouble = "fn custom_code(xs) { return xs * 2; }\n";

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("fleetlab-integ-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct TestRig {
    std::filesystem::path dir;
    std::unique_ptr<bridge::BridgeServer> server;
    std::vector<std::unique_ptr<client::ClientNode>> clients;

    explicit TestRig(const std::string& tag, int n_clients, double client_timeout_s = 10.0,
                     double exec_timeout_s = 5.0) {
        dir = fresh_dir(tag);
        bridge::BridgeConfig config;
        config.store_dir = dir / "bridge-store";
        config.audit_path = dir / "audit.jsonl";
        config.client_timeout_s = client_timeout_s;
        config.exec_timeout_s = exec_timeout_s;
        server = std::make_unique<bridge::BridgeServer>(config);
        server->start();
        for (int i = 1; i <= n_clients; ++i) add_client("c" + std::to_string(i), "type_a");
    }

    void add_client(const std::string& id, const std::string& model,
                    double exec_timeout_s = 5.0) {
        client::ClientConfig config;
        config.client_id = id;
        config.model = model;
        config.bridge_host = "127.0.0.1";
        config.bridge_port = server->port();
        config.sensor_seed = 100 + clients.size();
        config.store_dir = dir / (id + "-store");
        config.exec_timeout_s = exec_timeout_s;
        config.time_scale = 1000;
        auto node = std::make_unique<client::ClientNode>(config);
        REQUIRE(node->start());
        clients.push_back(std::move(node));
    }

    session::Session session(const std::string& user = "u1") {
        return session::Session("127.0.0.1", server->port(), user);
    }

    json wait_finished(session::Session& s, const std::string& id, double timeout_s = 30.0) {
        auto deadline = mono_now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                         std::chrono::duration<double>(timeout_s));
        while (mono_now() < deadline) {
            auto reply = s.fetch_results(id);
            REQUIRE(reply.ok);
            if (reply.body.value("finished", false)) return reply.body;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        FAIL("assignment ", id, " did not finish in time");
        return {};
    }
};

json small_spec(const std::string& computation, int iterations, int samples = 12,
                const std::string& filters = "") {
    json doc = {
        {"name", "integration"},
        {"user_id", "u1"},
        {"clients", "all"},
        {"onboard",
         {{"computation", computation},
          {"signals", {"speed"}},
          {"frequency", 100},
          {"samples", samples}}},
        {"offboard", {{"computation", "collect"}, {"iterations", iterations}}},
    };
    if (!filters.empty()) doc["onboard"]["filters"] = filters;
    return doc;
}

}  // namespace

TEST_CASE("register, submit a builtin assignment, deliver every iteration") {
    TestRig rig("basic", 3);
    auto s = rig.session();

    auto reg = s.registry();
    REQUIRE(reg.ok);
    REQUIRE(reg.body["clients"].size() == 3);

    auto submitted = s.submit(small_spec("mean", 3));
    REQUIRE(submitted.ok);
    CHECK(submitted.assignment_id == "u1-1");

    auto results = rig.wait_finished(s, submitted.assignment_id);
    REQUIRE(results["records"].size() == 3);
    for (const auto& record : results["records"]) {
        CHECK(record["status"] == "ok");
        CHECK(record["signature"] == "builtin:mean");
        CHECK(record["kept"].size() == 3);
        CHECK(record["errors"].empty());
        // offboard collect: one entry per client, sorted
        REQUIRE(record["offboard"].size() == 3);
        CHECK(record["offboard"][0]["client_id"] == "c1");
    }

    // Liveness: the handler is gone afterwards.
    auto stats = s.stats();
    REQUIRE(stats.ok);
    CHECK(stats.body["running_handlers"] == 0);

    // Determinism: the same assignment again yields identical payloads.
    auto again = s.submit(small_spec("mean", 3));
    REQUIRE(again.ok);
    CHECK(again.assignment_id == "u1-2");
    auto results2 = rig.wait_finished(s, again.assignment_id);
    for (int i = 0; i < 3; ++i) {
        CHECK(results2["records"][i]["kept"] == results["records"][i]["kept"]);
        CHECK(results2["records"][i]["offboard"] == results["records"][i]["offboard"]);
    }
}

TEST_CASE("ids selector dispatches only to the named clients") {
    TestRig rig("subset", 3);
    auto s = rig.session();
    auto doc = small_spec("mean", 1);
    doc["clients"] = {{"ids", {"c1", "c3"}}};
    auto submitted = s.submit(doc);
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id);
    REQUIRE(results["records"].size() == 1);
    auto kept = results["records"][0]["kept"];
    REQUIRE(kept.size() == 2);
    CHECK(kept[0]["client_id"] == "c1");
    CHECK(kept[1]["client_id"] == "c3");
}

TEST_CASE("filters drop samples before they enter the buffer") {
    TestRig rig("filter", 1);
    auto s = rig.session();
    // speed ~ N(80,15): x > 80 keeps roughly half; 6 accepted samples wanted
    auto doc = small_spec("collect", 1, 6, "x > 80");
    auto submitted = s.submit(doc);
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id);
    auto payload = results["records"][0]["kept"][0]["payload"];
    REQUIRE(payload.size() == 6);
    for (const auto& v : payload) CHECK(v.get<double>() > 80.0);
}

TEST_CASE("filter that never passes yields a partial error envelope") {
    TestRig rig("cap", 1);
    rig.clients[0]->stop();
    rig.clients.clear();
    client::ClientConfig config;
    config.client_id = "c1";
    config.bridge_host = "127.0.0.1";
    config.bridge_port = rig.server->port();
    config.store_dir = rig.dir / "c1b-store";
    config.time_scale = 1000;
    config.collect_cap_min_s = 0.3;  // quick cap for the test
    auto node = std::make_unique<client::ClientNode>(config);
    REQUIRE(node->start());
    rig.clients.push_back(std::move(node));

    auto s = rig.session();
    auto submitted = s.submit(small_spec("collect", 1, 10, "x > 100000"));
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id);
    const auto& record = results["records"][0];
    CHECK(record["status"] == "failed");
    REQUIRE(record["errors"].size() == 1);
    CHECK(record["errors"][0]["error"]["kind"] == "partial");
    CHECK(record["errors"][0]["error"]["accepted"] == 0);
}

TEST_CASE("unknown signal produces an immediate error envelope") {
    TestRig rig("signal", 1);
    auto s = rig.session();
    auto doc = small_spec("collect", 1);
    doc["onboard"]["signals"] = {"bogus"};
    auto submitted = s.submit(doc);
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id);
    const auto& record = results["records"][0];
    CHECK(record["status"] == "failed");
    CHECK(record["errors"][0]["error"]["kind"] == "unknown_signal");
}

TEST_CASE("custom deploy, execute, and per-iteration reload") {
    TestRig rig("custom", 2);
    auto s = rig.session();

    // custom referenced but nothing deployed: rejected
    auto doc = small_spec("custom", 4, /*samples=*/3000);  // ~30 ms per iteration compressed
    auto premature = s.submit(doc);
    CHECK(!premature.ok);
    CHECK(premature.error.find("no on-board custom code") != std::string::npos);

    auto deploy = s.deploy("deploy_onboard", kIdentity, json("all"));
    REQUIRE(deploy.ok);
    REQUIRE(deploy.body["acks"].size() == 2);
    CHECK(deploy.body["ok"] == true);
    std::string sig_v1 = deploy.body["signature"];

    auto submitted = s.submit(doc);
    REQUIRE(submitted.ok);

    // Swap the module once the first iteration has been delivered; the
    // remaining iterations pick it up at their next reload.
    while (true) {
        auto progress = s.fetch_results(submitted.assignment_id);
        REQUIRE(progress.ok);
        if (!progress.body["records"].empty()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    auto deploy2 = s.deploy("deploy_onboard", kDouble, json("all"));
    REQUIRE(deploy2.ok);
    std::string sig_v2 = deploy2.body["signature"];

    auto results = rig.wait_finished(s, submitted.assignment_id);
    REQUIRE(results["records"].size() == 4);
    bool switched = false;
    for (const auto& record : results["records"]) {
        REQUIRE(record["status"] == "ok");
        std::string sig = record["signature"];
        REQUIRE((sig == sig_v1 || sig == sig_v2));
        if (sig == sig_v2) switched = true;
        if (switched) CHECK(sig == sig_v2);  // no flapping back
    }
    CHECK(results["records"][3]["signature"] == sig_v2);

    // Audit log shows only pure iterations.
    auto lines = audit::AuditLog::read_file(rig.dir / "audit.jsonl");
    std::string detail;
    bool pure = harness::audit_signature_pure(lines, &detail);
    CAPTURE(detail);
    CHECK(pure);
}

TEST_CASE("deploy with an invalid module is rejected at the node") {
    TestRig rig("badmodule", 1);
    auto s = rig.session();
    auto reply = s.deploy("deploy_onboard", "fn custom_code(xs) { return \"hello\"; }",
                          json("all"));
    CHECK(!reply.ok);
    REQUIRE(reply.body.contains("violations"));
    CHECK(reply.body["violations"][0]["stage"] == "return_type");

    auto off = s.deploy("deploy_offboard", "fn custom_code(a, b) { return a; }", json());
    CHECK(!off.ok);
    CHECK(off.body["violations"][0]["stage"] == "entry_point");
}

TEST_CASE("a silent client becomes a timeout error envelope and the rest proceed") {
    TestRig rig("timeout", 2, /*client_timeout_s=*/1.0);
    auto s = rig.session();

    // A client that registers and then never answers anything.
    net::Conn mute(net::connect_to("127.0.0.1", rig.server->port()));
    wire::Message reg;
    reg.kind = wire::Kind::status;
    reg.assignment_id = "-";
    reg.user_id = "-";
    reg.body = {{"event", "register"}, {"client_id", "mute1"}, {"model", "type_a"},
                {"time_scale", 1000.0}};
    REQUIRE(mute.send(reg));
    REQUIRE(mute.recv().status == net::Conn::RecvStatus::ok);

    auto submitted = s.submit(small_spec("mean", 2));
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id, 30.0);
    REQUIRE(results["records"].size() == 2);
    for (const auto& record : results["records"]) {
        CHECK(record["status"] == "ok");
        CHECK(record["kept"].size() == 2);
        REQUIRE(record["errors"].size() == 1);
        CHECK(record["errors"][0]["client_id"] == "mute1");
        CHECK(record["errors"][0]["error"]["kind"] == "timeout");
    }
}

TEST_CASE("a vanished client becomes an unreachable error envelope") {
    TestRig rig("vanish", 2, /*client_timeout_s=*/1.0);
    auto s = rig.session();

    net::Conn ghost(net::connect_to("127.0.0.1", rig.server->port()));
    wire::Message reg;
    reg.kind = wire::Kind::status;
    reg.assignment_id = "-";
    reg.user_id = "-";
    reg.body = {{"event", "register"}, {"client_id", "ghost1"}, {"model", "type_a"}};
    REQUIRE(ghost.send(reg));
    REQUIRE(ghost.recv().status == net::Conn::RecvStatus::ok);

    auto submitted = s.submit(small_spec("mean", 1));
    REQUIRE(submitted.ok);
    // The ghost never answers; its slot resolves either at the deadline or,
    // if the bridge noticed the closed socket, as unreachable.
    ghost.shutdown();
    auto results = rig.wait_finished(s, submitted.assignment_id, 30.0);
    const auto& record = results["records"][0];
    CHECK(record["kept"].size() == 2);
    REQUIRE(record["errors"].size() == 1);
    CHECK(record["errors"][0]["client_id"] == "ghost1");
}

TEST_CASE("watch streams records live and ends on finished") {
    TestRig rig("watch", 1);
    auto s = rig.session();
    auto submitted = s.submit(small_spec("mean", 3));
    REQUIRE(submitted.ok);

    auto watcher = rig.session();
    std::vector<json> seen;
    auto reply = watcher.watch(submitted.assignment_id, [&](const json& record) {
        seen.push_back(record);
        return true;
    });
    REQUIRE(reply.ok);
    CHECK(reply.body["delivered"] == 3);
    CHECK(seen.size() == 3);

    auto unknown = rig.session();
    auto err = unknown.watch("u1-999", [](const json&) { return true; });
    CHECK(!err.ok);
    CHECK(err.error.find("unknown assignment") != std::string::npos);
}

TEST_CASE("two users run concurrently without interference") {
    TestRig rig("twousers", 4);
    auto s1 = rig.session("u1");
    auto s2 = rig.session("u2");

    REQUIRE(s1.deploy("deploy_onboard", kIdentity, json("all")).ok);
    REQUIRE(s2.deploy("deploy_onboard", kDouble, json("all")).ok);

    auto doc1 = small_spec("custom", 2);
    auto doc2 = small_spec("custom", 2);
    doc2["user_id"] = "u2";

    auto a1 = s1.submit(doc1);
    auto a2 = s2.submit(doc2);
    REQUIRE(a1.ok);
    REQUIRE(a2.ok);
    CHECK(a1.assignment_id == "u1-1");
    CHECK(a2.assignment_id == "u2-1");

    auto r1 = rig.wait_finished(s1, a1.assignment_id);
    auto r2 = rig.wait_finished(s2, a2.assignment_id);
    std::string sig1 = r1["records"][0]["signature"];
    std::string sig2 = r2["records"][0]["signature"];
    CHECK(sig1 != sig2);
    // u1's identity module: payload equals the collected buffer;
    // u2's doubling module: every element is twice a sensible speed value.
    for (const auto& entry : r2["records"][0]["kept"]) {
        for (const auto& v : entry["payload"]) CHECK(v.get<double>() > 60.0);
    }
}

TEST_CASE("offboard average and custom offboard modules") {
    TestRig rig("offboard", 2);
    auto s = rig.session();

    auto doc = small_spec("mean", 1);
    doc["offboard"]["computation"] = "average";
    auto submitted = s.submit(doc);
    REQUIRE(submitted.ok);
    auto results = rig.wait_finished(s, submitted.assignment_id);
    const auto& record = results["records"][0];
    REQUIRE(record["status"] == "ok");
    double avg = record["offboard"].get<double>();
    double manual = 0;
    for (const auto& entry : record["kept"]) manual += entry["payload"].get<double>();
    manual /= record["kept"].size();
    CHECK(avg == doctest::Approx(manual));

    // Custom off-board: average of client means via script.
    const char* averager = R"(
fn custom_code(flat) {
  return mean(flat);
}
)";
    REQUIRE(s.deploy("deploy_offboard", averager, json()).ok);
    doc["offboard"]["computation"] = "custom";
    auto submitted2 = s.submit(doc);
    REQUIRE(submitted2.ok);
    auto results2 = rig.wait_finished(s, submitted2.assignment_id);
    const auto& record2 = results2["records"][0];
    REQUIRE(record2["status"] == "ok");
    CHECK(record2["offboard"].get<double>() == doctest::Approx(avg));
    CHECK(record2.contains("offboard_signature"));
}

TEST_CASE("schema violations get error replies naming the field") {
    TestRig rig("schema", 0);
    net::Conn conn(net::connect_to("127.0.0.1", rig.server->port()));
    wire::Message msg;
    msg.kind = wire::Kind::deploy_code;
    msg.assignment_id = "-";
    msg.user_id = "u1";
    msg.body = {{"custom_code", "!!not-base64!!"}};  // no mode either
    REQUIRE(conn.send(msg));
    auto received = conn.recv();
    REQUIRE(received.status == net::Conn::RecvStatus::ok);
    REQUIRE(received.message.kind == wire::Kind::error);
    bool names_mode = false;
    for (const auto& v : received.message.body["violations"])
        if (v["field"] == "mode") names_mode = true;
    CHECK(names_mode);
}
