#include "fleetlab/bridge.hpp"

#include <unistd.h>

#include <algorithm>
#include <future>

#include "fleetlab/util.hpp"

namespace fleetlab::bridge {

using wire::Kind;
using wire::Message;
using json = wire::json;

std::int64_t process_start_ms() {
    static const std::int64_t start = now_unix_ms();
    return start;
}

namespace {
// Capture the start time as early as static initialization.
const std::int64_t g_start_capture = process_start_ms();
}  // namespace

BridgeServer::BridgeServer(BridgeConfig config) : config_(std::move(config)) {
    if (config_.store_dir.empty()) config_.store_dir = "bridge-store";
    if (config_.audit_path.empty()) config_.audit_path = config_.store_dir / "audit.jsonl";
    store_ = std::make_unique<codeswap::CodeStore>(config_.store_dir);
    audit_ = std::make_unique<audit::AuditLog>(config_.audit_path);
}

BridgeServer::~BridgeServer() {
    stop();
}

void BridgeServer::start() {
    listener_ = std::make_unique<net::Listener>(config_.host, config_.port);
    port_ = listener_->port();
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void BridgeServer::stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;

    if (listener_) listener_->shutdown();
    {
        std::lock_guard<std::mutex> lock(serve_threads_mutex_);
        for (auto& conn : all_conns_) conn->shutdown();
    }
    {
        std::lock_guard<std::mutex> lock(handlers_mutex_);
        for (auto& [id, state] : handlers_) state->cv.notify_all();
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> serve;
    {
        std::lock_guard<std::mutex> lock(serve_threads_mutex_);
        serve.swap(serve_threads_);
    }
    for (auto& t : serve) {
        if (t.joinable()) t.join();
    }
    for (auto& [id, state] : handlers_) {
        state->cv.notify_all();
        if (state->thread.joinable()) state->thread.join();
    }
}

std::size_t BridgeServer::running_handlers() const {
    std::lock_guard<std::mutex> lock(handlers_mutex_);
    std::size_t n = 0;
    for (const auto& [id, state] : handlers_)
        if (!state->done.load()) ++n;
    return n;
}

std::vector<spec::RegistryEntry> BridgeServer::registry_snapshot() const {
    std::lock_guard<std::mutex> lock(registry_mutex_);
    std::vector<spec::RegistryEntry> out;
    out.reserve(registry_.size());
    for (const auto& [id, info] : registry_) out.push_back({id, info.model});
    return out;
}

void BridgeServer::accept_loop() {
    while (!stopping_.load()) {
        auto socket = listener_->accept();
        if (!socket) break;
        auto conn = std::make_shared<net::Conn>(std::move(*socket));
        std::lock_guard<std::mutex> lock(serve_threads_mutex_);
        if (stopping_.load()) break;
        all_conns_.push_back(conn);
        serve_threads_.emplace_back([this, conn] { serve_connection(conn); });
    }
}

void BridgeServer::send_error(const net::ConnPtr& conn, const std::string& assignment_id,
                              const std::string& user_id, const std::string& reason,
                              json extra) {
    Message msg;
    msg.kind = Kind::error;
    msg.assignment_id = assignment_id.empty() ? kSystemId : assignment_id;
    msg.user_id = user_id.empty() ? kSystemId : user_id;
    extra["message"] = reason;
    msg.body = std::move(extra);
    conn->send(msg);
}

void BridgeServer::serve_connection(net::ConnPtr conn) {
    std::string registered_client;
    while (!stopping_.load()) {
        auto received = conn->recv();
        if (received.status == net::Conn::RecvStatus::closed) break;
        if (received.status == net::Conn::RecvStatus::protocol_error) {
            send_error(conn, kSystemId, kSystemId, received.error);
            break;
        }
        Message& msg = received.message;
        auto violations = wire::validate_message(msg);
        if (!violations.empty()) {
            json list = json::array();
            for (const auto& v : violations)
                list.push_back({{"field", v.field}, {"reason", v.reason}});
            send_error(conn, msg.assignment_id, msg.user_id, "schema violation",
                       {{"violations", list}});
            continue;
        }
        switch (msg.kind) {
            case Kind::status: {
                if (msg.body.value("event", "") == "register") {
                    std::string client_id = msg.body.value("client_id", "");
                    if (!is_safe_identifier(client_id)) {
                        send_error(conn, kSystemId, kSystemId, "bad client id");
                        break;
                    }
                    {
                        std::lock_guard<std::mutex> lock(registry_mutex_);
                        registry_[client_id] = ClientInfo{msg.body.value("model", ""),
                                                          msg.body.value("time_scale", 1.0), conn};
                    }
                    registered_client = client_id;
                    Message ack;
                    ack.kind = Kind::ack;
                    ack.body = {{"event", "registered"}, {"client_id", client_id}};
                    conn->send(ack);
                } else {
                    handle_status(msg, conn);
                }
                break;
            }
            case Kind::assignment:
                handle_submit(msg, conn);
                break;
            case Kind::deploy_code:
                handle_deploy(msg, conn);
                break;
            case Kind::result:
                handle_result(msg);
                break;
            case Kind::ack:
                handle_ack(msg);
                break;
            case Kind::task:
            case Kind::error:
                // Bridge never receives these; ignore.
                break;
        }
    }
    if (!registered_client.empty()) unregister_client(registered_client, conn);
}

void BridgeServer::unregister_client(const std::string& client_id, const net::ConnPtr& conn) {
    std::lock_guard<std::mutex> lock(registry_mutex_);
    auto it = registry_.find(client_id);
    if (it != registry_.end() && it->second.conn == conn) registry_.erase(it);
}

std::shared_ptr<BridgeServer::Waiter> BridgeServer::add_waiter(const std::string& req_id) {
    auto waiter = std::make_shared<Waiter>();
    std::lock_guard<std::mutex> lock(waiters_mutex_);
    waiters_[req_id] = waiter;
    return waiter;
}

json BridgeServer::wait_for(const std::shared_ptr<Waiter>& waiter, const std::string& req_id,
                            double timeout_s) {
    std::unique_lock<std::mutex> lock(waiter->m);
    waiter->cv.wait_for(lock, std::chrono::duration<double>(timeout_s),
                        [&] { return waiter->done || stopping_.load(); });
    json reply = waiter->done ? waiter->reply : json();
    lock.unlock();
    std::lock_guard<std::mutex> wl(waiters_mutex_);
    waiters_.erase(req_id);
    return reply;
}

void BridgeServer::handle_ack(const Message& msg) {
    std::string req_id = msg.body.value("req_id", "");
    if (req_id.empty()) return;
    std::shared_ptr<Waiter> waiter;
    {
        std::lock_guard<std::mutex> lock(waiters_mutex_);
        auto it = waiters_.find(req_id);
        if (it == waiters_.end()) return;
        waiter = it->second;
    }
    {
        std::lock_guard<std::mutex> lock(waiter->m);
        waiter->reply = msg.body;
        waiter->done = true;
    }
    waiter->cv.notify_all();
}

void BridgeServer::handle_status(const Message& msg, const net::ConnPtr& conn) {
    std::string event = msg.body.value("event", "");
    Message reply;
    reply.kind = Kind::status;
    reply.assignment_id = msg.assignment_id;
    reply.user_id = msg.user_id;

    if (event == "ping") {
        reply.body = {{"event", "pong"},
                      {"start_time_ms", process_start_ms()},
                      {"pid", static_cast<std::int64_t>(::getpid())}};
        conn->send(reply);
        return;
    }
    if (event == "registry") {
        json clients = json::array();
        for (const auto& e : registry_snapshot())
            clients.push_back({{"client_id", e.client_id}, {"model", e.model}});
        reply.body = {{"event", "registry"}, {"clients", clients}};
        conn->send(reply);
        return;
    }
    if (event == "stats") {
        reply.body = {{"event", "stats"},
                      {"running_handlers", running_handlers()},
                      {"registered_clients", registry_snapshot().size()}};
        conn->send(reply);
        return;
    }
    if (event == "ping_client") {
        std::string client_id = msg.body.value("client_id", "");
        net::ConnPtr client_conn;
        {
            std::lock_guard<std::mutex> lock(registry_mutex_);
            auto it = registry_.find(client_id);
            if (it != registry_.end()) client_conn = it->second.conn;
        }
        if (!client_conn) {
            send_error(conn, msg.assignment_id, msg.user_id, "unknown client id: " + client_id);
            return;
        }
        std::string req_id = "ping-" + std::to_string(req_counter_.fetch_add(1));
        auto waiter = add_waiter(req_id);
        Message probe;
        probe.kind = Kind::status;
        probe.assignment_id = kSystemId;
        probe.user_id = kSystemId;
        probe.body = {{"event", "ping"}, {"req_id", req_id}};
        if (!client_conn->send(probe)) {
            send_error(conn, msg.assignment_id, msg.user_id, "client unreachable: " + client_id);
            return;
        }
        json pong = wait_for(waiter, req_id, config_.deploy_ack_timeout_s);
        if (pong.is_null()) {
            send_error(conn, msg.assignment_id, msg.user_id, "client ping timed out: " + client_id);
            return;
        }
        pong["event"] = "pong";
        reply.body = std::move(pong);
        conn->send(reply);
        return;
    }
    if (event == "watch" || event == "fetch_results") {
        std::shared_ptr<AssignmentEvents> events;
        {
            std::lock_guard<std::mutex> lock(events_mutex_);
            auto it = events_.find(msg.assignment_id);
            if (it != events_.end()) events = it->second;
        }
        if (!events) {
            send_error(conn, msg.assignment_id, msg.user_id,
                       "unknown assignment id: " + msg.assignment_id);
            return;
        }
        std::lock_guard<std::mutex> lock(events->m);
        if (event == "fetch_results") {
            reply.body = {{"event", "results"},
                          {"records", events->records},
                          {"finished", events->finished}};
            conn->send(reply);
            return;
        }
        for (const auto& record : events->records) {
            Message update;
            update.kind = Kind::status;
            update.assignment_id = msg.assignment_id;
            update.user_id = events->user_id;
            update.body = {{"event", "iteration"}, {"record", record}};
            conn->send(update);
        }
        if (events->finished) {
            Message fin;
            fin.kind = Kind::status;
            fin.assignment_id = msg.assignment_id;
            fin.user_id = events->user_id;
            fin.body = {{"event", "finished"}, {"delivered", events->records.size()}};
            conn->send(fin);
        } else {
            events->watchers.push_back(conn);
        }
        return;
    }
    send_error(conn, msg.assignment_id, msg.user_id, "unknown status event: " + event);
}

void BridgeServer::handle_deploy(const Message& msg, const net::ConnPtr& conn) {
    const json& b = msg.body;
    std::string mode = b.value("mode", "");
    auto decoded = base64_decode(b.value("custom_code", ""));
    if (!decoded) {
        send_error(conn, msg.assignment_id, msg.user_id, "custom_code is not valid base64");
        return;
    }
    if (!is_safe_identifier(msg.user_id)) {
        send_error(conn, msg.assignment_id, msg.user_id, "bad user id");
        return;
    }
    codeswap::Target target =
        mode == "deploy_onboard" ? codeswap::Target::onboard : codeswap::Target::offboard;

    // Defensive re-validation; the CLI already checked, but the message may
    // not have come from the CLI.
    codeswap::ValidateOptions opts;
    opts.probe_seed = splitmix64(static_cast<std::uint64_t>(now_unix_ms()) ^
                                 req_counter_.fetch_add(1));

    auto reject_invalid = [&](const codeswap::ValidationReport& report) {
        json violations = json::array();
        for (const auto& v : report.violations)
            violations.push_back({{"stage", v.stage}, {"message", v.message}});
        send_error(conn, msg.assignment_id, msg.user_id, "custom code validation failed",
                   {{"violations", violations}});
    };

    auto module = codeswap::CustomModule::make(*decoded, msg.user_id, target);

    Message reply;
    reply.kind = Kind::status;
    reply.assignment_id = msg.assignment_id;
    reply.user_id = msg.user_id;

    if (target == codeswap::Target::offboard) {
        auto report = codeswap::validate_custom(*decoded, target, opts);
        if (!report.ok) {
            reject_invalid(report);
            return;
        }
        store_->store(module);
        audit_->append(kSystemId, std::nullopt, "deploy_offboard", module.signature, "");
        reply.body = {{"event", "deployed"},
                      {"target", "offboard"},
                      {"signature", module.signature},
                      {"ok", true}};
        conn->send(reply);
        return;
    }

    // On-board: the bridge's own validation runs concurrently with the
    // forwarding round trip. Every client re-validates for itself before
    // storing anything, so a bad module never lands on a node either way;
    // the user-facing status requires both sides to pass.
    auto bridge_validation = std::async(std::launch::async, [&] {
        return codeswap::validate_custom(*decoded, target, opts);
    });

    // On-board: forward to the selected clients and gather acks.
    std::vector<std::string> targets;
    try {
        spec::ClientSelector selector;
        if (b.contains("selector")) {
            const json& sel = b["selector"];
            if (sel.is_string() && sel == "all") {
                selector.variant = spec::ClientSelector::All{};
            } else if (sel.is_object() && sel.contains("ids")) {
                selector.variant =
                    spec::ClientSelector::Ids{sel["ids"].get<std::vector<std::string>>()};
            } else if (sel.is_object() && sel.contains("model")) {
                selector.variant = spec::ClientSelector::Model{sel["model"].get<std::string>()};
            } else if (sel.is_object() && sel.contains("random")) {
                selector.variant = spec::ClientSelector::Random{sel["random"].get<std::int64_t>()};
            } else {
                send_error(conn, msg.assignment_id, msg.user_id, "bad deploy selector");
                return;
            }
        }
        targets = spec::select_clients(selector, registry_snapshot(),
                                       b.value("selection_seed", std::uint64_t{0}));
    } catch (const spec::SelectionError& e) {
        send_error(conn, msg.assignment_id, msg.user_id, e.what());
        return;
    }
    if (targets.empty()) {
        send_error(conn, msg.assignment_id, msg.user_id, "no clients registered");
        return;
    }

    struct PendingAck {
        std::string client_id;
        std::string req_id;
        std::shared_ptr<Waiter> waiter;
    };
    std::vector<PendingAck> pending;
    json failures = json::array();
    for (const auto& client_id : targets) {
        net::ConnPtr client_conn;
        {
            std::lock_guard<std::mutex> lock(registry_mutex_);
            auto it = registry_.find(client_id);
            if (it != registry_.end()) client_conn = it->second.conn;
        }
        std::string req_id = "dep-" + std::to_string(req_counter_.fetch_add(1));
        Message fwd;
        fwd.kind = Kind::deploy_code;
        fwd.assignment_id = kSystemId;
        fwd.user_id = msg.user_id;
        fwd.body = {{"mode", "deploy_onboard"},
                    {"custom_code", b["custom_code"]},
                    {"signature", module.signature},
                    {"req_id", req_id}};
        audit_->append(kSystemId, std::nullopt, "deploy_forward", module.signature, client_id);
        if (!client_conn) {
            failures.push_back({{"client_id", client_id}, {"message", "not connected"}});
            continue;
        }
        auto waiter = add_waiter(req_id);
        if (!client_conn->send(fwd)) {
            failures.push_back({{"client_id", client_id}, {"message", "send failed"}});
            std::lock_guard<std::mutex> lock(waiters_mutex_);
            waiters_.erase(req_id);
            continue;
        }
        pending.push_back({client_id, req_id, waiter});
    }

    json acks = json::array();
    for (auto& p : pending) {
        json ack = wait_for(p.waiter, p.req_id, config_.deploy_ack_timeout_s);
        if (ack.is_null()) {
            failures.push_back({{"client_id", p.client_id}, {"message", "deploy ack timed out"}});
            audit_->append(kSystemId, std::nullopt, "deploy_ack_timeout", module.signature,
                           p.client_id);
        } else if (ack.value("ok", false)) {
            acks.push_back({{"client_id", p.client_id}, {"signature", ack.value("signature", "")}});
            audit_->append(kSystemId, std::nullopt, "deploy_ack", ack.value("signature", ""),
                           p.client_id);
        } else {
            failures.push_back({{"client_id", p.client_id},
                                {"message", ack.value("message", "client rejected module")},
                                {"stage", ack.value("stage", "")}});
            audit_->append(kSystemId, std::nullopt, "deploy_rejected", module.signature,
                           p.client_id);
        }
    }

    auto report = bridge_validation.get();
    if (!report.ok) {
        reject_invalid(report);
        return;
    }

    // The bridge keeps its own copy of the latest on-board module; it is the
    // tie-break signature for majority voting and the dispatch precondition.
    store_->store(module);

    reply.body = {{"event", "deployed"},
                  {"target", "onboard"},
                  {"signature", module.signature},
                  {"acks", acks},
                  {"failures", failures},
                  {"ok", failures.empty()}};
    conn->send(reply);
}

void BridgeServer::handle_submit(const Message& msg, const net::ConnPtr& conn) {
    json doc = msg.body.value("spec", json::object());
    if (!doc.contains("user_id")) doc["user_id"] = msg.user_id;
    if (doc["user_id"] != msg.user_id) {
        send_error(conn, msg.assignment_id, msg.user_id, "spec user_id does not match session");
        return;
    }
    auto vr = spec::validate_assignment(doc);
    if (!vr.ok()) {
        json violations = json::array();
        for (const auto& v : vr.violations)
            violations.push_back({{"field", v.field}, {"reason", v.reason}});
        send_error(conn, msg.assignment_id, msg.user_id, "invalid assignment spec",
                   {{"violations", violations}});
        return;
    }
    spec::AssignmentSpec assignment = *vr.spec;

    if (assignment.onboard.computation == spec::OnboardComputation::custom &&
        !store_->load(assignment.user_id, codeswap::Target::onboard)) {
        send_error(conn, msg.assignment_id, msg.user_id,
                   "no on-board custom code deployed for user " + assignment.user_id);
        return;
    }
    if (assignment.offboard.computation == spec::OffboardComputation::custom &&
        !store_->load(assignment.user_id, codeswap::Target::offboard)) {
        send_error(conn, msg.assignment_id, msg.user_id,
                   "no off-board custom code deployed for user " + assignment.user_id);
        return;
    }

    std::vector<std::string> clients;
    try {
        clients = spec::select_clients(assignment.clients, registry_snapshot(),
                                       assignment.selection_seed);
    } catch (const spec::SelectionError& e) {
        send_error(conn, msg.assignment_id, msg.user_id, e.what());
        return;
    }
    if (clients.empty()) {
        send_error(conn, msg.assignment_id, msg.user_id, "client selection resolved to empty set");
        return;
    }

    std::string assignment_id;
    {
        std::lock_guard<std::mutex> lock(counters_mutex_);
        assignment_id = assignment.user_id + "-" +
                        std::to_string(++user_counters_[assignment.user_id]);
    }

    auto events = std::make_shared<AssignmentEvents>();
    events->user_id = assignment.user_id;
    {
        std::lock_guard<std::mutex> lock(events_mutex_);
        events_[assignment_id] = events;
    }

    auto state = std::make_shared<HandlerState>();
    state->assignment_id = assignment_id;
    state->assignment = std::move(assignment);
    state->clients = std::move(clients);
    {
        std::lock_guard<std::mutex> lock(handlers_mutex_);
        handlers_[assignment_id] = state;
    }
    audit_->append(assignment_id, std::nullopt, "submitted", "", "");
    state->thread = std::thread([this, state] { run_handler(state); });

    Message reply;
    reply.kind = Kind::status;
    reply.assignment_id = assignment_id;
    reply.user_id = msg.user_id;
    reply.body = {{"event", "submitted"},
                  {"assignment_id", assignment_id},
                  {"clients", state->clients}};
    conn->send(reply);
}

void BridgeServer::handle_result(const Message& msg) {
    std::shared_ptr<HandlerState> state;
    {
        std::lock_guard<std::mutex> lock(handlers_mutex_);
        auto it = handlers_.find(msg.assignment_id);
        if (it != handlers_.end()) state = it->second;
    }
    if (!state || state->done.load()) return;

    aggregate::ResultEnvelope env;
    try {
        env = aggregate::ResultEnvelope::from_json(msg.body);
    } catch (const json::exception&) {
        return;
    }
    env.assignment_id = msg.assignment_id;

    std::lock_guard<std::mutex> lock(state->m);
    if (env.iteration != state->current_iteration) {
        audit_->append(msg.assignment_id, env.iteration, "late_result", env.signature,
                       env.client_id);
        return;
    }
    if (std::find(state->clients.begin(), state->clients.end(), env.client_id) ==
        state->clients.end())
        return;
    if (state->received.count(env.client_id)) return;  // duplicate
    audit_->append(msg.assignment_id, env.iteration, env.is_error() ? "error_envelope" : "result",
                   env.signature, env.client_id);
    state->received.emplace(env.client_id, std::move(env));
    state->cv.notify_all();
}

std::optional<std::string> BridgeServer::deployed_onboard_signature(
    const spec::AssignmentSpec& a) const {
    if (a.onboard.computation == spec::OnboardComputation::custom) {
        if (auto module = store_->load(a.user_id, codeswap::Target::onboard))
            return module->signature;
        return std::nullopt;
    }
    return std::string("builtin:") + spec::name_of(a.onboard.computation);
}

void BridgeServer::emit_record(const std::shared_ptr<AssignmentEvents>& events,
                               const json& record, const std::string& assignment_id,
                               const std::string& user_id) {
    std::vector<net::ConnPtr> watchers;
    {
        std::lock_guard<std::mutex> lock(events->m);
        events->records.push_back(record);
        watchers = events->watchers;
    }
    Message update;
    update.kind = Kind::status;
    update.assignment_id = assignment_id;
    update.user_id = user_id;
    update.body = {{"event", "iteration"}, {"record", record}};
    for (auto& w : watchers) w->send(update);
}

void BridgeServer::run_handler(std::shared_ptr<HandlerState> state) {
    const spec::AssignmentSpec& a = state->assignment;
    std::shared_ptr<AssignmentEvents> events;
    {
        std::lock_guard<std::mutex> lock(events_mutex_);
        events = events_[state->assignment_id];
    }
    bool connected_flow = a.onboard.result_flow() == spec::ResultFlow::connected;

    for (std::int64_t iteration = 0; iteration < a.offboard.iterations; ++iteration) {
        if (stopping_.load()) break;

        auto deployed_sig = deployed_onboard_signature(a);
        std::optional<std::string> hint;
        if (a.onboard.computation == spec::OnboardComputation::custom) hint = deployed_sig;

        std::optional<std::vector<double>> model;
        {
            std::lock_guard<std::mutex> lock(state->m);
            state->current_iteration = iteration;
            state->received.clear();
            model = state->carry_model;
        }

        auto tasks = spec::split_into_tasks(a, state->assignment_id, state->clients, iteration,
                                            model, hint);

        double max_nominal_s = 0;
        for (const auto& task : tasks) {
            net::ConnPtr conn;
            double time_scale = 1.0;
            {
                std::lock_guard<std::mutex> lock(registry_mutex_);
                auto it = registry_.find(task.client_id);
                if (it != registry_.end()) {
                    conn = it->second.conn;
                    time_scale = it->second.time_scale;
                }
            }
            audit_->append(state->assignment_id, iteration, "dispatch",
                           hint.value_or(deployed_sig.value_or("")), task.client_id);
            bool sent = false;
            if (conn) {
                Message task_msg;
                task_msg.kind = Kind::task;
                task_msg.assignment_id = state->assignment_id;
                task_msg.user_id = a.user_id;
                task_msg.body = task.to_json();
                sent = conn->send(task_msg);
            }
            if (!sent) {
                aggregate::ResultEnvelope env;
                env.assignment_id = state->assignment_id;
                env.client_id = task.client_id;
                env.iteration = iteration;
                env.signature = "";
                env.error = {{"kind", "unreachable"}, {"message", "client not connected"}};
                audit_->append(state->assignment_id, iteration, "error_envelope", "",
                               task.client_id);
                std::lock_guard<std::mutex> lock(state->m);
                state->received.emplace(task.client_id, std::move(env));
            } else {
                max_nominal_s = std::max(
                    max_nominal_s, a.onboard.nominal_duration_s() / std::max(time_scale, 1e-9));
            }
        }

        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(max_nominal_s +
                                                          config_.client_timeout_s));
        {
            std::unique_lock<std::mutex> lock(state->m);
            state->cv.wait_until(lock, deadline, [&] {
                return state->received.size() == state->clients.size() || stopping_.load();
            });
            for (const auto& client_id : state->clients) {
                if (!state->received.count(client_id)) {
                    aggregate::ResultEnvelope env;
                    env.assignment_id = state->assignment_id;
                    env.client_id = client_id;
                    env.iteration = iteration;
                    env.error = {{"kind", "timeout"},
                                 {"message", "client did not report within the deadline"}};
                    audit_->append(state->assignment_id, iteration, "timeout_envelope", "",
                                   client_id);
                    state->received.emplace(client_id, std::move(env));
                }
            }
        }
        if (stopping_.load()) break;

        std::vector<aggregate::ResultEnvelope> valid;
        std::vector<aggregate::ResultEnvelope> errors;
        {
            std::lock_guard<std::mutex> lock(state->m);
            for (const auto& [client_id, env] : state->received) {
                if (env.is_error()) errors.push_back(env);
                else valid.push_back(env);
            }
        }

        auto outcome = aggregate::majority_filter(valid, deployed_sig);
        for (const auto& env : outcome.kept)
            audit_->append(state->assignment_id, iteration, "kept", env.signature, env.client_id);
        for (const auto& env : outcome.discarded)
            audit_->append(state->assignment_id, iteration, "discarded", env.signature,
                           env.client_id);

        json record;
        record["assignment_id"] = state->assignment_id;
        record["iteration"] = iteration;
        json kept = json::array();
        for (const auto& env : outcome.kept)
            kept.push_back({{"client_id", env.client_id},
                            {"payload", env.payload ? *env.payload : json()}});
        json discarded = json::array();
        for (const auto& env : outcome.discarded)
            discarded.push_back({{"client_id", env.client_id}, {"signature", env.signature}});
        json error_list = json::array();
        for (const auto& env : errors)
            error_list.push_back({{"client_id", env.client_id},
                                  {"error", env.error ? *env.error : json()}});
        record["kept"] = kept;
        record["discarded"] = discarded;
        record["errors"] = error_list;

        if (!outcome.winning_signature) {
            if (valid.empty()) {
                record["status"] = "failed";
                record["signature"] = json();
                audit_->append(state->assignment_id, iteration, "iteration_failed", "", "");
            } else {
                record["status"] = "inconsistent";
                record["signature"] = json();
                audit_->append(state->assignment_id, iteration, "iteration_inconsistent", "", "");
            }
            record["offboard"] = json();
            emit_record(events, record, state->assignment_id, a.user_id);
            continue;
        }

        record["signature"] = *outcome.winning_signature;
        auto off = aggregate::offboard_compute(
            a.offboard.computation, outcome.kept, a.user_id, *store_, a.onboard.parameters,
            std::chrono::milliseconds(static_cast<std::int64_t>(config_.exec_timeout_s * 1000)));
        if (!off.ok()) {
            record["status"] = "offboard_failed";
            record["offboard"] = json();
            record["offboard_error"] = *off.error;
            audit_->append(state->assignment_id, iteration, "offboard_failed", off.signature, "");
            emit_record(events, record, state->assignment_id, a.user_id);
            continue;
        }
        record["status"] = "ok";
        record["offboard"] = *off.value;
        if (!off.signature.empty()) record["offboard_signature"] = off.signature;
        audit_->append(state->assignment_id, iteration, "iteration_result",
                       *outcome.winning_signature, "");

        if (connected_flow) {
            std::vector<double> next_model;
            if (off.value->is_number()) next_model.push_back(off.value->get<double>());
            else if (off.value->is_array()) next_model = off.value->get<std::vector<double>>();
            std::lock_guard<std::mutex> lock(state->m);
            state->carry_model = std::move(next_model);
        }
        emit_record(events, record, state->assignment_id, a.user_id);
    }

    state->done.store(true);
    audit_->append(state->assignment_id, std::nullopt, "finished", "", "");
    std::vector<net::ConnPtr> watchers;
    std::size_t delivered = 0;
    {
        std::lock_guard<std::mutex> lock(events->m);
        events->finished = true;
        watchers = std::move(events->watchers);
        events->watchers.clear();
        delivered = events->records.size();
    }
    Message fin;
    fin.kind = Kind::status;
    fin.assignment_id = state->assignment_id;
    fin.user_id = a.user_id;
    fin.body = {{"event", "finished"}, {"delivered", delivered}};
    for (auto& w : watchers) w->send(fin);
}

}  // namespace fleetlab::bridge
