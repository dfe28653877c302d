#include "fleetlab/session.hpp"

#include "fleetlab/bridge.hpp"
#include "fleetlab/util.hpp"

namespace fleetlab::session {

using wire::Kind;
using wire::Message;

Session::Session(const std::string& host, std::uint16_t port, std::string user_id)
    : conn_(net::connect_to(host, port)), user_(std::move(user_id)) {}

Reply Session::request(const Message& msg) {
    Reply reply;
    if (!conn_.send(msg)) {
        reply.error = "bridge connection lost";
        return reply;
    }
    auto received = conn_.recv();
    if (received.status != net::Conn::RecvStatus::ok) {
        reply.error = received.error.empty() ? "bridge connection closed" : received.error;
        return reply;
    }
    reply.body = received.message.body;
    reply.assignment_id = received.message.assignment_id;
    if (received.message.kind == Kind::error) {
        reply.error = received.message.body.value("message", "bridge error");
        return reply;
    }
    reply.ok = true;
    return reply;
}

Reply Session::status_request(const std::string& event, const std::string& assignment_id,
                              json body) {
    Message msg;
    msg.kind = Kind::status;
    msg.assignment_id = assignment_id.empty() ? bridge::kSystemId : assignment_id;
    msg.user_id = user_;
    body["event"] = event;
    msg.body = std::move(body);
    return request(msg);
}

Reply Session::submit(const json& spec_doc) {
    Message msg;
    msg.kind = Kind::assignment;
    msg.assignment_id = bridge::kSystemId;  // the bridge assigns the real id
    msg.user_id = user_;
    msg.body = {{"spec", spec_doc}};
    Reply reply = request(msg);
    if (reply.ok) reply.assignment_id = reply.body.value("assignment_id", "");
    return reply;
}

Reply Session::deploy(const std::string& mode, const std::string& source, const json& selector,
                      std::uint64_t selection_seed) {
    Message msg;
    msg.kind = Kind::deploy_code;
    msg.assignment_id = bridge::kSystemId;
    msg.user_id = user_;
    msg.body = {{"mode", mode}, {"custom_code", base64_encode(source)}};
    if (!selector.is_null()) msg.body["selector"] = selector;
    if (selection_seed != 0) msg.body["selection_seed"] = selection_seed;
    return request(msg);
}

Reply Session::fetch_results(const std::string& assignment_id) {
    return status_request("fetch_results", assignment_id);
}

Reply Session::registry() {
    return status_request("registry", "");
}

Reply Session::stats() {
    return status_request("stats", "");
}

Reply Session::ping() {
    return status_request("ping", "");
}

Reply Session::ping_client(const std::string& client_id) {
    return status_request("ping_client", "", {{"client_id", client_id}});
}

Reply Session::watch(const std::string& assignment_id,
                     const std::function<bool(const json&)>& on_record) {
    Message msg;
    msg.kind = Kind::status;
    msg.assignment_id = assignment_id;
    msg.user_id = user_;
    msg.body = {{"event", "watch"}};
    Reply reply;
    if (!conn_.send(msg)) {
        reply.error = "bridge connection lost";
        return reply;
    }
    while (true) {
        auto received = conn_.recv();
        if (received.status != net::Conn::RecvStatus::ok) {
            reply.error = received.error.empty() ? "bridge connection closed" : received.error;
            return reply;
        }
        if (received.message.kind == Kind::error) {
            reply.error = received.message.body.value("message", "bridge error");
            reply.body = received.message.body;
            return reply;
        }
        const json& body = received.message.body;
        std::string event = body.value("event", "");
        if (event == "iteration") {
            if (!on_record(body["record"])) {
                reply.ok = true;
                return reply;
            }
        } else if (event == "finished") {
            reply.ok = true;
            reply.body = body;
            return reply;
        }
    }
}

}  // namespace fleetlab::session
