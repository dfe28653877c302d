#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fleetlab/net.hpp"
#include "fleetlab/wire.hpp"

namespace fleetlab::session {

using json = wire::json;

struct Reply {
    bool ok = false;
    std::string error;
    json body;  // status body on success, error body otherwise
    std::string assignment_id;
};

/// A synchronous analyst-side connection to the bridge: one request, one
/// reply, in order. Watch turns the connection into an event stream.
class Session {
public:
    Session(const std::string& host, std::uint16_t port, std::string user_id);  // throws NetError

    Reply submit(const json& spec_doc);
    Reply deploy(const std::string& mode, const std::string& source, const json& selector,
                 std::uint64_t selection_seed = 0);
    Reply fetch_results(const std::string& assignment_id);
    Reply registry();
    Reply stats();
    Reply ping();
    Reply ping_client(const std::string& client_id);

    /// Streams events for one assignment. The callback sees each iteration
    /// record; returning false stops early. Returns the closing reply
    /// (finished event or error).
    Reply watch(const std::string& assignment_id, const std::function<bool(const json&)>& on_record);

    const std::string& user() const { return user_; }

private:
    Reply request(const wire::Message& msg);
    Reply status_request(const std::string& event, const std::string& assignment_id,
                         json body = json::object());

    net::Conn conn_;
    std::string user_;
};

}  // namespace fleetlab::session
