#include "fleetlab/wire.hpp"

#include <cstring>

#include "fleetlab/util.hpp"

namespace fleetlab::wire {

namespace {

const std::pair<Kind, const char*> kKindNames[] = {
    {Kind::assignment, "assignment"}, {Kind::deploy_code, "deploy_code"},
    {Kind::task, "task"},             {Kind::result, "result"},
    {Kind::status, "status"},         {Kind::error, "error"},
    {Kind::ack, "ack"},
};

}  // namespace

const char* kind_name(Kind k) {
    for (const auto& [kind, name] : kKindNames) {
        if (kind == k) return name;
    }
    return "?";
}

std::optional<Kind> kind_from_name(const std::string& name) {
    for (const auto& [kind, n] : kKindNames) {
        if (name == n) return kind;
    }
    return std::nullopt;
}

std::string encode_payload(const Message& msg) {
    json doc;
    doc["kind"] = kind_name(msg.kind);
    doc["assignment_id"] = msg.assignment_id;
    doc["user_id"] = msg.user_id;
    doc["body"] = msg.body;
    return doc.dump();
}

std::vector<std::uint8_t> encode_frame(const Message& msg) {
    std::string payload = encode_payload(msg);
    if (payload.size() > kMaxPayload) {
        throw ProtocolError("frame too large: " + std::to_string(payload.size()) + " bytes");
    }
    std::vector<std::uint8_t> out(4 + payload.size());
    std::uint32_t n = static_cast<std::uint32_t>(payload.size());
    out[0] = static_cast<std::uint8_t>(n >> 24);
    out[1] = static_cast<std::uint8_t>(n >> 16);
    out[2] = static_cast<std::uint8_t>(n >> 8);
    out[3] = static_cast<std::uint8_t>(n);
    std::memcpy(out.data() + 4, payload.data(), payload.size());
    return out;
}

Message parse_payload(const std::string& payload) {
    json doc = json::parse(payload, nullptr, false);
    if (doc.is_discarded()) throw ProtocolError("malformed JSON payload");
    if (!doc.is_object()) throw ProtocolError("payload is not a JSON object");
    if (!doc.contains("kind")) throw ProtocolError("missing required field: kind");
    if (!doc["kind"].is_string()) throw ProtocolError("field kind must be a string");

    Message msg;
    auto kind = kind_from_name(doc["kind"].get<std::string>());
    if (!kind) throw ProtocolError("unknown kind: " + doc["kind"].get<std::string>());
    msg.kind = *kind;

    auto take_string = [&](const char* field, std::string& out, bool required) {
        if (!doc.contains(field)) {
            if (required) throw ProtocolError(std::string("missing required field: ") + field);
            return;
        }
        if (!doc[field].is_string())
            throw ProtocolError(std::string("field ") + field + " must be a string");
        out = doc[field].get<std::string>();
    };
    bool ids_required = msg.kind != Kind::ack;
    take_string("assignment_id", msg.assignment_id, ids_required);
    take_string("user_id", msg.user_id, ids_required);
    if (doc.contains("body")) {
        if (!doc["body"].is_object()) throw ProtocolError("field body must be an object");
        msg.body = doc["body"];
    }
    return msg;
}

DecodeResult decode_frame(const std::uint8_t* data, std::size_t len) {
    DecodeResult res;
    if (len < 4) return res;  // need_more
    std::uint32_t n = (static_cast<std::uint32_t>(data[0]) << 24) |
                      (static_cast<std::uint32_t>(data[1]) << 16) |
                      (static_cast<std::uint32_t>(data[2]) << 8) |
                      static_cast<std::uint32_t>(data[3]);
    if (n > kMaxPayload) {
        res.status = DecodeResult::Status::error;
        res.error = "frame too large: " + std::to_string(n) + " bytes";
        return res;
    }
    if (len < 4 + static_cast<std::size_t>(n)) return res;  // need_more
    std::string payload(reinterpret_cast<const char*>(data + 4), n);
    try {
        res.message = parse_payload(payload);
    } catch (const ProtocolError& e) {
        res.status = DecodeResult::Status::error;
        res.error = e.what();
        return res;
    }
    res.status = DecodeResult::Status::ok;
    res.consumed = 4 + n;
    return res;
}

DecodeResult decode_frame(const std::vector<std::uint8_t>& data) {
    return decode_frame(data.data(), data.size());
}

std::vector<Violation> validate_message(const Message& msg) {
    std::vector<Violation> out;
    auto add = [&](std::string field, std::string reason) {
        out.push_back({std::move(field), std::move(reason)});
    };

    if (msg.kind != Kind::ack) {
        if (msg.assignment_id.empty()) add("assignment_id", "must be non-empty");
        if (msg.user_id.empty()) add("user_id", "must be non-empty");
    }
    const json& b = msg.body;

    auto need_string = [&](const char* field) -> const json* {
        if (!b.contains(field)) {
            add(field, "missing");
            return nullptr;
        }
        if (!b[field].is_string()) {
            add(field, "must be a string");
            return nullptr;
        }
        return &b[field];
    };
    auto need_int = [&](const char* field, std::int64_t min) {
        if (!b.contains(field)) {
            add(field, "missing");
            return;
        }
        if (!b[field].is_number_integer() || b[field].get<std::int64_t>() < min) {
            add(field, "must be an integer >= " + std::to_string(min));
        }
    };

    switch (msg.kind) {
        case Kind::deploy_code: {
            if (const json* mode = need_string("mode")) {
                std::string m = mode->get<std::string>();
                if (m != "deploy_onboard" && m != "deploy_offboard")
                    add("mode", "must be deploy_onboard or deploy_offboard");
            }
            if (const json* code = need_string("custom_code")) {
                if (!base64_decode(code->get<std::string>()))
                    add("custom_code", "must be valid base64");
            }
            break;
        }
        case Kind::task: {
            need_string("client_id");
            need_int("iteration", 0);
            if (!b.contains("onboard") || !b["onboard"].is_object())
                add("onboard", "missing or not an object");
            break;
        }
        case Kind::result: {
            need_string("client_id");
            need_string("signature");
            need_int("iteration", 0);
            bool has_payload = b.contains("payload");
            bool has_error = b.contains("error");
            if (has_payload == has_error)
                add(has_payload ? "payload" : "payload/error",
                    "exactly one of payload or error required");
            break;
        }
        case Kind::assignment: {
            if (!b.contains("spec") || !b["spec"].is_object())
                add("spec", "missing or not an object");
            break;
        }
        case Kind::status:
        case Kind::error:
        case Kind::ack:
            break;  // free-form body
    }
    return out;
}

void FrameReader::feed(const std::uint8_t* data, std::size_t len) {
    buffer_.insert(buffer_.end(), data, data + len);
}

std::optional<Message> FrameReader::next() {
    DecodeResult res = decode_frame(buffer_.data(), buffer_.size());
    switch (res.status) {
        case DecodeResult::Status::need_more:
            return std::nullopt;
        case DecodeResult::Status::error:
            throw ProtocolError(res.error);
        case DecodeResult::Status::ok:
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(res.consumed));
            return res.message;
    }
    return std::nullopt;
}

}  // namespace fleetlab::wire
