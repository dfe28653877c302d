#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fleetlab::wire {

using json = nlohmann::json;

// A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
// object. Payloads above the cap are rejected on both ends.
constexpr std::size_t kMaxPayload = 16u * 1024u * 1024u;

enum class Kind {
    assignment,
    deploy_code,
    task,
    result,
    status,
    error,
    ack,
};

const char* kind_name(Kind k);
std::optional<Kind> kind_from_name(const std::string& name);

struct Message {
    Kind kind = Kind::ack;
    std::string assignment_id;
    std::string user_id;
    json body = json::object();

    bool operator==(const Message& other) const = default;
};

struct Violation {
    std::string field;
    std::string reason;
};

class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

/// Serializes a message into one frame. Throws ProtocolError if the payload
/// exceeds kMaxPayload.
std::vector<std::uint8_t> encode_frame(const Message& msg);

/// The JSON payload of a message without the length prefix; key order is
/// canonical (sorted), so equal messages encode to equal bytes.
std::string encode_payload(const Message& msg);

struct DecodeResult {
    enum class Status { ok, need_more, error };
    Status status = Status::need_more;
    Message message;
    std::size_t consumed = 0;  // bytes consumed from the input; 0 unless ok
    std::string error;
};

/// Decodes one frame from the head of `data`. Never consumes bytes on
/// need_more; malformed payloads report an error naming the offending field.
DecodeResult decode_frame(const std::uint8_t* data, std::size_t len);
DecodeResult decode_frame(const std::vector<std::uint8_t>& data);

/// Parses a JSON payload (the part after the length prefix).
Message parse_payload(const std::string& payload);  // throws ProtocolError

/// Per-kind schema check. Returns every violation, not just the first.
std::vector<Violation> validate_message(const Message& msg);

/// Incremental decoder for a byte stream: feed arbitrary chunks, poll
/// complete messages.
class FrameReader {
public:
    void feed(const std::uint8_t* data, std::size_t len);
    /// Next complete message, or nullopt if more bytes are needed.
    /// Throws ProtocolError on a malformed frame.
    std::optional<Message> next();
    std::size_t buffered() const { return buffer_.size(); }

private:
    std::vector<std::uint8_t> buffer_;
};

}  // namespace fleetlab::wire
