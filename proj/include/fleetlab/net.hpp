#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "fleetlab/wire.hpp"

namespace fleetlab::net {

class NetError : public std::runtime_error {
public:
    explicit NetError(const std::string& what) : std::runtime_error(what) {}
};

/// Move-only RAII wrapper of a connected TCP socket.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    bool valid() const { return fd_ >= 0; }
    bool send_all(const void* data, std::size_t len);
    /// Bytes read, 0 on orderly close, -1 on error.
    long recv_some(void* buf, std::size_t cap);
    /// Unblocks any reader/writer on this socket from another thread.
    void shutdown_both();
    void close();

private:
    int fd_ = -1;
};

Socket connect_to(const std::string& host, std::uint16_t port);  // throws NetError

/// Retries connect_to until it succeeds or total_wait elapses.
std::optional<Socket> connect_retry(const std::string& host, std::uint16_t port,
                                    std::chrono::milliseconds total_wait,
                                    std::chrono::milliseconds interval);

class Listener {
public:
    /// Binds and listens; port 0 picks an ephemeral port.
    Listener(const std::string& host, std::uint16_t port);  // throws NetError
    ~Listener();

    std::uint16_t port() const { return port_; }
    /// Blocks; nullopt once shut down.
    std::optional<Socket> accept();
    void shutdown();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

/// A framed message connection: one reader, any number of writers.
class Conn {
public:
    explicit Conn(Socket socket) : socket_(std::move(socket)) {}

    enum class RecvStatus { ok, closed, protocol_error };
    struct Received {
        RecvStatus status = RecvStatus::closed;
        wire::Message message;
        std::string error;
    };

    /// Blocking; only one thread may call recv.
    Received recv();
    /// Thread-safe; false once the connection is gone.
    bool send(const wire::Message& msg);
    void shutdown() { socket_.shutdown_both(); }

private:
    Socket socket_;
    wire::FrameReader reader_;
    std::mutex write_mutex_;
};

using ConnPtr = std::shared_ptr<Conn>;

}  // namespace fleetlab::net
