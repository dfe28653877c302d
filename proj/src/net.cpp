#include "fleetlab/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace fleetlab::net {

Socket::~Socket() {
    close();
}

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) {
    other.fd_ = -1;
}

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

bool Socket::send_all(const void* data, std::size_t len) {
    const char* p = static_cast<const char*>(data);
    while (len > 0) {
        ssize_t n = ::send(fd_, p, len, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

long Socket::recv_some(void* buf, std::size_t cap) {
    while (true) {
        ssize_t n = ::recv(fd_, buf, cap, 0);
        if (n < 0 && errno == EINTR) continue;
        return static_cast<long>(n);
    }
}

void Socket::shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

namespace {

int make_connected_socket(const std::string& host, std::uint16_t port, std::string* error) {
    struct addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    struct addrinfo* res = nullptr;
    std::string port_str = std::to_string(port);
    int rc = getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res);
    if (rc != 0) {
        *error = std::string("getaddrinfo: ") + gai_strerror(rc);
        return -1;
    }
    int fd = -1;
    for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) *error = "connect to " + host + ":" + port_str + " failed: " + std::strerror(errno);
    else {
        int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    return fd;
}

}  // namespace

Socket connect_to(const std::string& host, std::uint16_t port) {
    std::string error;
    int fd = make_connected_socket(host, port, &error);
    if (fd < 0) throw NetError(error);
    return Socket(fd);
}

std::optional<Socket> connect_retry(const std::string& host, std::uint16_t port,
                                    std::chrono::milliseconds total_wait,
                                    std::chrono::milliseconds interval) {
    auto deadline = std::chrono::steady_clock::now() + total_wait;
    while (true) {
        std::string error;
        int fd = make_connected_socket(host, port, &error);
        if (fd >= 0) return Socket(fd);
        if (std::chrono::steady_clock::now() + interval > deadline) return std::nullopt;
        std::this_thread::sleep_for(interval);
    }
}

Listener::Listener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw NetError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    struct sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw NetError("bad listen address: " + host);
    }
    if (::bind(fd_, reinterpret_cast<struct sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd_);
        throw NetError(std::string("bind: ") + std::strerror(errno));
    }
    if (::listen(fd_, 64) != 0) {
        ::close(fd_);
        throw NetError(std::string("listen: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    if (getsockname(fd_, reinterpret_cast<struct sockaddr*>(&addr), &len) != 0) {
        ::close(fd_);
        throw NetError(std::string("getsockname: ") + std::strerror(errno));
    }
    port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
    shutdown();
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

std::optional<Socket> Listener::accept() {
    while (true) {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) {
            int one = 1;
            setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return Socket(fd);
        }
        if (errno == EINTR) continue;
        return std::nullopt;  // shut down or fatal
    }
}

void Listener::shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Conn::Received Conn::recv() {
    Received out;
    while (true) {
        try {
            if (auto msg = reader_.next()) {
                out.status = RecvStatus::ok;
                out.message = std::move(*msg);
                return out;
            }
        } catch (const wire::ProtocolError& e) {
            out.status = RecvStatus::protocol_error;
            out.error = e.what();
            return out;
        }
        std::uint8_t buf[16384];
        long n = socket_.recv_some(buf, sizeof(buf));
        if (n <= 0) {
            out.status = RecvStatus::closed;
            return out;
        }
        reader_.feed(buf, static_cast<std::size_t>(n));
    }
}

bool Conn::send(const wire::Message& msg) {
    std::vector<std::uint8_t> frame;
    try {
        frame = wire::encode_frame(msg);
    } catch (const wire::ProtocolError&) {
        return false;
    }
    std::lock_guard<std::mutex> lock(write_mutex_);
    return socket_.send_all(frame.data(), frame.size());
}

}  // namespace fleetlab::net
