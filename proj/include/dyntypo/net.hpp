#pragma once

// Minimal blocking TCP line transport (POSIX sockets).

#include "dyntypo/error.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <utility>

namespace dyntypo::net {

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)), buffer_(std::move(o.buffer_)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
            buffer_ = std::move(o.buffer_);
        }
        return *this;
    }
    ~Socket() { close(); }

    bool valid() const noexcept { return fd_ >= 0; }
    int fd() const noexcept { return fd_; }

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    static Socket connect(const std::string& host, int port, std::chrono::milliseconds timeout) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string service = std::to_string(port);
        if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
            throw ProtocolError("cannot resolve " + host + ": " + ::gai_strerror(rc));
        Socket s;
        for (addrinfo* p = res; p; p = p->ai_next) {
            const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) {
                s = Socket(fd);
                break;
            }
            ::close(fd);
        }
        ::freeaddrinfo(res);
        if (!s.valid()) throw ProtocolError("cannot connect to " + host + ":" + service);
        s.set_timeout(timeout);
        return s;
    }

    void set_timeout(std::chrono::milliseconds timeout) {
        timeval tv{};
        tv.tv_sec = static_cast<decltype(tv.tv_sec)>(timeout.count() / 1000);
        tv.tv_usec = static_cast<decltype(tv.tv_usec)>((timeout.count() % 1000) * 1000);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    }

    void send_line(const std::string& line) {
        std::string data = line;
        data.push_back('\n');
        std::size_t sent = 0;
        while (sent < data.size()) {
            const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    /// Next newline-terminated line without the terminator. Returns false on
    /// orderly shutdown before any byte of a new line.
    bool recv_line(std::string& line) {
        for (;;) {
            if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
                line = buffer_.substr(0, pos);
                buffer_.erase(0, pos + 1);
                return true;
            }
            char chunk[65536];
            const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n == 0) {
                if (buffer_.empty()) return false;
                throw ProtocolError("connection closed mid-message", buffer_);
            }
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) throw ProtocolError("timed out waiting for reply", buffer_);
                throw ProtocolError(std::string("recv failed: ") + std::strerror(errno), buffer_);
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_ = -1;
    std::string buffer_;
};

class Listener {
public:
    /// Binds 127.0.0.1:port; port 0 picks a free port.
    explicit Listener(int port) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw ProtocolError("socket() failed");
        sock_ = Socket(fd);
        const int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw ProtocolError("cannot bind port " + std::to_string(port) + ": " + std::strerror(errno));
        if (::listen(fd, 4) != 0) throw ProtocolError("listen failed");
        socklen_t len = sizeof addr;
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    int port() const noexcept { return port_; }

    Socket accept() {
        for (;;) {
            const int fd = ::accept(sock_.fd(), nullptr, nullptr);
            if (fd >= 0) return Socket(fd);
            if (errno != EINTR) throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
        }
    }

private:
    Socket sock_;
    int port_ = 0;
};

} // namespace dyntypo::net
