// SPDX-License-Identifier: Apache-2.0
#include "salt/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <vector>

#include "salt/errors.hpp"

namespace salt {

// ---- frame helpers -----------------------------------------------------

void Transport::send_frame(const Frame& frame) {
    auto bytes = encode_frame(frame);
    send_bytes(bytes.data(), bytes.size());
}

std::optional<Frame> Transport::recv_frame() {
    for (;;) {
        if (auto f = parser_.next()) return f;
        std::uint8_t chunk[4096];
        const std::size_t n = recv_bytes(chunk, sizeof(chunk));
        if (n == 0) {
            if (parser_.mid_frame()) throw FramingError("stream ended mid-frame");
            return std::nullopt;
        }
        parser_.feed(chunk, n);
    }
}

// ---- loopback ------------------------------------------------------------

namespace {

struct ByteQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::uint8_t> data;
    bool closed = false;

    void push(const std::uint8_t* p, std::size_t n) {
        std::lock_guard lock(mu);
        if (closed) throw SessionError("send on closed loopback", -1);
        data.insert(data.end(), p, p + n);
        cv.notify_all();
    }

    std::size_t pop(std::uint8_t* out, std::size_t cap) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !data.empty() || closed; });
        if (data.empty()) return 0;
        const std::size_t n = std::min(cap, data.size());
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = data.front();
            data.pop_front();
        }
        return n;
    }

    void close() {
        std::lock_guard lock(mu);
        closed = true;
        cv.notify_all();
    }
};

class LoopbackTransport final : public Transport {
public:
    LoopbackTransport(std::shared_ptr<ByteQueue> out, std::shared_ptr<ByteQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}

    ~LoopbackTransport() override { close(); }

    void send_bytes(const std::uint8_t* data, std::size_t len) override { out_->push(data, len); }
    std::size_t recv_bytes(std::uint8_t* buf, std::size_t cap) override { return in_->pop(buf, cap); }
    void close() override {
        out_->close();
        in_->close();
    }

private:
    std::shared_ptr<ByteQueue> out_;
    std::shared_ptr<ByteQueue> in_;
};

class TcpTransport final : public Transport {
public:
    explicit TcpTransport(int fd) : fd_(fd) {}
    ~TcpTransport() override { close(); }

    void send_bytes(const std::uint8_t* data, std::size_t len) override {
        std::size_t sent = 0;
        while (sent < len) {
            const ssize_t n = ::send(fd_, data + sent, len - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw SessionError(std::string("socket send failed: ") + std::strerror(errno), -1);
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::size_t recv_bytes(std::uint8_t* buf, std::size_t cap) override {
        for (;;) {
            const ssize_t n = ::recv(fd_, buf, cap, 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw SessionError(std::string("socket recv failed: ") + std::strerror(errno), -1);
            }
            return static_cast<std::size_t>(n);
        }
    }

    void close() override {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw ConfigError("invalid IPv4 address '" + host + "'");
    }
    return addr;
}

} // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback() {
    auto ab = std::make_shared<ByteQueue>();
    auto ba = std::make_shared<ByteQueue>();
    return {std::make_unique<LoopbackTransport>(ab, ba), std::make_unique<LoopbackTransport>(ba, ab)};
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw SessionError("socket() failed", -1);
    sockaddr_in addr = make_addr(host, port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw SessionError("connect to " + host + ":" + std::to_string(port) + " failed: " + std::strerror(errno),
                           -1);
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_unique<TcpTransport>(fd);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw SessionError("socket() failed", -1);
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = make_addr(host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        const std::string err = std::strerror(errno);
        ::close(fd_);
        fd_ = -1;
        throw SessionError("bind " + host + ":" + std::to_string(port) + " failed: " + err, -1);
    }
    if (::listen(fd_, 8) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw SessionError("listen failed", -1);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept() {
    for (;;) {
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            throw SessionError("accept failed", -1);
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return std::make_unique<TcpTransport>(fd);
    }
}

} // namespace salt
