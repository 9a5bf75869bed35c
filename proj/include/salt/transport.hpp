// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "salt/wire.hpp"

namespace salt {

/// Reliable ordered byte stream with frame helpers layered on top. The
/// stream itself is lossless; channel degradation is always simulated.
class Transport {
public:
    virtual ~Transport() = default;

    virtual void send_bytes(const std::uint8_t* data, std::size_t len) = 0;
    /// Blocking read of up to cap bytes; returns 0 on end of stream.
    virtual std::size_t recv_bytes(std::uint8_t* buf, std::size_t cap) = 0;
    virtual void close() = 0;

    void send_frame(const Frame& frame);
    /// Next frame; nullopt on a clean end of stream at a frame boundary.
    std::optional<Frame> recv_frame();

private:
    FrameParser parser_;
};

/// In-process transport: two endpoints wired back to back through byte
/// queues, with the exact semantics of the socket transport.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback();

/// Client-side TCP connection.
std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port);

class TcpListener {
public:
    /// Binds and listens; port 0 picks an ephemeral port.
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    std::unique_ptr<Transport> accept();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

} // namespace salt
