// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "salt/tensor.hpp"

namespace salt {

enum class MsgType : std::uint8_t {
    hello = 0x01,
    config_ack = 0x02,
    features = 0x03,
    gradients = 0x04,
    metrics = 0x05,
    epoch_end = 0x06,
    shutdown = 0x07,
};

struct Frame {
    MsgType type = MsgType::hello;
    std::vector<std::uint8_t> payload;
};

/// Frame layout: magic "SALT", u8 version=1, u8 msg_type, u32 payload
/// length (little-endian), payload bytes.
std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Incremental frame decoder; chunking of the byte stream is irrelevant.
/// Unknown message types and bad magic are rejected, never skipped.
class FrameParser {
public:
    void feed(const std::uint8_t* data, std::size_t len);
    void feed(std::span<const std::uint8_t> bytes) { feed(bytes.data(), bytes.size()); }

    /// Next complete frame, or nullopt if more bytes are needed.
    std::optional<Frame> next();

    bool mid_frame() const { return buf_.size() > pos_; }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// ---- TensorWire ----------------------------------------------------------
// u8 dtype (0x01=f32, 0x02=f64), u8 ndim >= 1, ndim x u32 dims
// (little-endian), then row-major values (little-endian).

using WireTensor = std::variant<Tensor<float>, Tensor<double>>;

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t);
std::vector<std::uint8_t> encode_tensor(const Tensor<double>& t);

/// Decode a tensor occupying a prefix of `bytes`; advances `consumed`.
WireTensor decode_tensor_prefix(std::span<const std::uint8_t> bytes, std::size_t& consumed);

/// Decode a tensor occupying the whole buffer; trailing bytes are an error.
WireTensor decode_tensor(std::span<const std::uint8_t> bytes);

/// Convenience: decode and require f32.
Tensor<float> decode_tensor_f32(std::span<const std::uint8_t> bytes);

// little-endian primitives shared by the payload codecs
void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32_le(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t off);
float get_f32_le(std::span<const std::uint8_t> bytes, std::size_t off);

} // namespace salt
