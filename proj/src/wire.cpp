// SPDX-License-Identifier: Apache-2.0
#include "salt/wire.hpp"

#include <cstring>

#include "salt/errors.hpp"

namespace salt {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'A', 'L', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderLen = 4 + 1 + 1 + 4;
constexpr std::uint32_t kMaxPayload = 1u << 30;

bool known_type(std::uint8_t t) {
    return t >= static_cast<std::uint8_t>(MsgType::hello) && t <= static_cast<std::uint8_t>(MsgType::shutdown);
}

} // namespace

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32_le(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(out, bits);
}

std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t off) {
    if (off + 4 > bytes.size()) throw FramingError("buffer too short for u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
}

float get_f32_le(std::span<const std::uint8_t> bytes, std::size_t off) {
    const std::uint32_t bits = get_u32_le(bytes, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// ---- frames ------------------------------------------------------------

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    if (frame.payload.size() > kMaxPayload) throw ProtocolError("frame payload too large");
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderLen + frame.payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_u32_le(out, static_cast<std::uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

void FrameParser::feed(const std::uint8_t* data, std::size_t len) {
    buf_.insert(buf_.end(), data, data + len);
}

std::optional<Frame> FrameParser::next() {
    if (buf_.size() - pos_ < kHeaderLen) return std::nullopt;
    const std::uint8_t* p = buf_.data() + pos_;
    if (std::memcmp(p, kMagic, 4) != 0) throw FramingError("bad frame magic");
    if (p[4] != kVersion) throw FramingError("unsupported frame version " + std::to_string(p[4]));
    if (!known_type(p[5])) throw ProtocolError("unknown message type 0x" + std::to_string(p[5]));
    const std::uint32_t len = get_u32_le(std::span<const std::uint8_t>(buf_).subspan(pos_), 6);
    if (len > kMaxPayload) throw ProtocolError("frame payload too large");
    if (buf_.size() - pos_ < kHeaderLen + len) return std::nullopt;
    Frame f;
    f.type = static_cast<MsgType>(p[5]);
    f.payload.assign(p + kHeaderLen, p + kHeaderLen + len);
    pos_ += kHeaderLen + len;
    if (pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    } else if (pos_ > (1u << 20)) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<long>(pos_));
        pos_ = 0;
    }
    return f;
}

// ---- tensors ------------------------------------------------------------

namespace {

template <typename T>
std::vector<std::uint8_t> encode_tensor_impl(const Tensor<T>& t, std::uint8_t dtype) {
    if (t.rank() < 1) throw ContractError("tensor wire format requires ndim >= 1");
    if (t.rank() > 255) throw ContractError("tensor wire format supports at most 255 dims");
    std::vector<std::uint8_t> out;
    out.reserve(2 + 4 * t.rank() + sizeof(T) * t.numel());
    out.push_back(dtype);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (t.dim(i) >= (1ull << 32)) throw ContractError("tensor dim exceeds u32");
        put_u32_le(out, static_cast<std::uint32_t>(t.dim(i)));
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if constexpr (sizeof(T) == 4) {
            std::uint32_t bits;
            std::memcpy(&bits, &t[i], 4);
            put_u32_le(out, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &t[i], 8);
            put_u64_le(out, bits);
        }
    }
    return out;
}

template <typename T>
Tensor<T> decode_values(std::span<const std::uint8_t> bytes, std::size_t& off, Shape shape) {
    const std::size_t n = shape_numel(shape);
    if (bytes.size() - off < n * sizeof(T)) throw FramingError("tensor payload truncated");
    std::vector<T> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        if constexpr (sizeof(T) == 4) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[off + b]) << (8 * b);
            std::memcpy(&data[i], &bits, 4);
            off += 4;
        } else {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[off + b]) << (8 * b);
            std::memcpy(&data[i], &bits, 8);
            off += 8;
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

} // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
    return encode_tensor_impl(t, 0x01);
}

std::vector<std::uint8_t> encode_tensor(const Tensor<double>& t) {
    return encode_tensor_impl(t, 0x02);
}

WireTensor decode_tensor_prefix(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
    std::size_t off = consumed;
    if (bytes.size() - off < 2) throw FramingError("tensor header truncated");
    const std::uint8_t dtype = bytes[off];
    const std::uint8_t ndim = bytes[off + 1];
    off += 2;
    if (dtype != 0x01 && dtype != 0x02) {
        throw ProtocolError("unknown tensor dtype 0x" + std::to_string(dtype));
    }
    if (ndim == 0) throw ProtocolError("tensor wire format requires ndim >= 1");
    if (bytes.size() - off < 4u * ndim) throw FramingError("tensor dims truncated");
    Shape shape(ndim);
    for (std::uint8_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = get_u32_le(bytes, off);
        off += 4;
        if (d == 0) throw ProtocolError("tensor dims must be >= 1");
        shape[i] = d;
    }
    WireTensor out = (dtype == 0x01) ? WireTensor(decode_values<float>(bytes, off, std::move(shape)))
                                     : WireTensor(decode_values<double>(bytes, off, std::move(shape)));
    consumed = off;
    return out;
}

WireTensor decode_tensor(std::span<const std::uint8_t> bytes) {
    std::size_t consumed = 0;
    WireTensor t = decode_tensor_prefix(bytes, consumed);
    if (consumed != bytes.size()) throw FramingError("trailing bytes after tensor");
    return t;
}

Tensor<float> decode_tensor_f32(std::span<const std::uint8_t> bytes) {
    WireTensor t = decode_tensor(bytes);
    if (!std::holds_alternative<Tensor<float>>(t)) throw ProtocolError("expected an f32 tensor");
    return std::get<Tensor<float>>(std::move(t));
}

} // namespace salt
