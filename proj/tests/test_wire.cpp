// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "salt/wire.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::random_tensor;

TEST_SUITE("wire") {

TEST_CASE("hand-encoded f32 tensor matches byte for byte") {
    Tensor<float> t({2}, {1.0f, 2.0f});
    const std::vector<std::uint8_t> expected = {0x01, 0x01, 0x02, 0x00, 0x00, 0x00,
                                                0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40};
    CHECK(encode_tensor(t) == expected);

    auto decoded = decode_tensor(expected);
    REQUIRE(std::holds_alternative<Tensor<float>>(decoded));
    const auto& back = std::get<Tensor<float>>(decoded);
    CHECK(back.shape() == Shape{2});
    CHECK(back[0] == 1.0f);
    CHECK(back[1] == 2.0f);
}

TEST_CASE("rank-0 tensors cannot be encoded") {
    Tensor<float> scalar(Shape{}, {3.0f});
    CHECK_THROWS_AS(encode_tensor(scalar), ContractError);
}

TEST_CASE("codec roundtrip is bit-exact over random tensors") {
    RngStream rng(404, "roundtrip");
    for (int i = 0; i < 1000; ++i) {
        Shape shape;
        const int rank = 1 + static_cast<int>(rng.next_u64() % 4);
        for (int d = 0; d < rank; ++d) shape.push_back(1 + rng.next_u64() % 5);
        if (rng.next_u64() % 2 == 0) {
            auto t = random_tensor<float>(shape, rng, -100.0, 100.0);
            auto back = decode_tensor(encode_tensor(t));
            REQUIRE(std::holds_alternative<Tensor<float>>(back));
            CHECK(std::get<Tensor<float>>(back).bit_equal(t));
        } else {
            auto t = random_tensor<double>(shape, rng, -100.0, 100.0);
            auto back = decode_tensor(encode_tensor(t));
            REQUIRE(std::holds_alternative<Tensor<double>>(back));
            CHECK(std::get<Tensor<double>>(back).bit_equal(t));
        }
    }
}

TEST_CASE("truncated tensor buffers fail without partial output") {
    RngStream rng(7, "trunc");
    auto bytes = encode_tensor(random_tensor<float>({3, 4}, rng));
    for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t(1)}) {
        auto shorted = bytes;
        shorted.resize(cut);
        CHECK_THROWS_AS(decode_tensor(shorted), FramingError);
    }
}

TEST_CASE("unknown dtype byte is a protocol error") {
    RngStream rng(8, "dtype");
    auto bytes = encode_tensor(random_tensor<float>({2, 2}, rng));
    bytes[0] = 0x03;
    CHECK_THROWS_AS(decode_tensor(bytes), ProtocolError);
}

TEST_CASE("trailing bytes after a tensor are rejected") {
    Tensor<float> t({1}, {5.0f});
    auto bytes = encode_tensor(t);
    bytes.push_back(0x00);
    CHECK_THROWS_AS(decode_tensor(bytes), FramingError);
}

TEST_CASE("frame stream parses identically under any read chunking") {
    RngStream rng(2025, "chunks");
    std::vector<Frame> frames;
    std::vector<std::uint8_t> stream;
    for (int i = 0; i < 24; ++i) {
        Frame f;
        f.type = static_cast<MsgType>(1 + rng.next_u64() % 7);
        const std::size_t len = rng.next_u64() % 64;
        f.payload.resize(len);
        for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng.next_u64());
        auto bytes = encode_frame(f);
        stream.insert(stream.end(), bytes.begin(), bytes.end());
        frames.push_back(std::move(f));
    }

    for (int trial = 0; trial < 20; ++trial) {
        FrameParser parser;
        std::vector<Frame> parsed;
        std::size_t pos = 0;
        while (pos < stream.size()) {
            const std::size_t chunk = std::min<std::size_t>(1 + rng.next_u64() % 17, stream.size() - pos);
            parser.feed(stream.data() + pos, chunk);
            pos += chunk;
            while (auto f = parser.next()) parsed.push_back(std::move(*f));
        }
        REQUIRE(parsed.size() == frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            CHECK(parsed[i].type == frames[i].type);
            CHECK(parsed[i].payload == frames[i].payload);
        }
        CHECK_FALSE(parser.mid_frame());
    }
}

TEST_CASE("unknown message types and bad magic are rejected, never skipped") {
    Frame ok{MsgType::epoch_end, {}};
    auto bytes = encode_frame(ok);
    bytes[5] = 0x4F; // type byte
    FrameParser parser;
    parser.feed(bytes.data(), bytes.size());
    CHECK_THROWS_AS(parser.next(), ProtocolError);

    auto bad_magic = encode_frame(ok);
    bad_magic[0] = 'X';
    FrameParser parser2;
    parser2.feed(bad_magic.data(), bad_magic.size());
    CHECK_THROWS_AS(parser2.next(), FramingError);
}

} // TEST_SUITE
