// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "salt/channel.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::random_tensor;

TEST_SUITE("rng") {

TEST_CASE("same seed and name reproduce the draw sequence") {
    RngStream a(123, "alpha");
    RngStream b(123, "alpha");
    for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("stream name separates sequences") {
    RngStream a(123, "alpha");
    RngStream b(123, "beta");
    bool any_diff = false;
    for (int i = 0; i < 16; ++i) any_diff |= (a.next_u64() != b.next_u64());
    CHECK(any_diff);
}

TEST_CASE("forks are order-insensitive across streams") {
    RngStream root(9, "root");
    auto a1 = root.fork("a");
    auto b1 = root.fork("b");
    auto b2 = root.fork("b");
    auto a2 = root.fork("a");
    // draw from b first on one side, a first on the other
    std::vector<std::uint64_t> b_first = {b1.next_u64(), b1.next_u64()};
    std::vector<std::uint64_t> a_first = {a2.next_u64(), a2.next_u64()};
    CHECK(a1.next_u64() == a_first[0]);
    CHECK(a1.next_u64() == a_first[1]);
    CHECK(b2.next_u64() == b_first[0]);
    CHECK(b2.next_u64() == b_first[1]);
}

} // TEST_SUITE

TEST_SUITE("channel") {

TEST_CASE("channel spec validation") {
    CHECK_THROWS_AS(ChannelSpec::packet_loss(-0.1), ConfigError);
    CHECK_THROWS_AS(ChannelSpec::packet_loss(1.5), ConfigError);
    CHECK_THROWS_AS(ChannelSpec::gaussian_noise(-1.0), ConfigError);
    CHECK_THROWS_AS(ChannelSpec::compose({}), ConfigError);
}

TEST_CASE("channel spec json roundtrip") {
    auto spec = ChannelSpec::compose({ChannelSpec::packet_loss(0.25), ChannelSpec::gaussian_noise(0.5)});
    auto back = ChannelSpec::from_json(spec.to_json());
    REQUIRE(back.kind == ChannelSpec::Kind::compose);
    REQUIRE(back.members.size() == 2);
    CHECK(back.members[0].p == 0.25);
    CHECK(back.members[1].sigma == 0.5);
    CHECK_THROWS_AS(ChannelSpec::from_json(nlohmann::json{{"kind", "burst"}}), ConfigError);
}

TEST_CASE("identity channel is bit-exact for both dtypes") {
    RngStream rngf(1, "idf");
    auto tf = random_tensor<float>({3, 7}, rngf);
    RngStream r1(2, "chan");
    CHECK(apply_channel(ChannelSpec::identity(), tf, r1).bit_equal(tf));

    auto td = random_tensor<double>({3, 7}, rngf);
    CHECK(apply_channel(ChannelSpec::identity(), td, r1).bit_equal(td));
}

TEST_CASE("packet loss edge rates") {
    RngStream rng(4, "x");
    auto t = random_tensor<float>({2, 3, 4, 4}, rng);
    RngStream c0(5, "chan0");
    CHECK(apply_channel(ChannelSpec::packet_loss(0.0), t, c0).bit_equal(t));
    RngStream c1(5, "chan1");
    auto dropped = apply_channel(ChannelSpec::packet_loss(1.0), t, c1);
    for (std::size_t i = 0; i < dropped.numel(); ++i) CHECK(dropped[i] == 0.0f);
}

TEST_CASE("packet loss drop fraction matches the binomial bound") {
    const std::size_t n = 1'000'000;
    RngStream rng(2024, "mask-stat");
    auto mask = sample_mask<float>(0.25, {n}, rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < n; ++i) zeros += (mask[i] == 0.0f);
    const double frac = static_cast<double>(zeros) / static_cast<double>(n);
    CHECK(std::fabs(frac - 0.25) < 0.0013); // 3 sigma of Binomial(1e6, 0.25)
}

TEST_CASE("mask sampling is deterministic for a fixed stream state") {
    RngStream a(7, "m");
    RngStream b(7, "m");
    auto ma = sample_mask<float>(0.5, {1000}, a);
    auto mb = sample_mask<float>(0.5, {1000}, b);
    CHECK(ma.bit_equal(mb));

    RngStream z(7, "m0");
    auto ones = sample_mask<float>(0.0, {100}, z);
    for (std::size_t i = 0; i < 100; ++i) CHECK(ones[i] == 1.0f);
}

TEST_CASE("mask chi-square goodness of fit at p=0.5") {
    const std::size_t n = 100'000;
    RngStream rng(31337, "chi");
    auto mask = sample_mask<float>(0.5, {n}, rng);
    double zeros = 0;
    for (std::size_t i = 0; i < n; ++i) zeros += (mask[i] == 0.0f);
    const double ones = static_cast<double>(n) - zeros;
    const double expect = n / 2.0;
    const double chi2 = (zeros - expect) * (zeros - expect) / expect + (ones - expect) * (ones - expect) / expect;
    CHECK(chi2 < 10.828); // df=1 critical value at significance 0.001
}

TEST_CASE("gaussian noise statistics and sigma=0 identity") {
    RngStream rng(11, "x");
    auto t = random_tensor<float>({100, 1000}, rng);
    RngStream c(12, "chan");
    CHECK(apply_channel(ChannelSpec::gaussian_noise(0.0), t, c).bit_equal(t));

    const double sigma = 0.5;
    auto noisy = apply_channel(ChannelSpec::gaussian_noise(sigma), t, c);
    const std::size_t n = t.numel();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += noisy[i] - t[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (noisy[i] - t[i]) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    CHECK(std::fabs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(sd - sigma) < 3.0 * sigma / std::sqrt(2.0 * static_cast<double>(n)));
}

TEST_CASE("plain and differentiable application agree bitwise") {
    RngStream rng(13, "x");
    auto t = random_tensor<float>({4, 8, 4, 4}, rng);
    auto spec = ChannelSpec::compose({ChannelSpec::packet_loss(0.3), ChannelSpec::gaussian_noise(0.25)});

    RngStream c1(14, "chan");
    auto plain = apply_channel(spec, t, c1);

    RngStream c2(14, "chan");
    Graph<float> g;
    auto out = apply_channel_differentiable(spec, g, g.input(t), c2);
    CHECK(g.value(out).bit_equal(plain));
}

TEST_CASE("packet loss commutes with scalar scaling under a pinned mask") {
    RngStream rng(15, "x");
    auto t = random_tensor<double>({512}, rng);
    Tensor<double> scaled(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) scaled[i] = 3.0 * t[i];

    auto spec = ChannelSpec::packet_loss(0.4);
    RngStream c1(16, "chan");
    auto a = apply_channel(spec, scaled, c1);
    RngStream c2(16, "chan");
    auto b = apply_channel(spec, t, c2);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(a[i] == 3.0 * b[i]);
}

TEST_CASE("mask backward multiplies by the sampled mask") {
    RngStream rng(17, "x");
    auto t = random_tensor<float>({6, 6}, rng);

    RngStream cs(18, "chan");
    RngStream cs2(18, "chan");
    auto mask = sample_mask<float>(0.5, t.shape(), cs2);

    Graph<float> g;
    auto z = g.input(t);
    auto out = apply_channel_differentiable(ChannelSpec::packet_loss(0.5), g, z, cs);
    g.backward(g.sum(out));
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(g.grad(z)[i] == mask[i]);
}

TEST_CASE("noise backward is the identity for any sigma") {
    RngStream rng(19, "x");
    auto t = random_tensor<float>({5, 5}, rng);
    RngStream cs(20, "chan");
    Graph<float> g;
    auto z = g.input(t);
    auto out = apply_channel_differentiable(ChannelSpec::gaussian_noise(1.5), g, z, cs);
    g.backward(g.sum(out));
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(g.grad(z)[i] == 1.0f);
}

TEST_CASE("separate mask and noise streams compose deterministically") {
    RngStream mask_s(21, "mask");
    RngStream noise_s(21, "noise");
    RngStream mask_s2(21, "mask");
    RngStream noise_s2(21, "noise");
    RngStream rng(22, "x");
    auto t = random_tensor<float>({64}, rng);
    auto spec = ChannelSpec::compose({ChannelSpec::packet_loss(0.2), ChannelSpec::gaussian_noise(0.3)});
    auto a = apply_channel(spec, t, ChannelRng{&mask_s, &noise_s});
    auto b = apply_channel(spec, t, ChannelRng{&mask_s2, &noise_s2});
    CHECK(a.bit_equal(b));
}

} // TEST_SUITE
