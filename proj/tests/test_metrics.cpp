// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "salt/channel.hpp"
#include "salt/metrics.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::random_tensor;

TEST_SUITE("metrics") {

TEST_CASE("per-batch communication latency matches hand arithmetic exactly") {
    LatencyModel m;
    m.feature_size_bits = feature_bits({16, 4, 4}); // 256 elements * 32 bits
    CHECK(m.feature_size_bits == 8192.0);
    m.batch_size = 128;
    m.samples = 1000;
    m.epochs = 1;
    m.bandwidth_bits_per_s = 8e7;
    CHECK(comm_latency_per_batch(m) == 2.0 * 8192.0 * 128.0 / 8e7);
    CHECK(comm_latency_per_batch(m) == 0.0262144);

    // doubling the bandwidth halves the latency exactly
    LatencyModel fast = m;
    fast.bandwidth_bits_per_s = 2.0 * m.bandwidth_bits_per_s;
    CHECK(comm_latency_per_batch(fast) == comm_latency_per_batch(m) / 2.0);
}

TEST_CASE("unit case: V_z = theta/2 at batch 1 gives exactly one second") {
    LatencyModel m;
    m.bandwidth_bits_per_s = 8e7;
    m.feature_size_bits = 4e7;
    m.batch_size = 1;
    m.samples = 1;
    m.epochs = 1;
    CHECK(comm_latency_per_batch(m) == 1.0);
    CHECK(total_comm_latency(m) == 1.0);
}

TEST_CASE("total latency applies the batch-count ceiling") {
    LatencyModel m;
    m.feature_size_bits = 8192.0;
    m.batch_size = 128;
    m.samples = 1000;
    m.epochs = 10;
    m.bandwidth_bits_per_s = 8e7;
    CHECK(total_comm_latency(m) == 10.0 * 8.0 * comm_latency_per_batch(m)); // ceil(1000/128) = 8

    m.samples = 1024; // divisible
    CHECK(total_comm_latency(m) == 10.0 * 8.0 * comm_latency_per_batch(m));
}

TEST_CASE("latency model rejects degenerate fields") {
    LatencyModel m;
    CHECK_THROWS_AS(comm_latency_per_batch(m), ConfigError);
    m.feature_size_bits = 1.0;
    m.batch_size = 1;
    m.samples = 1;
    m.epochs = 0;
    CHECK_THROWS_AS(total_comm_latency(m), ConfigError);
}

TEST_CASE("ssim of an image with itself is exactly one") {
    RngStream rng(3, "img");
    auto x = random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
    CHECK(ssim(x, x) == 1.0);
}

TEST_CASE("ssim of constant images matches the closed form") {
    auto zero = Tensor<double>({16, 16});
    auto one = Tensor<double>::full({16, 16}, 1.0);
    const double c1 = 1e-4;
    CHECK(ssim(zero, one) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-12));
}

TEST_CASE("ssim is symmetric to within f64 rounding") {
    RngStream rng(5, "img");
    auto x = random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
    auto y = random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
}

TEST_CASE("growing noise strictly decreases mean ssim") {
    RngStream rng(7, "img");
    auto base = random_tensor<double>({16, 16}, rng, 0.0, 1.0);
    RngStream noise(8, "noise");
    const double sigmas[] = {0.0, 0.25, 0.5, 1.0};
    double prev = 2.0;
    for (double s : sigmas) {
        double acc = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            auto noisy = apply_channel(ChannelSpec::gaussian_noise(s), base, noise);
            acc += ssim(noisy, base);
        }
        acc /= 100.0;
        CHECK(acc < prev);
        prev = acc;
    }
}

TEST_CASE("ssim rejects shape mismatches") {
    Tensor<double> a({16, 16});
    Tensor<double> b({8, 8});
    CHECK_THROWS_AS(ssim(a, b), DimensionError);
}

} // TEST_SUITE
