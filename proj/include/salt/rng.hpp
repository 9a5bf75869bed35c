// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace salt {

/// Named, seeded pseudo-random stream. The sequence of draws depends only
/// on (root seed, chain of fork names), never on what sibling streams did,
/// so independent workers can fork their own streams in any order.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::string_view name = "root");

    /// Derive a child stream. Same parent + same name always yields the
    /// same child sequence.
    RngStream fork(std::string_view name) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    double uniform_range(double lo, double hi);

    /// Standard normal draw.
    double normal();

    std::uint64_t stream_seed() const { return stream_seed_; }

private:
    struct Derived {};
    RngStream(std::uint64_t derived_seed, Derived);

    std::uint64_t stream_seed_ = 0;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// FNV-1a over arbitrary bytes; also the ParamDigest primitive.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

} // namespace salt
