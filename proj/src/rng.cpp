// SPDX-License-Identifier: Apache-2.0
#include "salt/rng.hpp"

namespace salt {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
    std::uint64_t h = fnv1a64(&parent, sizeof(parent));
    h = fnv1a64(name.data(), name.size(), h);
    // splitmix64 finalizer to spread low-entropy seeds
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

} // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view name)
    : RngStream(derive_seed(seed, name), Derived{}) {}

RngStream::RngStream(std::uint64_t derived_seed, Derived)
    : stream_seed_(derived_seed), engine_(derived_seed) {}

RngStream RngStream::fork(std::string_view name) const {
    return RngStream(derive_seed(stream_seed_, name), Derived{});
}

std::uint64_t RngStream::next_u64() {
    return engine_();
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_range(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    return normal_(engine_);
}

} // namespace salt
