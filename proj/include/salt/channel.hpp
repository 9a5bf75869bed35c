// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "salt/graph.hpp"
#include "salt/rng.hpp"
#include "salt/tensor.hpp"

namespace salt {

/// Declarative description of the degradation operator applied to features
/// (client->server) or gradients (server->client): identity, elementwise
/// Bernoulli packet loss with zero-filling, additive zero-mean Gaussian
/// noise, or an ordered composition.
struct ChannelSpec {
    enum class Kind { identity, packet_loss, gaussian_noise, compose };

    Kind kind = Kind::identity;
    double p = 0.0;
    double sigma = 0.0;
    std::vector<ChannelSpec> members;

    static ChannelSpec identity();
    static ChannelSpec packet_loss(double p);
    static ChannelSpec gaussian_noise(double sigma);
    static ChannelSpec compose(std::vector<ChannelSpec> members);

    bool is_identity() const;

    nlohmann::json to_json() const;
    static ChannelSpec from_json(const nlohmann::json& j);
};

/// Separate streams for mask and noise draws so that all randomness hangs
/// off the harness' named forks. Both pointers may alias one stream.
struct ChannelRng {
    RngStream* mask = nullptr;
    RngStream* noise = nullptr;
};

/// i.i.d. Bernoulli(1-p) entries in {0,1}.
template <typename T>
Tensor<T> sample_mask(double p, const Shape& shape, RngStream& rng);

template <typename T>
Tensor<T> sample_noise(double sigma, const Shape& shape, RngStream& rng);

/// Realize the channel on a plain tensor. Identity (and sigma == 0 noise)
/// is bit-exact and consumes no draws; packet loss always draws one mask.
template <typename T>
Tensor<T> apply_channel(const ChannelSpec& spec, const Tensor<T>& t, ChannelRng rng);

template <typename T>
Tensor<T> apply_channel(const ChannelSpec& spec, const Tensor<T>& t, RngStream& rng);

/// Same forward semantics, recorded on the graph: the mask backward scales
/// the gradient elementwise by the sampled mask; noise backward is the
/// identity. Bitwise-identical forward values to apply_channel for the
/// same stream state.
template <typename T>
typename Graph<T>::Var apply_channel_differentiable(const ChannelSpec& spec, Graph<T>& g,
                                                    typename Graph<T>::Var t, ChannelRng rng);

template <typename T>
typename Graph<T>::Var apply_channel_differentiable(const ChannelSpec& spec, Graph<T>& g,
                                                    typename Graph<T>::Var t, RngStream& rng);

} // namespace salt
