// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "salt/channel.hpp"
#include "salt/split.hpp"
#include "salt/transport.hpp"

namespace salt {

/// Session parameters agreed during the HELLO / CONFIG_ACK handshake.
/// The seed travels with the config so the server realizes the same
/// channel draws as an in-process run.
struct SessionConfig {
    Shape latent_shape;
    std::uint32_t batch_size = 0;
    std::uint32_t num_classes = 0;
    ChannelSpec forward_channel;
    std::uint64_t seed = 0;

    std::vector<std::uint8_t> encode() const;
    static SessionConfig decode(std::span<const std::uint8_t> payload);
};

/// Server's answer to one FEATURES frame.
struct BatchReply {
    Tensor<float> delta; // dL/dZ' as received (post-channel) at the server
    float mean_loss = 0.0f;
    std::uint32_t correct = 0;
    std::uint32_t total = 0;
};

/// The client's view of the far side of the split: give it the adapted
/// features and labels for one batch, get the feature gradient and metrics
/// back. Implemented by the in-process tail and by the networked session
/// with identical numerics.
class FeatureEndpoint {
public:
    virtual ~FeatureEndpoint() = default;
    virtual BatchReply exchange(const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) = 0;
    virtual void epoch_end() {}
};

/// In-process server half: channel application at entry, frozen tail,
/// cross-entropy, gradient w.r.t. the post-channel features.
class LocalEndpoint final : public FeatureEndpoint {
public:
    LocalEndpoint(const SplitModel<float>& model, const ChannelSpec& forward_channel, std::uint64_t seed);

    BatchReply exchange(const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) override;

private:
    const SplitModel<float>* model_;
    ChannelSpec channel_;
    RngStream mask_stream_;
    RngStream noise_stream_;
};

/// Networked client session. The constructor runs the handshake and throws
/// ProtocolError if the server rejects the config.
class ClientSession final : public FeatureEndpoint {
public:
    ClientSession(Transport& transport, SessionConfig config);

    BatchReply exchange(const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) override;
    void epoch_end() override;
    void shutdown();

private:
    Transport* transport_;
    SessionConfig config_;
    long batch_index_ = 0;
    bool open_ = false;
};

struct ServeStats {
    std::uint64_t batches = 0;
    std::uint64_t epochs = 0;
};

/// Serve one session on an established transport: handshake, then answer
/// FEATURES frames in strict lockstep until SHUTDOWN. Verifies the tail
/// stayed bit-identical and throws ClosedModelError otherwise.
ServeStats serve_session(Transport& transport, const SplitModel<float>& model);

/// Payload helpers (shared by the sessions and their tests).
std::vector<std::uint8_t> encode_features_payload(const Tensor<float>& z_prime,
                                                  std::span<const std::uint32_t> labels);
std::pair<Tensor<float>, std::vector<std::uint32_t>> decode_features_payload(
    std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> encode_metrics_payload(float mean_loss, std::uint32_t correct, std::uint32_t total);
void decode_metrics_payload(std::span<const std::uint8_t> payload, BatchReply& reply);

/// Core server-side computation for one batch, shared by the local and
/// networked paths so both produce bit-identical replies.
BatchReply tail_exchange(const SplitModel<float>& model, const ChannelSpec& channel, ChannelRng rng,
                         const Tensor<float>& z_prime, std::span<const std::uint32_t> labels);

/// Number of argmax-correct predictions, ties toward the lowest class index.
std::uint32_t count_correct(const Tensor<float>& logits, std::span<const std::uint32_t> labels);

} // namespace salt
