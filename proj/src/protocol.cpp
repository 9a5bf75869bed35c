// SPDX-License-Identifier: Apache-2.0
#include "salt/protocol.hpp"

#include <json.hpp>

#include "salt/errors.hpp"

namespace salt {

// ---- handshake payloads ------------------------------------------------

std::vector<std::uint8_t> SessionConfig::encode() const {
    nlohmann::json j;
    j["latent"] = latent_shape;
    j["batch"] = batch_size;
    j["classes"] = num_classes;
    j["channel"] = forward_channel.to_json();
    j["seed"] = seed;
    const std::string s = j.dump();
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

SessionConfig SessionConfig::decode(std::span<const std::uint8_t> payload) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(payload.begin(), payload.end());
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed HELLO payload: ") + e.what());
    }
    try {
        SessionConfig cfg;
        cfg.latent_shape = j.at("latent").get<Shape>();
        cfg.batch_size = j.at("batch").get<std::uint32_t>();
        cfg.num_classes = j.at("classes").get<std::uint32_t>();
        cfg.forward_channel = ChannelSpec::from_json(j.at("channel"));
        cfg.seed = j.at("seed").get<std::uint64_t>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("incomplete HELLO payload: ") + e.what());
    }
}

namespace {

std::vector<std::uint8_t> encode_ack(bool ok, const std::string& error) {
    nlohmann::json j;
    j["ok"] = ok;
    if (!ok) j["error"] = error;
    const std::string s = j.dump();
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

} // namespace

// ---- batch payloads --------------------------------------------------------

std::vector<std::uint8_t> encode_features_payload(const Tensor<float>& z_prime,
                                                  std::span<const std::uint32_t> labels) {
    std::vector<std::uint8_t> out = encode_tensor(z_prime);
    put_u32_le(out, static_cast<std::uint32_t>(labels.size()));
    for (std::uint32_t y : labels) put_u32_le(out, y);
    return out;
}

std::pair<Tensor<float>, std::vector<std::uint32_t>> decode_features_payload(
    std::span<const std::uint8_t> payload) {
    std::size_t consumed = 0;
    WireTensor wt = decode_tensor_prefix(payload, consumed);
    if (!std::holds_alternative<Tensor<float>>(wt)) throw ProtocolError("FEATURES tensor must be f32");
    Tensor<float> z = std::get<Tensor<float>>(std::move(wt));
    const std::uint32_t count = get_u32_le(payload, consumed);
    consumed += 4;
    if (payload.size() - consumed != 4u * count) throw FramingError("FEATURES label block truncated");
    std::vector<std::uint32_t> labels(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        labels[i] = get_u32_le(payload, consumed);
        consumed += 4;
    }
    return {std::move(z), std::move(labels)};
}

std::vector<std::uint8_t> encode_metrics_payload(float mean_loss, std::uint32_t correct, std::uint32_t total) {
    std::vector<std::uint8_t> out;
    put_f32_le(out, mean_loss);
    put_u32_le(out, correct);
    put_u32_le(out, total);
    return out;
}

void decode_metrics_payload(std::span<const std::uint8_t> payload, BatchReply& reply) {
    if (payload.size() != 12) throw FramingError("METRICS payload must be 12 bytes");
    reply.mean_loss = get_f32_le(payload, 0);
    reply.correct = get_u32_le(payload, 4);
    reply.total = get_u32_le(payload, 8);
}

// ---- server computation -----------------------------------------------------

std::uint32_t count_correct(const Tensor<float>& logits, std::span<const std::uint32_t> labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::uint32_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.data() + i * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j; // ties keep the lowest index
        }
        if (best == labels[i]) ++correct;
    }
    return correct;
}

BatchReply tail_exchange(const SplitModel<float>& model, const ChannelSpec& channel, ChannelRng rng,
                         const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) {
    if (z_prime.rank() != model.latent_shape.size() + 1) {
        throw ProtocolError("features must be a batch of " + shape_str(model.latent_shape));
    }
    for (std::size_t i = 0; i < model.latent_shape.size(); ++i) {
        if (z_prime.dim(i + 1) != model.latent_shape[i]) {
            throw ProtocolError("feature shape " + shape_str(z_prime.shape()) +
                                " disagrees with latent shape " + shape_str(model.latent_shape));
        }
    }
    if (labels.size() != z_prime.dim(0)) {
        throw ProtocolError("label count " + std::to_string(labels.size()) + " vs feature batch " +
                            std::to_string(z_prime.dim(0)));
    }

    Graph<float> g;
    auto zin = g.input(z_prime);
    auto ztilde = apply_channel_differentiable(channel, g, zin, rng);
    auto logits = model.forward_tail(g, ztilde);
    auto loss = g.softmax_cross_entropy(logits, labels);
    g.backward(loss);

    BatchReply reply;
    reply.delta = g.grad(ztilde); // dL w.r.t. the received (post-channel) features
    reply.mean_loss = g.value(loss)[0];
    reply.correct = count_correct(g.value(logits), labels);
    reply.total = static_cast<std::uint32_t>(labels.size());
    return reply;
}

// ---- local endpoint -----------------------------------------------------------

LocalEndpoint::LocalEndpoint(const SplitModel<float>& model, const ChannelSpec& forward_channel,
                             std::uint64_t seed)
    : model_(&model),
      channel_(forward_channel),
      mask_stream_(RngStream(seed).fork("mask")),
      noise_stream_(RngStream(seed).fork("noise")) {}

BatchReply LocalEndpoint::exchange(const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) {
    return tail_exchange(*model_, channel_, ChannelRng{&mask_stream_, &noise_stream_}, z_prime, labels);
}

// ---- networked client ----------------------------------------------------------

ClientSession::ClientSession(Transport& transport, SessionConfig config)
    : transport_(&transport), config_(std::move(config)) {
    transport_->send_frame(Frame{MsgType::hello, config_.encode()});
    auto ack = transport_->recv_frame();
    if (!ack) throw SessionError("connection closed during handshake", -1);
    if (ack->type != MsgType::config_ack) throw ProtocolError("expected CONFIG_ACK");
    const auto j = nlohmann::json::parse(ack->payload.begin(), ack->payload.end());
    if (!j.at("ok").get<bool>()) {
        throw ProtocolError("server rejected session config: " + j.value("error", std::string("unknown")));
    }
    open_ = true;
}

BatchReply ClientSession::exchange(const Tensor<float>& z_prime, std::span<const std::uint32_t> labels) {
    if (!open_) throw ContractError("exchange on a closed session");
    if (z_prime.dim(0) > config_.batch_size) {
        throw ProtocolError("batch larger than the handshake batch size");
    }
    transport_->send_frame(Frame{MsgType::features, encode_features_payload(z_prime, labels)});

    auto grad_frame = transport_->recv_frame();
    if (!grad_frame) throw SessionError("transport closed mid-epoch", batch_index_);
    if (grad_frame->type != MsgType::gradients) throw ProtocolError("expected GRADIENTS");
    BatchReply reply;
    reply.delta = decode_tensor_f32(grad_frame->payload);
    if (!reply.delta.same_shape(z_prime)) {
        throw ProtocolError("gradient shape " + shape_str(reply.delta.shape()) +
                            " does not match sent features " + shape_str(z_prime.shape()));
    }

    auto metrics_frame = transport_->recv_frame();
    if (!metrics_frame) throw SessionError("transport closed mid-epoch", batch_index_);
    if (metrics_frame->type != MsgType::metrics) throw ProtocolError("expected METRICS");
    decode_metrics_payload(metrics_frame->payload, reply);
    ++batch_index_;
    return reply;
}

void ClientSession::epoch_end() {
    if (open_) transport_->send_frame(Frame{MsgType::epoch_end, {}});
}

void ClientSession::shutdown() {
    if (open_) {
        transport_->send_frame(Frame{MsgType::shutdown, {}});
        open_ = false;
    }
}

// ---- server session --------------------------------------------------------------

ServeStats serve_session(Transport& transport, const SplitModel<float>& model) {
    auto hello = transport.recv_frame();
    if (!hello) throw SessionError("connection closed before HELLO", -1);
    if (hello->type != MsgType::hello) throw ProtocolError("expected HELLO");
    SessionConfig cfg = SessionConfig::decode(hello->payload);

    std::string reject;
    if (cfg.latent_shape != model.latent_shape) {
        reject = "latent shape " + shape_str(cfg.latent_shape) + " does not match model latent " +
                 shape_str(model.latent_shape);
    } else if (cfg.num_classes != model.num_classes) {
        reject = "class count mismatch";
    } else if (cfg.batch_size < 1) {
        reject = "batch size must be >= 1";
    }
    if (!reject.empty()) {
        transport.send_frame(Frame{MsgType::config_ack, encode_ack(false, reject)});
        throw ProtocolError("rejected session: " + reject);
    }
    transport.send_frame(Frame{MsgType::config_ack, encode_ack(true, {})});

    const std::uint64_t tail_before = model.tail_digest();
    RngStream mask_stream = RngStream(cfg.seed).fork("mask");
    RngStream noise_stream = RngStream(cfg.seed).fork("noise");

    ServeStats stats;
    for (;;) {
        auto frame = transport.recv_frame();
        if (!frame) throw SessionError("transport closed without SHUTDOWN", static_cast<long>(stats.batches));
        switch (frame->type) {
            case MsgType::features: {
                auto [z, labels] = decode_features_payload(frame->payload);
                if (z.dim(0) > cfg.batch_size) throw ProtocolError("batch larger than handshake batch size");
                BatchReply reply = tail_exchange(model, cfg.forward_channel,
                                                 ChannelRng{&mask_stream, &noise_stream}, z, labels);
                transport.send_frame(Frame{MsgType::gradients, encode_tensor(reply.delta)});
                transport.send_frame(
                    Frame{MsgType::metrics, encode_metrics_payload(reply.mean_loss, reply.correct, reply.total)});
                ++stats.batches;
                break;
            }
            case MsgType::epoch_end:
                ++stats.epochs;
                break;
            case MsgType::shutdown:
                if (model.tail_digest() != tail_before) {
                    throw ClosedModelError("tail parameters changed while serving");
                }
                return stats;
            default:
                throw ProtocolError("unexpected message type in session");
        }
    }
}

} // namespace salt
