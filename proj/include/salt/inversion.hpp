// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "salt/dataset.hpp"
#include "salt/metrics.hpp"
#include "salt/split.hpp"

namespace salt {

/// Inversion attacker setup: a decoder trained to reconstruct inputs from
/// clean intermediate features (never the adapter's output), evaluated
/// against noise-perturbed features.
struct AttackConfig {
    std::uint32_t epochs = 12;
    double learning_rate = 1e-3;
    std::uint32_t batch_size = 32;
    std::vector<double> sigma_grid = {0.0, 0.25, 0.5, 1.0, 1.5};
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static AttackConfig from_json(const nlohmann::json& j);
};

/// conv3x3 -> ReLU -> nearest 2x upsample, repeated until the latent grid
/// reaches the image resolution, then a final conv3x3 to the image channels.
std::vector<LayerSpec> decoder_specs(const Shape& latent_shape, const Shape& image_shape);

Network<float> build_decoder(const Shape& latent_shape, const Shape& image_shape, std::uint64_t seed);

struct InverterStats {
    double initial_mse = 0.0;
    double final_mse = 0.0;
    std::uint32_t epochs = 0;
};

/// Train the decoder with MSE on (H(x), x) pairs from noise-free features.
/// The head must stay frozen; its digest is verified.
InverterStats train_inverter(const SplitModel<float>& model, Network<float>& decoder, const Dataset& surrogate,
                             const AttackConfig& cfg);

struct AttackPoint {
    double sigma = 0.0;
    double mean_ssim = 0.0;
    double mean_mse = 0.0;
};

/// For each sigma: reconstruct from gaussian-perturbed transmitted features
/// (H(x) without an adapter, z + S(z) with one), score SSIM against the
/// originals, average over the set.
std::vector<AttackPoint> evaluate_attack(const Network<float>& decoder, const SplitModel<float>& model,
                                         const Adapter<float>* adapter, const Dataset& test,
                                         std::span<const double> sigma_grid, const RngStream& rng,
                                         std::uint32_t batch_size = 32);

} // namespace salt
