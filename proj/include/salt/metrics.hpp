// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "salt/tensor.hpp"

namespace salt {

/// Closed-form communication latency accounting. Feature payload bits
/// count dtype bits times element count; frame headers are excluded.
struct LatencyModel {
    double bandwidth_bits_per_s = 80e6; // theta
    double feature_size_bits = 0.0;     // V_z
    std::uint64_t batch_size = 0;       // B
    std::uint64_t samples = 0;          // N
    std::uint64_t epochs = 0;           // E

    void validate() const;
};

/// Bits of one latent feature at the given dtype width.
double feature_bits(const Shape& latent_shape, std::size_t dtype_bits = 32);

/// 2 * V_z * B / theta; features travel on both the forward and backward pass.
double comm_latency_per_batch(const LatencyModel& m);

/// E * ceil(N/B) * per-batch latency.
double total_comm_latency(const LatencyModel& m);

/// Uniform-window SSIM parameters; C1 = (0.01 L)^2, C2 = (0.03 L)^2.
struct SsimParams {
    double dynamic_range = 1.0; // L
    std::size_t window = 7;     // square side, odd, uniform weights

    double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

/// Mean SSIM over all valid window positions (stride 1, biased variances).
/// Multi-channel inputs average the per-channel value. Accepts [H,W],
/// [C,H,W] or [1,C,H,W] tensors of matching shape.
double ssim(const Tensor<float>& x, const Tensor<float>& y, const SsimParams& params = {});
double ssim(const Tensor<double>& x, const Tensor<double>& y, const SsimParams& params = {});

double mse(const Tensor<float>& x, const Tensor<float>& y);

} // namespace salt
