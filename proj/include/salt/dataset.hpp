// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "salt/rng.hpp"
#include "salt/tensor.hpp"

namespace salt {

/// Labeled image set, images stacked into one [N,C,H,W] tensor. Labels
/// always live in the backbone's original [0,K) space; user subsets are
/// never re-indexed so the pretrained K-way tail stays valid.
struct Dataset {
    Tensor<float> images;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const;
    std::size_t sample_numel() const;

    /// Gather rows into a fresh [B, ...] batch tensor.
    Tensor<float> gather(std::span<const std::size_t> indices) const;
    std::vector<std::uint32_t> gather_labels(std::span<const std::size_t> indices) const;
};

struct UserTransform {
    double scale = 1.0;
    double bias = 0.0;
    bool is_identity() const { return scale == 1.0 && bias == 0.0; }
};

/// Template-based synthetic task: class k has a fixed template drawn once
/// from the template stream; samples are noisy, affinely shifted copies
/// clipped to [0,1].
struct SyntheticDatasetSpec {
    std::uint32_t num_classes = 8;
    Shape image_shape = {1, 16, 16};
    std::uint64_t template_seed = 7;
    double sample_noise = 0.3; // sigma_d
    std::uint32_t train_per_class = 500;
    std::uint32_t test_per_class = 100;
    std::vector<std::uint32_t> user_subset; // empty = all classes
    UserTransform transform;

    nlohmann::json to_json() const;
    static SyntheticDatasetSpec from_json(const nlohmann::json& j);
};

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

/// Deterministic per (spec, rng seed): templates depend only on
/// template_seed, samples on the passed stream. The user subset filter is
/// applied after generation, so subsetting never changes the draws.
TrainTestSplit generate_synthetic(const SyntheticDatasetSpec& spec, const RngStream& rng);

/// Stratified (per-class) validation split; deterministic for a fixed stream.
std::pair<Dataset, Dataset> stratified_split(const Dataset& data, double val_fraction, RngStream rng);

/// Deterministic Fisher-Yates with explicit draws.
void shuffle_indices(std::vector<std::size_t>& indices, RngStream& rng);

/// Standard CIFAR-10 binary format: per record one label byte followed by
/// 3072 RGB bytes; 10000 records per file. Pixels scaled to [0,1].
Dataset load_cifar10(const std::vector<std::string>& files);

} // namespace salt
