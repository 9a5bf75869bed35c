// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <limits>
#include <string>

#include "salt/channel.hpp"
#include "salt/dataset.hpp"
#include "salt/protocol.hpp"
#include "salt/split.hpp"

namespace salt {

enum class TrainMode { salt_residual, salt_insertion, head_finetune, head_retrain, none };

const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::uint32_t batch_size = 32; // desk default (the full-scale setting uses 128)
    std::uint32_t max_epochs = 100;
    std::uint32_t early_stop_patience = 10;
    double min_delta = 1e-4;
    ChannelSpec forward_channel;  // client -> server
    ChannelSpec gradient_channel; // server -> client, identity unless exploring
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::salt_residual;

    /// Test instrumentation, invoked after each epoch's bookkeeping.
    std::function<void(std::uint32_t epoch)> epoch_hook;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// ---- Adam ------------------------------------------------------------------

/// Bias-corrected Adam with beta1=0.9, beta2=0.999, eps=1e-8. Only
/// parameters with trainable=true receive updates; the step counter
/// advances exactly once per call.
struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    struct Moments {
        Tensor<float> m;
        Tensor<float> v;
    };
    std::vector<Moments> moments;
    std::uint64_t t = 0;
};

void adam_step(std::span<Parameter<float>* const> params, AdamState& state, double lr);

// ---- early stopping -----------------------------------------------------------

/// Stops exactly when the number of epochs since the last improvement
/// (val_loss < best - min_delta) exceeds the patience window.
class EarlyStopper {
public:
    EarlyStopper(std::uint32_t patience, double min_delta)
        : patience_(patience), min_delta_(min_delta) {}

    /// Feed one epoch's validation loss; true means stop now.
    bool update(double val_loss);

    double best_loss() const { return best_; }
    std::uint32_t epochs_since_improvement() const { return since_; }

private:
    std::uint32_t patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    std::uint32_t since_ = 0;
};

// ---- reports ---------------------------------------------------------------

struct EpochRow {
    std::uint32_t epoch = 0; // 0 is the pre-training validation pass
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double val_loss = 0.0;
    double val_acc = 0.0;
    double wall_clock_s = 0.0;
};

struct TrainReport {
    TrainMode mode = TrainMode::none;
    std::uint64_t seed = 0;
    std::uint32_t epochs = 0; // realized training epochs
    bool stopped_early = false;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<EpochRow> rows;
    double wall_clock_s = 0.0;
};

// ---- training entry points -----------------------------------------------------

/// Algorithm-1 loop: frozen head and tail, trainable adapter, Adam on the
/// adapter only. `remote` switches the far side from the in-process tail
/// to a networked session with bit-identical numerics. Throws
/// ClosedModelError if a frozen digest changes.
TrainReport train_adapter(const SplitModel<float>& model, Adapter<float>& adapter, const Dataset& train,
                          const Dataset& val, const TrainConfig& cfg, FeatureEndpoint* remote = nullptr);

/// Closed-model-violating baselines: head_finetune trains the head in
/// place, head_retrain reinitializes it first. The tail stays frozen.
TrainReport train_baseline(SplitModel<float>& model, const Dataset& train, const Dataset& val,
                           const TrainConfig& cfg);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

/// Forward-only evaluation with the channel realized per batch.
EvalResult evaluate(const SplitModel<float>& model, const Adapter<float>* adapter, const Dataset& data,
                    const ChannelSpec& channel, RngStream rng, std::uint32_t batch_size = 32);

/// Head-forward over a whole dataset in batches (latent cache for the
/// split-learning loop; valid because the frozen head is deterministic).
Tensor<float> head_latents(const SplitModel<float>& model, const Dataset& data, std::uint32_t batch_size);

} // namespace salt
