// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "salt/csv.hpp"
#include "salt/inversion.hpp"
#include "salt/trainer.hpp"

namespace salt {

enum class Scenario { user_adapt, packet_loss_sweep, noise_privacy_sweep, split_point_sweep };

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

/// One experiment: scenario kind, user dataset, training hyperparameters,
/// channel grids, seeds and output location. Serializes to a JSON config
/// file; grids default to the standard sweep values.
struct ExperimentConfig {
    Scenario scenario = Scenario::user_adapt;
    SyntheticDatasetSpec dataset;
    std::string split_point = "after_block2";
    TrainConfig train;
    std::vector<double> loss_rates = {0.0, 0.25, 0.5, 0.75};
    std::vector<double> sigma_grid = {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
    std::vector<double> train_sigmas;         // noise scenario training points; empty = sigma_grid
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::uint64_t data_seed = 1;
    std::string backbone_file;
    std::string out_dir;
    AttackConfig attack;
    std::vector<std::uint64_t> attack_seeds;  // noise scenario; empty = first seed only
    std::uint32_t threads = 0;                // 0 = hardware concurrency

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
};

struct RunRecord {
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::none;
    std::string split_point;
    double grid_value = 0.0; // loss rate or sigma, 0 for user_adapt
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::uint32_t epochs = 0;
    double t_comm_batch_s = 0.0;
    double t_comm_total_s = 0.0;
    TrainReport report;
};

struct AttackRecord {
    std::uint64_t seed = 0;
    double sigma = 0.0;
    bool with_salt = false;
    double mean_ssim = 0.0;
    double mean_mse = 0.0;
};

struct ScenarioResult {
    std::vector<RunRecord> runs;
    std::vector<AttackRecord> attacks;
};

struct PretrainOptions {
    double learning_rate = 1e-3;
    std::uint32_t batch_size = 64;
    std::uint32_t max_epochs = 30;
    std::uint32_t patience = 3;
    double min_delta = 1e-4;
    std::uint64_t seed = 42;
};

struct PretrainResult {
    double test_accuracy = 0.0;
    std::uint32_t epochs = 0;
    std::uint64_t digest = 0;
};

/// Train the unsplit desk backbone on the full class set (user subset and
/// transform cleared) and save it in the model file format.
PretrainResult pretrain_backbone(const SyntheticDatasetSpec& spec, const PretrainOptions& opts,
                                 const std::string& out_file);

/// Run one scenario end to end; writes result CSVs into cfg.out_dir when
/// it is nonempty and returns the structured results. Fully reproducible
/// per (config, seeds): result tables are byte-identical across reruns.
ScenarioResult run_scenario(const ExperimentConfig& cfg);

/// The TrainReport log schema: seed, mode, epoch, train_loss, val_loss,
/// val_acc, wall_clock_s.
void append_train_log(CsvTable& table, const TrainReport& report);

} // namespace salt
