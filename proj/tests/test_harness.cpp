// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "salt/harness.hpp"
#include "testing.hpp"

using namespace salt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& file) const { return (path / file).string(); }
};

SyntheticDatasetSpec tiny_spec() {
    SyntheticDatasetSpec spec;
    spec.num_classes = 8;
    spec.template_seed = 7;
    spec.train_per_class = 15;
    spec.test_per_class = 5;
    return spec;
}

ExperimentConfig tiny_config(Scenario scenario, const std::string& backbone) {
    ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.dataset = tiny_spec();
    cfg.dataset.user_subset = {0, 1, 2, 3};
    cfg.dataset.transform = UserTransform{1.1, 0.05};
    cfg.split_point = "after_block2";
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 1;
    cfg.train.early_stop_patience = 5;
    cfg.seeds = {0, 1};
    cfg.backbone_file = backbone;
    cfg.threads = 2;
    return cfg;
}

std::string make_backbone(const TempDir& dir) {
    const std::string path = dir / "backbone.smdl";
    save_network(build_desk_backbone<float>(8, 42), path);
    return path;
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("experiment config json roundtrip") {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::noise_privacy_sweep;
    cfg.dataset.user_subset = {1, 2};
    cfg.train.forward_channel = ChannelSpec::gaussian_noise(0.5);
    cfg.train_sigmas = {0.0, 1.0};
    cfg.seeds = {3, 4};
    cfg.attack_seeds = {3};
    cfg.backbone_file = "model.smdl";

    auto back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.scenario == Scenario::noise_privacy_sweep);
    CHECK(back.dataset.user_subset == std::vector<std::uint32_t>{1, 2});
    CHECK(back.train.forward_channel.sigma == 0.5);
    CHECK(back.train_sigmas == std::vector<double>{0.0, 1.0});
    CHECK(back.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(back.backbone_file == "model.smdl");

    CHECK_THROWS_AS(scenario_from_name("warp_sweep"), ConfigError);
}

TEST_CASE("pretraining is deterministic and beats the random baseline") {
    TempDir dir("salt_pretrain_test");
    PretrainOptions opts;
    opts.seed = 9;
    opts.max_epochs = 4;
    opts.batch_size = 32;
    auto spec = tiny_spec();
    spec.train_per_class = 30;
    auto a = pretrain_backbone(spec, opts, dir / "a.smdl");
    auto b = pretrain_backbone(spec, opts, dir / "b.smdl");
    CHECK(a.digest == b.digest);
    CHECK(a.test_accuracy > 1.0 / 8.0);

    // saved-then-loaded backbone reproduces identical logits on a fixture batch
    auto loaded = load_network(dir / "a.smdl");
    CHECK(param_digest(loaded) == a.digest);
    RngStream rng(4, "x");
    auto x = salt::testing::random_tensor<float>({4, 1, 16, 16}, rng, 0.0, 1.0);
    Graph<float> g1;
    auto l1 = g1.value(loaded.forward(g1, g1.input(x), false));
    auto reloaded = load_network(dir / "b.smdl");
    Graph<float> g2;
    auto l2 = g2.value(reloaded.forward(g2, g2.input(x), false));
    CHECK(l1.bit_equal(l2));
}

TEST_CASE("missing backbone is a configuration error") {
    ExperimentConfig cfg = tiny_config(Scenario::user_adapt, "/nonexistent/backbone.smdl");
    CHECK_THROWS_AS(run_scenario(cfg), ConfigError);
}

TEST_CASE("user_adapt emits one row per seed and mode") {
    TempDir dir("salt_user_adapt_test");
    auto cfg = tiny_config(Scenario::user_adapt, make_backbone(dir));
    cfg.out_dir = dir / "out";
    auto result = run_scenario(cfg);
    CHECK(result.runs.size() == 2 * 5);

    auto rows = CsvTable::parse(salt::testing::read_text(dir / "out/user_adapt.csv"));
    REQUIRE(rows.size() == 1 + 10);
    CHECK(rows[0] == std::vector<std::string>{"seed", "mode", "accuracy", "epochs", "t_comm_batch_s",
                                              "t_comm_total_s"});
    // deterministic ordering: seed, then mode
    CHECK(rows[1][0] == "0");
    CHECK(rows[1][1] == "salt_residual");
    CHECK(rows[5][1] == "none");
    CHECK(rows[6][0] == "1");

    auto log_rows = CsvTable::parse(salt::testing::read_text(dir / "out/train_log.csv"));
    CHECK(log_rows[0] == std::vector<std::string>{"seed", "mode", "epoch", "train_loss", "val_loss",
                                                  "val_acc", "wall_clock_s"});
    CHECK(log_rows.size() > 10);
}

TEST_CASE("packet loss sweep has grid x modes x seeds cardinality") {
    TempDir dir("salt_packet_test");
    auto cfg = tiny_config(Scenario::packet_loss_sweep, make_backbone(dir));
    cfg.dataset.user_subset.clear();
    cfg.dataset.transform = UserTransform{};
    cfg.loss_rates = {0.0, 0.5};
    cfg.seeds = {0};
    auto result = run_scenario(cfg);
    CHECK(result.runs.size() == 2 * 2 * 1);
}

TEST_CASE("noise sweep joins accuracy with attack ssim") {
    TempDir dir("salt_noise_test");
    auto cfg = tiny_config(Scenario::noise_privacy_sweep, make_backbone(dir));
    cfg.dataset.user_subset.clear();
    cfg.dataset.transform = UserTransform{};
    cfg.train_sigmas = {0.0, 0.5};
    cfg.seeds = {0};
    cfg.attack_seeds = {0};
    cfg.attack.sigma_grid = {0.0, 0.5};
    cfg.attack.epochs = 1;
    cfg.out_dir = dir / "out";
    auto result = run_scenario(cfg);
    CHECK(result.runs.size() == 2 * 2);
    CHECK(result.attacks.size() == 2 * 2); // with/without at each sigma

    auto rows = CsvTable::parse(salt::testing::read_text(dir / "out/noise_privacy.csv"));
    REQUIRE(rows.size() == 1 + 4);
    CHECK(rows[0] == std::vector<std::string>{"seed", "sigma", "condition", "accuracy", "epochs",
                                              "mean_ssim", "mean_mse"});
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][5] != "nan"); // joined

    auto attack_rows = CsvTable::parse(salt::testing::read_text(dir / "out/attack.csv"));
    CHECK(attack_rows.size() == 1 + 4);

    // attack grid outside the training sigmas is rejected
    cfg.attack.sigma_grid = {0.0, 1.5};
    CHECK_THROWS_AS(run_scenario(cfg), ConfigError);
}

TEST_CASE("split point sweep covers exactly the four desk boundaries") {
    TempDir dir("salt_split_test");
    auto cfg = tiny_config(Scenario::split_point_sweep, make_backbone(dir));
    cfg.seeds = {0};
    auto result = run_scenario(cfg);
    CHECK(result.runs.size() == 4 * 2);
    std::size_t at = 0;
    for (const char* sp : kDeskSplitPoints) {
        CHECK(result.runs[at].split_point == sp);
        CHECK(result.runs[at].mode == TrainMode::salt_residual);
        CHECK(result.runs[at + 1].split_point == sp);
        CHECK(result.runs[at + 1].mode == TrainMode::none);
        at += 2;
    }
}

TEST_CASE("latency accounting composes with the train report") {
    LatencyModel m;
    m.feature_size_bits = feature_bits({32, 4, 4});
    m.batch_size = 32;
    m.samples = 432;
    m.epochs = 17; // realized E from a report
    const double per_epoch = std::ceil(432.0 / 32.0) * comm_latency_per_batch(m);
    double summed = 0.0;
    for (std::uint32_t e = 0; e < 17; ++e) summed += per_epoch;
    CHECK(total_comm_latency(m) == summed);
}

} // TEST_SUITE
