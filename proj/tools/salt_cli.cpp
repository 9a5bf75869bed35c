// SPDX-License-Identifier: Apache-2.0
// Command-line front end: pretrain backbones, run experiment scenarios,
// serve the tail side of the split, or run the inversion attack.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <thread>

#include "salt/harness.hpp"

namespace {

using namespace salt;

std::pair<std::string, std::uint16_t> parse_hostport(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) throw ConfigError("expected HOST:PORT, got '" + s + "'");
    const std::string host = s.substr(0, colon);
    const int port = std::stoi(s.substr(colon + 1));
    if (port < 0 || port > 65535) throw ConfigError("port out of range in '" + s + "'");
    return {host, static_cast<std::uint16_t>(port)};
}

int cmd_pretrain(const std::string& config_path, const std::string& out, std::uint64_t seed,
                 std::uint32_t max_epochs) {
    SyntheticDatasetSpec spec;
    if (!config_path.empty()) spec = ExperimentConfig::load(config_path).dataset;
    PretrainOptions opts;
    opts.seed = seed;
    if (max_epochs > 0) opts.max_epochs = max_epochs;
    auto result = pretrain_backbone(spec, opts, out);
    std::cout << "pretrained backbone: " << out << "\n"
              << "  epochs: " << result.epochs << "\n"
              << "  test accuracy: " << result.test_accuracy << "\n"
              << "  digest: " << std::hex << result.digest << std::dec << "\n";
    return 0;
}

int cmd_cifar_summary(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .bin batches under " + dir);
    auto data = load_cifar10(files);
    std::vector<std::size_t> histogram(10, 0);
    for (std::uint32_t y : data.labels) ++histogram[y];
    std::cout << "cifar-10: " << data.size() << " records from " << files.size() << " file(s), sample shape "
              << shape_str(data.sample_shape()) << "\n  per-class counts:";
    for (std::size_t c = 0; c < 10; ++c) std::cout << " " << histogram[c];
    std::cout << "\nscenarios run on the synthetic desk task; the loader is exposed for external use\n";
    return 0;
}

int cmd_run_local(ExperimentConfig cfg) {
    auto result = run_scenario(cfg);
    std::cout << "scenario " << scenario_name(cfg.scenario) << ": " << result.runs.size() << " runs";
    if (!result.attacks.empty()) std::cout << ", " << result.attacks.size() << " attack points";
    std::cout << "\n";
    if (!cfg.out_dir.empty()) std::cout << "results in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_run_connect(ExperimentConfig cfg, const std::string& connect) {
    if (cfg.train.mode != TrainMode::salt_residual && cfg.train.mode != TrainMode::salt_insertion) {
        throw ConfigError("networked runs train an adapter; set train.mode to a salt_* mode");
    }
    auto [host, port] = parse_hostport(connect);
    auto backbone = load_network(cfg.backbone_file);
    auto model = split_at(std::move(backbone), cfg.split_point);
    auto data = generate_synthetic(cfg.dataset, RngStream(cfg.data_seed));

    const std::uint64_t seed = cfg.seeds.empty() ? cfg.train.seed : cfg.seeds.front();
    RngStream seed_root(seed);
    auto [train, val] = stratified_split(data.train, 0.1, seed_root.fork("valsplit"));
    auto adapter = make_adapter<float>(
        cfg.train.mode == TrainMode::salt_residual ? AdapterVariant::residual : AdapterVariant::insertion,
        model.latent_shape, seed_root.fork("init"));

    TrainConfig tc = cfg.train;
    tc.seed = seed;

    SessionConfig sess;
    sess.latent_shape = model.latent_shape;
    sess.batch_size = tc.batch_size;
    sess.num_classes = static_cast<std::uint32_t>(model.num_classes);
    sess.forward_channel = tc.forward_channel;
    sess.seed = seed;

    auto transport = tcp_connect(host, port);
    ClientSession session(*transport, sess);
    auto report = train_adapter(model, adapter, train, val, tc, &session);
    session.shutdown();

    auto eval = evaluate(model, &adapter, data.test, ChannelSpec::identity(), seed_root.fork("eval"),
                         tc.batch_size);
    std::cout << "networked training done: epochs=" << report.epochs << " val_loss=" << report.best_val_loss
              << " test_acc=" << eval.accuracy << "\n";

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        save_adapter(adapter, cfg.out_dir + "/adapter.sadp");
        CsvTable log({"seed", "mode", "epoch", "train_loss", "val_loss", "val_acc", "wall_clock_s"});
        append_train_log(log, report);
        log.write(cfg.out_dir + "/train_log.csv");
        std::cout << "adapter and log in " << cfg.out_dir << "\n";
    }
    return 0;
}

int cmd_serve(const std::string& backbone_path, const std::string& split_point, const std::string& listen,
              bool once) {
    auto model = split_at(load_network(backbone_path), split_point);
    auto [host, port] = parse_hostport(listen);
    TcpListener listener(host, port);
    std::cout << "listening on " << host << ":" << listener.port() << std::endl;

    for (;;) {
        auto transport = listener.accept();
        if (once) {
            auto stats = serve_session(*transport, model);
            std::cout << "session done: " << stats.batches << " batches, " << stats.epochs << " epochs\n";
            return 0;
        }
        std::thread([t = std::shared_ptr<Transport>(std::move(transport)), &model] {
            try {
                auto stats = serve_session(*t, model);
                std::cout << "session done: " << stats.batches << " batches, " << stats.epochs << " epochs\n";
            } catch (const std::exception& e) {
                std::cerr << "session error: " << e.what() << "\n";
            }
        }).detach();
    }
}

int cmd_attack(ExperimentConfig cfg) {
    cfg.scenario = Scenario::noise_privacy_sweep;
    if (cfg.seeds.empty()) throw ConfigError("attack needs at least one seed");
    cfg.seeds = {cfg.seeds.front()};
    cfg.attack_seeds = {cfg.seeds.front()};
    auto result = run_scenario(cfg);
    for (const auto& a : result.attacks) {
        std::cout << "sigma=" << a.sigma << " " << (a.with_salt ? "with_salt" : "without_salt")
                  << " ssim=" << a.mean_ssim << " mse=" << a.mean_mse << "\n";
    }
    if (!cfg.out_dir.empty()) std::cout << "results in " << cfg.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SALT split-computing laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::string connect;
    std::string listen = "127.0.0.1:7787";
    std::string backbone;
    std::string split_point = "after_block2";
    std::uint64_t seed = 42;
    std::uint32_t max_epochs = 0;
    std::uint32_t threads = 0;
    bool once = false;
    bool single_seed = false;
    std::string cifar_dir;

    auto* pre = app.add_subcommand("pretrain", "train and save the desk backbone");
    pre->add_option("--config", config_path, "experiment config supplying the dataset spec");
    pre->add_option("--out", out, "output model file")->required();
    pre->add_option("--seed", seed, "pretraining seed");
    pre->add_option("--epochs", max_epochs, "max pretraining epochs");

    auto* run = app.add_subcommand("run", "run a scenario from a config file");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--backbone", backbone, "override the backbone file");
    run->add_option("--out", out, "override the output directory");
    run->add_option("--seed", seed, "seed used with --single-seed");
    run->add_flag("--single-seed", single_seed, "use only --seed instead of the config's seed list");
    run->add_option("--connect", connect, "train over the network against HOST:PORT");
    run->add_option("--threads", threads, "parallel seed jobs (0 = hardware)");
    run->add_option("--cifar-dir", cifar_dir, "summarize CIFAR-10 batches via the binary loader and exit");

    auto* serve = app.add_subcommand("serve", "serve the tail side of the split");
    serve->add_option("--backbone", backbone, "model file")->required();
    serve->add_option("--split", split_point, "split point name");
    serve->add_option("--listen", listen, "HOST:PORT (port 0 = ephemeral)");
    serve->add_flag("--once", once, "exit after one session");

    auto* attack = app.add_subcommand("attack", "train the inversion attacker and sweep sigma");
    attack->add_option("--config", config_path, "experiment config file")->required();
    attack->add_option("--out", out, "override the output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return cmd_pretrain(config_path, out, seed, max_epochs);
        if (serve->parsed()) return cmd_serve(backbone, split_point, listen, once);
        if (run->parsed() && !cifar_dir.empty()) return cmd_cifar_summary(cifar_dir);

        ExperimentConfig cfg = ExperimentConfig::load(config_path);
        if (!backbone.empty()) cfg.backbone_file = backbone;
        if (!out.empty()) cfg.out_dir = out;
        if (threads > 0) cfg.threads = threads;
        if (single_seed) cfg.seeds = {seed};
        if (run->parsed()) return connect.empty() ? cmd_run_local(cfg) : cmd_run_connect(cfg, connect);
        if (attack->parsed()) return cmd_attack(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
