// SPDX-License-Identifier: Apache-2.0
#include "salt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "salt/errors.hpp"
#include "salt/metrics.hpp"

namespace salt {

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::user_adapt: return "user_adapt";
        case Scenario::packet_loss_sweep: return "packet_loss_sweep";
        case Scenario::noise_privacy_sweep: return "noise_privacy_sweep";
        case Scenario::split_point_sweep: return "split_point_sweep";
    }
    return "unknown";
}

Scenario scenario_from_name(const std::string& name) {
    for (Scenario s : {Scenario::user_adapt, Scenario::packet_loss_sweep, Scenario::noise_privacy_sweep,
                       Scenario::split_point_sweep}) {
        if (name == scenario_name(s)) return s;
    }
    throw ConfigError("unknown scenario '" + name + "'");
}

// ---- config ------------------------------------------------------------

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["scenario"] = scenario_name(scenario);
    j["dataset"] = dataset.to_json();
    j["split_point"] = split_point;
    j["train"] = train.to_json();
    j["loss_rates"] = loss_rates;
    j["sigma_grid"] = sigma_grid;
    j["train_sigmas"] = train_sigmas;
    j["seeds"] = seeds;
    j["data_seed"] = data_seed;
    j["backbone"] = backbone_file;
    j["out_dir"] = out_dir;
    j["attack"] = attack.to_json();
    j["attack_seeds"] = attack_seeds;
    j["threads"] = threads;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.scenario = scenario_from_name(j.value("scenario", std::string("user_adapt")));
    if (j.contains("dataset")) c.dataset = SyntheticDatasetSpec::from_json(j.at("dataset"));
    c.split_point = j.value("split_point", c.split_point);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("loss_rates")) c.loss_rates = j.at("loss_rates").get<std::vector<double>>();
    if (j.contains("sigma_grid")) c.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
    if (j.contains("train_sigmas")) c.train_sigmas = j.at("train_sigmas").get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.data_seed = j.value("data_seed", c.data_seed);
    c.backbone_file = j.value("backbone", c.backbone_file);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("attack")) c.attack = AttackConfig::from_json(j.at("attack"));
    if (j.contains("attack_seeds")) c.attack_seeds = j.at("attack_seeds").get<std::vector<std::uint64_t>>();
    c.threads = j.value("threads", c.threads);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config file " + path + ": " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << to_json().dump(2) << "\n";
}

// ---- pretraining ------------------------------------------------------------

PretrainResult pretrain_backbone(const SyntheticDatasetSpec& spec, const PretrainOptions& opts,
                                 const std::string& out_file) {
    SyntheticDatasetSpec base = spec;
    base.user_subset.clear();
    base.transform = UserTransform{};
    auto data = generate_synthetic(base, RngStream(opts.seed, "pretrain"));
    auto [train, val] = stratified_split(data.train, 0.1, RngStream(opts.seed).fork("valsplit"));

    auto net = build_desk_backbone<float>(base.num_classes, opts.seed);
    auto params = net.params();
    AdamState adam;
    RngStream shuffle_stream = RngStream(opts.seed).fork("shuffle");
    EarlyStopper stopper(opts.patience, opts.min_delta);

    auto eval_pass = [&](const Dataset& d) {
        std::size_t correct = 0;
        double loss_acc = 0.0;
        for (std::size_t at = 0; at < d.size(); at += opts.batch_size) {
            const std::size_t n = std::min<std::size_t>(opts.batch_size, d.size() - at);
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = at + i;
            Graph<float> g;
            auto logits = net.forward(g, g.input(d.gather(idx)), /*training=*/false);
            const auto labels = d.gather_labels(idx);
            auto loss = g.softmax_cross_entropy(logits, labels);
            loss_acc += static_cast<double>(g.value(loss)[0]) * static_cast<double>(n);
            correct += count_correct(g.value(logits), labels);
        }
        return std::pair<double, double>{loss_acc / static_cast<double>(d.size()),
                                         static_cast<double>(correct) / static_cast<double>(d.size())};
    };

    PretrainResult result;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::uint32_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        shuffle_indices(order, shuffle_stream);
        for (std::size_t at = 0; at < order.size(); at += opts.batch_size) {
            const std::size_t n = std::min<std::size_t>(opts.batch_size, order.size() - at);
            std::vector<std::size_t> idx(order.begin() + static_cast<long>(at),
                                         order.begin() + static_cast<long>(at + n));
            Graph<float> g;
            auto logits = net.forward(g, g.input(train.gather(idx)), /*training=*/true);
            auto loss = g.softmax_cross_entropy(logits, train.gather_labels(idx));
            zero_grads<float>(std::span<Parameter<float>* const>(params));
            g.backward(loss);
            adam_step(params, adam, opts.learning_rate);
        }
        result.epochs = epoch;
        if (stopper.update(eval_pass(val).first)) break;
    }

    result.test_accuracy = eval_pass(data.test).second;
    if (!out_file.empty()) save_network(net, out_file);
    result.digest = param_digest(net);
    return result;
}

// ---- scenario machinery ----------------------------------------------------------

namespace {

int mode_order(TrainMode m) {
    switch (m) {
        case TrainMode::salt_residual: return 0;
        case TrainMode::salt_insertion: return 1;
        case TrainMode::head_finetune: return 2;
        case TrainMode::head_retrain: return 3;
        case TrainMode::none: return 4;
    }
    return 5;
}

int split_order(const std::string& name) {
    for (int i = 0; i < 4; ++i) {
        if (name == kDeskSplitPoints[i]) return i;
    }
    return 4;
}

void sort_records(std::vector<RunRecord>& runs) {
    std::stable_sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
        if (a.seed != b.seed) return a.seed < b.seed;
        if (a.grid_value != b.grid_value) return a.grid_value < b.grid_value;
        if (split_order(a.split_point) != split_order(b.split_point)) {
            return split_order(a.split_point) < split_order(b.split_point);
        }
        return mode_order(a.mode) < mode_order(b.mode);
    });
}

void parallel_over(std::size_t jobs, std::uint32_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<std::uint32_t>(std::min<std::size_t>(threads, jobs));
    if (threads <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::uint32_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= jobs) break;
                    fn(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double comm_total_for(const SplitModelF& model, const TrainConfig& cfg, std::size_t samples,
                      std::uint32_t epochs, double* per_batch_out) {
    LatencyModel m;
    m.feature_size_bits = feature_bits(model.latent_shape);
    m.batch_size = cfg.batch_size;
    m.samples = std::max<std::size_t>(samples, 1);
    m.epochs = std::max<std::uint32_t>(epochs, 1);
    const double per_batch = comm_latency_per_batch(m);
    if (per_batch_out) *per_batch_out = per_batch;
    return epochs == 0 ? 0.0 : total_comm_latency(m);
}

struct ScenarioContext {
    const ExperimentConfig& cfg;
    Network<float> backbone;
    Dataset user_train;
    Dataset user_test;
};

RunRecord eval_only_record(const ScenarioContext& ctx, const SplitModelF& model, std::uint64_t seed,
                           double grid_value, const ChannelSpec& eval_channel, const RngStream& eval_rng) {
    RunRecord rec;
    rec.seed = seed;
    rec.mode = TrainMode::none;
    rec.split_point = model.split_point;
    rec.grid_value = grid_value;
    auto ev = evaluate(model, nullptr, ctx.user_test, eval_channel, eval_rng, ctx.cfg.train.batch_size);
    rec.accuracy = ev.accuracy;
    rec.mean_loss = ev.mean_loss;
    return rec;
}

RunRecord adapter_record(const ScenarioContext& ctx, const SplitModelF& model, std::uint64_t seed,
                         TrainMode mode, double grid_value, const ChannelSpec& train_channel,
                         const ChannelSpec& eval_channel, const RngStream& eval_rng, const Dataset& train,
                         const Dataset& val, Adapter<float>* adapter_out = nullptr) {
    RngStream seed_root(seed);
    auto adapter = make_adapter<float>(
        mode == TrainMode::salt_residual ? AdapterVariant::residual : AdapterVariant::insertion,
        model.latent_shape, seed_root.fork("init"));

    TrainConfig cfg = ctx.cfg.train;
    cfg.seed = seed;
    cfg.mode = mode;
    cfg.forward_channel = train_channel;

    RunRecord rec;
    rec.seed = seed;
    rec.mode = mode;
    rec.split_point = model.split_point;
    rec.grid_value = grid_value;
    rec.report = train_adapter(model, adapter, train, val, cfg);
    rec.epochs = rec.report.epochs;
    auto ev = evaluate(model, &adapter, ctx.user_test, eval_channel, eval_rng, cfg.batch_size);
    rec.accuracy = ev.accuracy;
    rec.mean_loss = ev.mean_loss;
    rec.t_comm_total_s = comm_total_for(model, cfg, train.size(), rec.epochs, &rec.t_comm_batch_s);
    if (adapter_out) *adapter_out = std::move(adapter);
    return rec;
}

RunRecord baseline_record(const ScenarioContext& ctx, std::uint64_t seed, TrainMode mode,
                          const ChannelSpec& eval_channel, const RngStream& eval_rng, const Dataset& train,
                          const Dataset& val) {
    auto model = split_at(ctx.backbone.clone(), ctx.cfg.split_point);
    TrainConfig cfg = ctx.cfg.train;
    cfg.seed = seed;
    cfg.mode = mode;

    RunRecord rec;
    rec.seed = seed;
    rec.mode = mode;
    rec.split_point = model.split_point;
    rec.grid_value = 0.0;
    rec.report = train_baseline(model, train, val, cfg);
    rec.epochs = rec.report.epochs;
    auto ev = evaluate(model, nullptr, ctx.user_test, eval_channel, eval_rng, cfg.batch_size);
    rec.accuracy = ev.accuracy;
    rec.mean_loss = ev.mean_loss;
    rec.t_comm_total_s = comm_total_for(model, cfg, train.size(), rec.epochs, &rec.t_comm_batch_s);
    return rec;
}

// ---- per-scenario workers ------------------------------------------------

std::vector<RunRecord> user_adapt_seed(const ScenarioContext& ctx, std::uint64_t seed) {
    RngStream seed_root(seed);
    auto model = split_at(ctx.backbone.clone(), ctx.cfg.split_point);
    auto [train, val] = stratified_split(ctx.user_train, 0.1, seed_root.fork("valsplit"));
    const ChannelSpec identity = ChannelSpec::identity();

    std::vector<RunRecord> out;
    out.push_back(adapter_record(ctx, model, seed, TrainMode::salt_residual, 0.0, ctx.cfg.train.forward_channel,
                                 identity, seed_root.fork("eval"), train, val));
    out.push_back(adapter_record(ctx, model, seed, TrainMode::salt_insertion, 0.0, ctx.cfg.train.forward_channel,
                                 identity, seed_root.fork("eval"), train, val));
    out.push_back(baseline_record(ctx, seed, TrainMode::head_finetune, identity, seed_root.fork("eval"), train, val));
    out.push_back(baseline_record(ctx, seed, TrainMode::head_retrain, identity, seed_root.fork("eval"), train, val));
    out.push_back(eval_only_record(ctx, model, seed, 0.0, identity, seed_root.fork("eval")));
    return out;
}

std::vector<RunRecord> packet_loss_seed(const ScenarioContext& ctx, std::uint64_t seed) {
    RngStream seed_root(seed);
    auto model = split_at(ctx.backbone.clone(), ctx.cfg.split_point);
    auto [train, val] = stratified_split(ctx.user_train, 0.1, seed_root.fork("valsplit"));

    std::vector<RunRecord> out;
    for (std::size_t pi = 0; pi < ctx.cfg.loss_rates.size(); ++pi) {
        const double p = ctx.cfg.loss_rates[pi];
        const auto channel = ChannelSpec::packet_loss(p);
        const std::string eval_name = "eval:p" + std::to_string(pi);
        out.push_back(adapter_record(ctx, model, seed, TrainMode::salt_residual, p, channel, channel,
                                     seed_root.fork(eval_name), train, val));
        out.push_back(eval_only_record(ctx, model, seed, p, channel, seed_root.fork(eval_name)));
    }
    return out;
}

std::vector<RunRecord> split_point_seed(const ScenarioContext& ctx, std::uint64_t seed) {
    RngStream seed_root(seed);
    auto [train, val] = stratified_split(ctx.user_train, 0.1, seed_root.fork("valsplit"));
    const ChannelSpec identity = ChannelSpec::identity();

    std::vector<RunRecord> out;
    for (const char* sp : kDeskSplitPoints) {
        auto model = split_at(ctx.backbone.clone(), sp);
        out.push_back(adapter_record(ctx, model, seed, TrainMode::salt_residual, 0.0,
                                     ctx.cfg.train.forward_channel, identity,
                                     seed_root.fork(std::string("eval:") + sp), train, val));
        out.push_back(eval_only_record(ctx, model, seed, 0.0, identity,
                                       seed_root.fork(std::string("eval:") + sp)));
    }
    return out;
}

struct NoiseSeedResult {
    std::vector<RunRecord> runs;
    std::vector<AttackRecord> attacks;
};

NoiseSeedResult noise_privacy_seed(const ScenarioContext& ctx, std::uint64_t seed) {
    RngStream seed_root(seed);
    auto model = split_at(ctx.backbone.clone(), ctx.cfg.split_point);
    auto [train, val] = stratified_split(ctx.user_train, 0.1, seed_root.fork("valsplit"));

    const std::vector<double>& sigmas =
        ctx.cfg.train_sigmas.empty() ? ctx.cfg.sigma_grid : ctx.cfg.train_sigmas;

    NoiseSeedResult out;
    std::vector<Adapter<float>> adapters;
    adapters.reserve(sigmas.size());
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        const double sigma = sigmas[si];
        const auto channel = ChannelSpec::gaussian_noise(sigma);
        const std::string eval_name = "eval:s" + std::to_string(si);
        Adapter<float> adapter;
        out.runs.push_back(adapter_record(ctx, model, seed, TrainMode::salt_residual, sigma, channel, channel,
                                          seed_root.fork(eval_name), train, val, &adapter));
        out.runs.push_back(eval_only_record(ctx, model, seed, sigma, channel, seed_root.fork(eval_name)));
        adapters.push_back(std::move(adapter));
    }

    const auto& att_seeds = ctx.cfg.attack_seeds;
    const bool run_attack =
        att_seeds.empty() ? (seed == ctx.cfg.seeds.front())
                          : std::find(att_seeds.begin(), att_seeds.end(), seed) != att_seeds.end();
    if (run_attack) {
        for (double s : ctx.cfg.attack.sigma_grid) {
            if (std::find(sigmas.begin(), sigmas.end(), s) == sigmas.end()) {
                throw ConfigError("attack sigma grid must be a subset of the training sigmas");
            }
        }
        SyntheticDatasetSpec surrogate_spec = ctx.cfg.dataset;
        auto surrogate = generate_synthetic(surrogate_spec, RngStream(ctx.cfg.data_seed).fork("surrogate")).train;

        AttackConfig acfg = ctx.cfg.attack;
        acfg.seed = seed;
        auto decoder = build_decoder(model.latent_shape, ctx.user_test.sample_shape(), seed);
        train_inverter(model, decoder, surrogate, acfg);

        RngStream attack_rng = seed_root.fork("attack");
        auto without = evaluate_attack(decoder, model, nullptr, ctx.user_test, acfg.sigma_grid, attack_rng,
                                       acfg.batch_size);
        for (const auto& pt : without) {
            out.attacks.push_back(AttackRecord{seed, pt.sigma, false, pt.mean_ssim, pt.mean_mse});
        }
        for (double sigma : acfg.sigma_grid) {
            const std::size_t si =
                static_cast<std::size_t>(std::find(sigmas.begin(), sigmas.end(), sigma) - sigmas.begin());
            const double grid[] = {sigma};
            auto with = evaluate_attack(decoder, model, &adapters[si], ctx.user_test, grid, attack_rng,
                                        acfg.batch_size);
            out.attacks.push_back(AttackRecord{seed, sigma, true, with[0].mean_ssim, with[0].mean_mse});
        }
    }
    return out;
}

// ---- CSV emission ------------------------------------------------------------

void emit_csvs(const ExperimentConfig& cfg, const ScenarioResult& result) {
    if (cfg.out_dir.empty()) return;
    std::filesystem::create_directories(cfg.out_dir);
    const std::string dir = cfg.out_dir + "/";

    switch (cfg.scenario) {
        case Scenario::user_adapt: {
            CsvTable t({"seed", "mode", "accuracy", "epochs", "t_comm_batch_s", "t_comm_total_s"});
            for (const auto& r : result.runs) {
                t.begin_row()
                    .cell(std::uint64_t(r.seed))
                    .cell(std::string(train_mode_name(r.mode)))
                    .cell(r.accuracy)
                    .cell(std::uint64_t(r.epochs))
                    .cell(r.t_comm_batch_s)
                    .cell(r.t_comm_total_s);
            }
            t.write(dir + "user_adapt.csv");
            break;
        }
        case Scenario::packet_loss_sweep: {
            CsvTable t({"seed", "mode", "loss_rate", "accuracy", "epochs", "t_comm_total_s"});
            for (const auto& r : result.runs) {
                t.begin_row()
                    .cell(std::uint64_t(r.seed))
                    .cell(std::string(train_mode_name(r.mode)))
                    .cell(r.grid_value)
                    .cell(r.accuracy)
                    .cell(std::uint64_t(r.epochs))
                    .cell(r.t_comm_total_s);
            }
            t.write(dir + "packet_loss.csv");
            break;
        }
        case Scenario::noise_privacy_sweep: {
            auto find_attack = [&](std::uint64_t seed, double sigma, bool with_salt) -> const AttackRecord* {
                for (const auto& a : result.attacks) {
                    if (a.seed == seed && a.sigma == sigma && a.with_salt == with_salt) return &a;
                }
                return nullptr;
            };
            CsvTable t({"seed", "sigma", "condition", "accuracy", "epochs", "mean_ssim", "mean_mse"});
            for (const auto& r : result.runs) {
                const bool with_salt = r.mode != TrainMode::none;
                const AttackRecord* a = find_attack(r.seed, r.grid_value, with_salt);
                const double nan = std::numeric_limits<double>::quiet_NaN();
                t.begin_row()
                    .cell(std::uint64_t(r.seed))
                    .cell(r.grid_value)
                    .cell(std::string(with_salt ? "with_salt" : "without_salt"))
                    .cell(r.accuracy)
                    .cell(std::uint64_t(r.epochs))
                    .cell(a ? a->mean_ssim : nan)
                    .cell(a ? a->mean_mse : nan);
            }
            t.write(dir + "noise_privacy.csv");

            CsvTable at({"sigma", "condition", "mean_ssim", "mean_mse", "seed"});
            for (const auto& a : result.attacks) {
                at.begin_row()
                    .cell(a.sigma)
                    .cell(std::string(a.with_salt ? "with_salt" : "without_salt"))
                    .cell(a.mean_ssim)
                    .cell(a.mean_mse)
                    .cell(std::uint64_t(a.seed));
            }
            at.write(dir + "attack.csv");
            break;
        }
        case Scenario::split_point_sweep: {
            CsvTable t({"seed", "split_point", "mode", "accuracy", "epochs"});
            for (const auto& r : result.runs) {
                t.begin_row()
                    .cell(std::uint64_t(r.seed))
                    .cell(r.split_point)
                    .cell(std::string(train_mode_name(r.mode)))
                    .cell(r.accuracy)
                    .cell(std::uint64_t(r.epochs));
            }
            t.write(dir + "split_point.csv");
            break;
        }
    }

    CsvTable log({"seed", "mode", "epoch", "train_loss", "val_loss", "val_acc", "wall_clock_s"});
    for (const auto& r : result.runs) append_train_log(log, r.report);
    log.write(dir + "train_log.csv");
}

} // namespace

void append_train_log(CsvTable& table, const TrainReport& report) {
    for (const EpochRow& row : report.rows) {
        table.begin_row()
            .cell(std::uint64_t(report.seed))
            .cell(std::string(train_mode_name(report.mode)))
            .cell(std::uint64_t(row.epoch))
            .cell(row.train_loss)
            .cell(row.val_loss)
            .cell(row.val_acc)
            .cell(row.wall_clock_s);
    }
}

ScenarioResult run_scenario(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw ConfigError("scenario needs at least one seed");
    if (cfg.backbone_file.empty()) throw ConfigError("scenario needs a pretrained backbone file");
    if (!std::filesystem::exists(cfg.backbone_file)) {
        throw ConfigError("backbone file not found: " + cfg.backbone_file +
                          " (run the pretrain command first)");
    }

    ScenarioContext ctx{cfg, load_network(cfg.backbone_file), {}, {}};
    auto split = generate_synthetic(cfg.dataset, RngStream(cfg.data_seed));
    ctx.user_train = std::move(split.train);
    ctx.user_test = std::move(split.test);

    std::vector<std::vector<RunRecord>> run_slots(cfg.seeds.size());
    std::vector<std::vector<AttackRecord>> attack_slots(cfg.seeds.size());

    parallel_over(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        switch (cfg.scenario) {
            case Scenario::user_adapt:
                run_slots[i] = user_adapt_seed(ctx, seed);
                break;
            case Scenario::packet_loss_sweep:
                run_slots[i] = packet_loss_seed(ctx, seed);
                break;
            case Scenario::noise_privacy_sweep: {
                auto r = noise_privacy_seed(ctx, seed);
                run_slots[i] = std::move(r.runs);
                attack_slots[i] = std::move(r.attacks);
                break;
            }
            case Scenario::split_point_sweep:
                run_slots[i] = split_point_seed(ctx, seed);
                break;
        }
    });

    ScenarioResult result;
    for (auto& slot : run_slots) {
        for (auto& r : slot) result.runs.push_back(std::move(r));
    }
    for (auto& slot : attack_slots) {
        for (auto& a : slot) result.attacks.push_back(std::move(a));
    }
    sort_records(result.runs);
    emit_csvs(cfg, result);
    return result;
}

} // namespace salt
