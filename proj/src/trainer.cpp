// SPDX-License-Identifier: Apache-2.0
#include "salt/trainer.hpp"

#include <chrono>
#include <cmath>

#include "salt/errors.hpp"

namespace salt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor<float> gather_rows(const Tensor<float>& t, std::span<const std::size_t> indices) {
    Shape shape = t.shape();
    const std::size_t stride = t.numel() / t.dim(0);
    shape[0] = indices.size();
    Tensor<float> out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(t.data() + indices[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::uint32_t batch) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t at = 0; at < order.size(); at += batch) {
        const std::size_t end = std::min(order.size(), at + batch);
        out.emplace_back(order.begin() + static_cast<long>(at), order.begin() + static_cast<long>(end));
    }
    return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

} // namespace

// ---- mode names ------------------------------------------------------------

const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::salt_residual: return "salt_residual";
        case TrainMode::salt_insertion: return "salt_insertion";
        case TrainMode::head_finetune: return "head_finetune";
        case TrainMode::head_retrain: return "head_retrain";
        case TrainMode::none: return "none";
    }
    return "unknown";
}

TrainMode train_mode_from_name(const std::string& name) {
    for (TrainMode m : {TrainMode::salt_residual, TrainMode::salt_insertion, TrainMode::head_finetune,
                        TrainMode::head_retrain, TrainMode::none}) {
        if (name == train_mode_name(m)) return m;
    }
    throw ConfigError("unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("patience must be >= 1");
    if (min_delta < 0.0) throw ConfigError("min delta must be nonnegative");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["early_stop_patience"] = early_stop_patience;
    j["min_delta"] = min_delta;
    j["forward_channel"] = forward_channel.to_json();
    j["gradient_channel"] = gradient_channel.to_json();
    j["seed"] = seed;
    j["mode"] = train_mode_name(mode);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.min_delta = j.value("min_delta", c.min_delta);
    if (j.contains("forward_channel")) c.forward_channel = ChannelSpec::from_json(j.at("forward_channel"));
    if (j.contains("gradient_channel")) c.gradient_channel = ChannelSpec::from_json(j.at("gradient_channel"));
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = train_mode_from_name(j.at("mode").get<std::string>());
    c.validate();
    return c;
}

// ---- Adam ------------------------------------------------------------------

void adam_step(std::span<Parameter<float>* const> params, AdamState& state, double lr) {
    if (state.moments.empty()) {
        state.moments.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.moments[i].m = Tensor<float>(params[i]->value.shape());
            state.moments[i].v = Tensor<float>(params[i]->value.shape());
        }
    }
    if (state.moments.size() != params.size()) {
        throw ContractError("adam state does not match the parameter list");
    }
    for (const Parameter<float>* p : params) {
        if (p->trainable && !p->backwarded) {
            throw ContractError("adam_step on parameters that never saw a backward pass");
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.t));
    const float b1 = static_cast<float>(AdamState::beta1);
    const float b2 = static_cast<float>(AdamState::beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<float>& p = *params[i];
        if (!p.trainable) continue;
        Tensor<float>& m = state.moments[i].m;
        Tensor<float>& v = state.moments[i].v;
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const float g = p.grad[j];
            m[j] = b1 * m[j] + (1.0f - b1) * g;
            v[j] = b2 * v[j] + (1.0f - b2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + AdamState::epsilon));
        }
    }
}

// ---- early stopping -----------------------------------------------------------

bool EarlyStopper::update(double val_loss) {
    if (val_loss < best_ - min_delta_) {
        best_ = val_loss;
        since_ = 0;
    } else {
        ++since_;
    }
    return since_ > patience_;
}

// ---- shared loop pieces ----------------------------------------------------

namespace {

struct PassStats {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;

    void add(float mean_loss, std::uint32_t batch_correct, std::uint32_t batch_total) {
        loss += static_cast<double>(mean_loss) * batch_total;
        correct += batch_correct;
        total += batch_total;
    }
    void finish() {
        if (total > 0) {
            loss /= static_cast<double>(total);
            accuracy = static_cast<double>(correct) / static_cast<double>(total);
        }
    }
};

void check_frozen(const SplitModel<float>& model, std::uint64_t head_before, std::uint64_t tail_before,
                  bool head_may_change) {
    if (!head_may_change && model.head_digest() != head_before) {
        throw ClosedModelError("head parameters changed during adapter training");
    }
    if (model.tail_digest() != tail_before) {
        throw ClosedModelError("tail parameters changed during training");
    }
}

} // namespace

Tensor<float> head_latents(const SplitModel<float>& model, const Dataset& data, std::uint32_t batch_size) {
    Shape out_shape = model.latent_batch_shape(data.size());
    Tensor<float> out(out_shape);
    const std::size_t stride = shape_numel(model.latent_shape);
    const auto idx = iota_indices(data.size());
    for (const auto& batch : make_batches(idx, batch_size)) {
        Tensor<float> z = model.forward_head(data.gather(batch));
        std::copy_n(z.data(), z.numel(), out.data() + batch.front() * stride);
    }
    return out;
}

// ---- Algorithm 1 ----------------------------------------------------------

TrainReport train_adapter(const SplitModel<float>& model, Adapter<float>& adapter, const Dataset& train,
                          const Dataset& val, const TrainConfig& cfg, FeatureEndpoint* remote) {
    cfg.validate();
    if (cfg.mode != TrainMode::salt_residual && cfg.mode != TrainMode::salt_insertion) {
        throw ContractError("train_adapter requires a salt_* mode");
    }
    const auto want =
        cfg.mode == TrainMode::salt_residual ? AdapterVariant::residual : AdapterVariant::insertion;
    if (adapter.variant != want) throw ContractError("adapter variant does not match the configured mode");
    if (adapter.latent_shape != model.latent_shape) {
        throw DimensionError("adapter latent shape does not match the split model");
    }

    const auto started = Clock::now();
    const std::uint64_t head_before = model.head_digest();
    const std::uint64_t tail_before = model.tail_digest();

    std::unique_ptr<LocalEndpoint> local;
    FeatureEndpoint* endpoint = remote;
    if (!endpoint) {
        local = std::make_unique<LocalEndpoint>(model, cfg.forward_channel, cfg.seed);
        endpoint = local.get();
    }

    // The frozen head is deterministic, so H(x) is computed once per set.
    const Tensor<float> z_train = head_latents(model, train, cfg.batch_size);
    const Tensor<float> z_val = head_latents(model, val, cfg.batch_size);

    RngStream root(cfg.seed);
    RngStream shuffle_stream = root.fork("shuffle");
    RngStream grad_mask = root.fork("mask_s2c");
    RngStream grad_noise = root.fork("noise_s2c");

    const auto params = adapter.params();
    AdamState adam;

    auto run_batch = [&](const Tensor<float>& zb, const std::vector<std::uint32_t>& lb,
                         bool training) -> BatchReply {
        Graph<float> g;
        auto zin = g.input(zb);
        auto zp = adapter.apply(g, zin, training);
        BatchReply reply = endpoint->exchange(g.value(zp), lb);
        if (training) {
            Tensor<float> delta = apply_channel(cfg.gradient_channel, reply.delta,
                                                ChannelRng{&grad_mask, &grad_noise});
            zero_grads<float>(params);
            g.backward(zp, delta);
            adam_step(params, adam, cfg.learning_rate);
        }
        return reply;
    };

    const auto val_idx = iota_indices(val.size());
    const auto val_batches = make_batches(val_idx, cfg.batch_size);
    auto validation_pass = [&]() -> PassStats {
        PassStats stats;
        for (const auto& batch : val_batches) {
            BatchReply r = run_batch(gather_rows(z_val, batch), val.gather_labels(batch), false);
            stats.add(r.mean_loss, r.correct, r.total);
        }
        stats.finish();
        return stats;
    };

    TrainReport report;
    report.mode = cfg.mode;
    report.seed = cfg.seed;

    PassStats val0 = validation_pass();
    report.rows.push_back(EpochRow{0, std::numeric_limits<double>::quiet_NaN(), val0.loss, val0.accuracy,
                                   seconds_since(started)});

    EarlyStopper stopper(cfg.early_stop_patience, cfg.min_delta);
    stopper.update(val0.loss);

    auto train_idx = iota_indices(train.size());
    for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_indices(train_idx, shuffle_stream);
        PassStats train_stats;
        for (const auto& batch : make_batches(train_idx, cfg.batch_size)) {
            BatchReply r = run_batch(gather_rows(z_train, batch), train.gather_labels(batch), true);
            train_stats.add(r.mean_loss, r.correct, r.total);
        }
        train_stats.finish();
        PassStats val_stats = validation_pass();
        endpoint->epoch_end();

        report.epochs = epoch;
        report.rows.push_back(
            EpochRow{epoch, train_stats.loss, val_stats.loss, val_stats.accuracy, seconds_since(started)});

        const bool stop = stopper.update(val_stats.loss);
        if (cfg.epoch_hook) cfg.epoch_hook(epoch);
        check_frozen(model, head_before, tail_before, /*head_may_change=*/false);
        if (stop) {
            report.stopped_early = true;
            break;
        }
    }

    check_frozen(model, head_before, tail_before, /*head_may_change=*/false);
    report.best_val_loss = stopper.best_loss();
    report.wall_clock_s = seconds_since(started);
    return report;
}

// ---- baselines ---------------------------------------------------------------

TrainReport train_baseline(SplitModel<float>& model, const Dataset& train, const Dataset& val,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.mode != TrainMode::head_finetune && cfg.mode != TrainMode::head_retrain) {
        throw ContractError("train_baseline requires head_finetune or head_retrain");
    }

    const auto started = Clock::now();
    const std::uint64_t tail_before = model.tail_digest();

    RngStream root(cfg.seed);
    if (cfg.mode == TrainMode::head_retrain) {
        RngStream reinit = root.fork("init");
        std::vector<Parameter<float>*> ps;
        std::vector<Tensor<float>*> bs;
        for (std::size_t i = 0; i < model.boundary; ++i) {
            reinit_layer(*model.net.layers[i], InitMode::he_uniform, reinit);
            model.net.layers[i]->collect(ps, bs);
        }
        // fresh running stats alongside fresh weights
        for (std::size_t i = 0; i + 1 < bs.size(); i += 2) {
            bs[i]->fill(0.0f);
            bs[i + 1]->fill(1.0f);
        }
    }

    std::vector<Parameter<float>*> head_params;
    {
        std::vector<Tensor<float>*> bs;
        for (std::size_t i = 0; i < model.boundary; ++i) model.net.layers[i]->collect(head_params, bs);
    }
    if (head_params.empty()) throw ContractError("baseline training needs a non-empty head");
    for (Parameter<float>* p : head_params) p->trainable = true;

    RngStream shuffle_stream = root.fork("shuffle");
    RngStream mask_stream = root.fork("mask");
    RngStream noise_stream = root.fork("noise");

    AdamState adam;
    auto run_batch = [&](const Tensor<float>& xb, const std::vector<std::uint32_t>& lb, bool training)
        -> std::pair<float, std::uint32_t> {
        Graph<float> g;
        auto h = model.net.forward(g, g.input(xb), training, 0, model.boundary);
        auto zt = apply_channel_differentiable(cfg.forward_channel, g, h, ChannelRng{&mask_stream, &noise_stream});
        auto logits = model.net.forward(g, zt, false, model.boundary);
        auto loss = g.softmax_cross_entropy(logits, lb);
        if (training) {
            zero_grads<float>(std::span<Parameter<float>* const>(head_params));
            g.backward(loss);
            adam_step(head_params, adam, cfg.learning_rate);
        }
        return {g.value(loss)[0], count_correct(g.value(logits), lb)};
    };

    const auto val_idx = iota_indices(val.size());
    const auto val_batches = make_batches(val_idx, cfg.batch_size);
    auto validation_pass = [&]() -> PassStats {
        PassStats stats;
        for (const auto& batch : val_batches) {
            auto [loss, correct] = run_batch(val.gather(batch), val.gather_labels(batch), false);
            stats.add(loss, correct, static_cast<std::uint32_t>(batch.size()));
        }
        stats.finish();
        return stats;
    };

    TrainReport report;
    report.mode = cfg.mode;
    report.seed = cfg.seed;

    PassStats val0 = validation_pass();
    report.rows.push_back(EpochRow{0, std::numeric_limits<double>::quiet_NaN(), val0.loss, val0.accuracy,
                                   seconds_since(started)});
    EarlyStopper stopper(cfg.early_stop_patience, cfg.min_delta);
    stopper.update(val0.loss);

    auto train_idx = iota_indices(train.size());
    for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_indices(train_idx, shuffle_stream);
        PassStats train_stats;
        for (const auto& batch : make_batches(train_idx, cfg.batch_size)) {
            auto [loss, correct] = run_batch(train.gather(batch), train.gather_labels(batch), true);
            train_stats.add(loss, correct, static_cast<std::uint32_t>(batch.size()));
        }
        train_stats.finish();
        PassStats val_stats = validation_pass();

        report.epochs = epoch;
        report.rows.push_back(
            EpochRow{epoch, train_stats.loss, val_stats.loss, val_stats.accuracy, seconds_since(started)});

        const bool stop = stopper.update(val_stats.loss);
        if (cfg.epoch_hook) cfg.epoch_hook(epoch);
        if (model.tail_digest() != tail_before) {
            throw ClosedModelError("tail parameters changed during baseline training");
        }
        if (stop) {
            report.stopped_early = true;
            break;
        }
    }

    report.best_val_loss = stopper.best_loss();
    report.wall_clock_s = seconds_since(started);
    return report;
}

// ---- evaluation ---------------------------------------------------------------

EvalResult evaluate(const SplitModel<float>& model, const Adapter<float>* adapter, const Dataset& data,
                    const ChannelSpec& channel, RngStream rng, std::uint32_t batch_size) {
    RngStream mask_stream = rng.fork("mask");
    RngStream noise_stream = rng.fork("noise");
    PassStats stats;
    const auto idx = iota_indices(data.size());
    for (const auto& batch : make_batches(idx, batch_size)) {
        Graph<float> g;
        auto z = model.forward_head(g, g.input(data.gather(batch)));
        if (adapter) z = adapter->apply(g, z, /*training=*/false);
        auto zt = apply_channel_differentiable(channel, g, z, ChannelRng{&mask_stream, &noise_stream});
        auto logits = model.forward_tail(g, zt);
        const auto labels = data.gather_labels(batch);
        auto loss = g.softmax_cross_entropy(logits, labels);
        stats.add(g.value(loss)[0], count_correct(g.value(logits), labels),
                  static_cast<std::uint32_t>(batch.size()));
    }
    stats.finish();
    EvalResult out;
    out.accuracy = stats.accuracy;
    out.mean_loss = stats.loss;
    out.correct = stats.correct;
    out.total = stats.total;
    return out;
}

} // namespace salt
