// SPDX-License-Identifier: Apache-2.0
#include "salt/inversion.hpp"

#include "salt/channel.hpp"
#include "salt/errors.hpp"
#include "salt/trainer.hpp"

namespace salt {

nlohmann::json AttackConfig::to_json() const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["sigma_grid"] = sigma_grid;
    j["seed"] = seed;
    return j;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
    AttackConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("sigma_grid")) c.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<LayerSpec> decoder_specs(const Shape& latent_shape, const Shape& image_shape) {
    if (latent_shape.size() != 3 || image_shape.size() != 3) {
        throw ConstructionError("decoder needs [C,h,w] latent and image shapes");
    }
    const auto c = static_cast<std::uint32_t>(latent_shape[0]);
    const auto img_c = static_cast<std::uint32_t>(image_shape[0]);
    std::size_t h = latent_shape[1];
    std::vector<LayerSpec> specs;
    while (h < image_shape[1]) {
        specs.push_back(LayerSpec::conv2d(c, c, 3, 1, 1));
        specs.push_back(LayerSpec::relu_spec());
        specs.push_back(LayerSpec::upsample2());
        h *= 2;
    }
    if (h != image_shape[1]) {
        throw ConstructionError("latent grid does not reach the image resolution by 2x upsampling");
    }
    specs.push_back(LayerSpec::conv2d(c, c, 3, 1, 1));
    specs.push_back(LayerSpec::relu_spec());
    specs.push_back(LayerSpec::conv2d(c, img_c, 3, 1, 1));
    return specs;
}

Network<float> build_decoder(const Shape& latent_shape, const Shape& image_shape, std::uint64_t seed) {
    Shape in = latent_shape;
    in.insert(in.begin(), 1);
    auto net = build_network<float>(decoder_specs(latent_shape, image_shape), in,
                                    RngStream(seed, "attack-init"));
    const Shape out = net.output_shape();
    if (Shape(out.begin() + 1, out.end()) != image_shape) {
        throw ConstructionError("decoder output shape does not match the image shape");
    }
    return net;
}

namespace {

double decoder_mse_pass(const Network<float>& decoder, const Tensor<float>& latents, const Dataset& data,
                        std::uint32_t batch_size) {
    const std::size_t stride = latents.numel() / latents.dim(0);
    const std::size_t img_stride = data.sample_numel();
    double acc = 0.0;
    for (std::size_t at = 0; at < data.size(); at += batch_size) {
        const std::size_t n = std::min<std::size_t>(batch_size, data.size() - at);
        Shape zs = latents.shape();
        zs[0] = n;
        Tensor<float> zb(zs);
        std::copy_n(latents.data() + at * stride, n * stride, zb.data());
        Shape xs = data.images.shape();
        xs[0] = n;
        Tensor<float> xb(xs);
        std::copy_n(data.images.data() + at * img_stride, n * img_stride, xb.data());

        Graph<float> g;
        auto recon = decoder.forward(g, g.input(zb), /*training=*/false);
        auto loss = g.mse_loss(recon, xb);
        acc += static_cast<double>(g.value(loss)[0]) * static_cast<double>(n);
    }
    return acc / static_cast<double>(data.size());
}

} // namespace

InverterStats train_inverter(const SplitModel<float>& model, Network<float>& decoder, const Dataset& surrogate,
                             const AttackConfig& cfg) {
    const std::uint64_t head_before = model.head_digest();

    // clean features only; the attacker never sees the adapter
    const Tensor<float> latents = head_latents(model, surrogate, cfg.batch_size);
    const std::size_t stride = shape_numel(model.latent_shape);
    const std::size_t img_stride = surrogate.sample_numel();

    InverterStats stats;
    stats.initial_mse = decoder_mse_pass(decoder, latents, surrogate, cfg.batch_size);

    auto params = decoder.params();
    AdamState adam;
    RngStream shuffle_stream = RngStream(cfg.seed, "attack").fork("shuffle");

    std::vector<std::size_t> order(surrogate.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(order, shuffle_stream);
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - at);
            Shape zs = model.latent_batch_shape(n);
            Tensor<float> zb(zs);
            Shape xs = surrogate.images.shape();
            xs[0] = n;
            Tensor<float> xb(xs);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = order[at + i];
                std::copy_n(latents.data() + src * stride, stride, zb.data() + i * stride);
                std::copy_n(surrogate.images.data() + src * img_stride, img_stride, xb.data() + i * img_stride);
            }
            Graph<float> g;
            auto recon = decoder.forward(g, g.input(zb), /*training=*/true);
            auto loss = g.mse_loss(recon, xb);
            zero_grads<float>(std::span<Parameter<float>* const>(params));
            g.backward(loss);
            adam_step(params, adam, cfg.learning_rate);
        }
        stats.epochs = epoch;
    }

    stats.final_mse = decoder_mse_pass(decoder, latents, surrogate, cfg.batch_size);
    if (model.head_digest() != head_before) {
        throw ClosedModelError("head parameters changed during attack training");
    }
    return stats;
}

std::vector<AttackPoint> evaluate_attack(const Network<float>& decoder, const SplitModel<float>& model,
                                         const Adapter<float>* adapter, const Dataset& test,
                                         std::span<const double> sigma_grid, const RngStream& rng,
                                         std::uint32_t batch_size) {
    for (double s : sigma_grid) {
        if (s < 0.0) throw ConfigError("attack sigma grid must be nonnegative");
    }

    std::vector<AttackPoint> points;
    points.reserve(sigma_grid.size());
    for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
        const double sigma = sigma_grid[si];
        RngStream noise_stream = rng.fork("sigma" + std::to_string(si)).fork("noise");
        const ChannelSpec chan = ChannelSpec::gaussian_noise(sigma);

        double ssim_acc = 0.0, mse_acc = 0.0;
        std::size_t count = 0;
        const std::size_t img_stride = test.sample_numel();
        for (std::size_t at = 0; at < test.size(); at += batch_size) {
            const std::size_t n = std::min<std::size_t>(batch_size, test.size() - at);
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = at + i;
            Tensor<float> xb = test.gather(idx);

            Graph<float> g;
            auto z = model.forward_head(g, g.input(xb));
            if (adapter) z = adapter->apply(g, z, /*training=*/false);
            // what the adversary observes: the transmitted feature plus noise
            Tensor<float> observed = apply_channel(chan, g.value(z), noise_stream);
            Graph<float> gd;
            auto recon_var = decoder.forward(gd, gd.input(observed), /*training=*/false);
            const Tensor<float>& recon = gd.value(recon_var);

            Shape sample = test.sample_shape();
            for (std::size_t i = 0; i < n; ++i) {
                Tensor<float> r(sample);
                Tensor<float> o(sample);
                std::copy_n(recon.data() + i * img_stride, img_stride, r.data());
                std::copy_n(xb.data() + i * img_stride, img_stride, o.data());
                ssim_acc += ssim(r, o);
                mse_acc += mse(r, o);
                ++count;
            }
        }
        points.push_back(AttackPoint{sigma, ssim_acc / static_cast<double>(count),
                                     mse_acc / static_cast<double>(count)});
    }
    return points;
}

} // namespace salt
