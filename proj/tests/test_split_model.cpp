// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>

#include "salt/split.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::random_tensor;

namespace {

Tensor<float> run_backbone(const Network<float>& net, const Tensor<float>& x) {
    Graph<float> g;
    auto out = net.forward(g, g.input(x), /*training=*/false);
    return g.value(out);
}

} // namespace

TEST_SUITE("split-model") {

TEST_CASE("backbone construction is seed-deterministic") {
    auto a = build_desk_backbone<float>(8, 42);
    auto b = build_desk_backbone<float>(8, 42);
    auto c = build_desk_backbone<float>(8, 43);
    CHECK(param_digest(a) == param_digest(b));
    CHECK(param_digest(a) != param_digest(c));
}

TEST_CASE("desk backbone maps [N,1,16,16] to [N,K] logits") {
    auto net = build_desk_backbone<float>(8, 1);
    RngStream rng(2, "x");
    auto x = random_tensor<float>({5, 1, 16, 16}, rng, 0.0, 1.0);
    auto out = run_backbone(net, x);
    CHECK(out.shape() == Shape{5, 8});
}

TEST_CASE("inconsistent specs are rejected at construction") {
    std::vector<LayerSpec> bad = {LayerSpec::conv2d(3, 8, 3, 1, 1)}; // input has 1 channel
    CHECK_THROWS_AS(build_backbone<float>(bad, {1, 1, 16, 16}, 0), ConstructionError);
}

TEST_CASE("split partition identity is bit-exact at every desk boundary") {
    RngStream rng(7, "x");
    auto x = random_tensor<float>({3, 1, 16, 16}, rng, 0.0, 1.0);
    auto reference = run_backbone(build_desk_backbone<float>(8, 42), x);

    for (const char* point : kDeskSplitPoints) {
        auto model = split_at(build_desk_backbone<float>(8, 42), point);
        auto z = model.forward_head(x);
        auto logits = model.forward_tail(z);
        CHECK(logits.bit_equal(reference));
    }
}

TEST_CASE("degenerate split before all layers passes the input through") {
    auto model = split_at(build_desk_backbone<float>(8, 42), "input");
    RngStream rng(9, "x");
    auto x = random_tensor<float>({2, 1, 16, 16}, rng);
    auto z = model.forward_head(x);
    CHECK(z.bit_equal(x));
}

TEST_CASE("unknown split point is a configuration error") {
    CHECK_THROWS_AS(split_at(build_desk_backbone<float>(8, 42), "after_block9"), ConfigError);
}

TEST_CASE("latent shapes match hand-computed layer arithmetic") {
    // stem keeps 16x16 at 8 channels; each pooled block halves the grid
    const std::map<std::string, Shape> expected = {
        {"before_block1", {8, 16, 16}},
        {"after_block1", {16, 8, 8}},
        {"after_block2", {32, 4, 4}},
        {"after_block3", {32, 4, 4}},
    };
    for (const auto& [name, shape] : expected) {
        auto model = split_at(build_desk_backbone<float>(8, 42), name);
        CHECK(model.latent_shape == shape);
    }
}

TEST_CASE("all parameters are frozen after the split") {
    auto model = split_at(build_desk_backbone<float>(8, 42), "after_block2");
    for (const Parameter<float>* p : model.net.params()) CHECK_FALSE(p->trainable);
}

TEST_CASE("head digest is stable across repeated forwards") {
    auto model = split_at(build_desk_backbone<float>(8, 42), "after_block1");
    RngStream rng(3, "x");
    auto x = random_tensor<float>({2, 1, 16, 16}, rng);
    const auto digest = model.head_digest();
    Tensor<float> z0 = model.forward_head(x);
    for (int i = 0; i < 100; ++i) {
        auto z = model.forward_head(x);
        if (i == 99) CHECK(z.bit_equal(z0)); // eval-mode BN keeps forwards bit-identical
    }
    CHECK(model.head_digest() == digest);
}

TEST_CASE("param digest reacts to a single element change") {
    auto net = build_desk_backbone<float>(8, 42);
    const auto digest = param_digest(net);
    auto params = net.params();
    params[4]->value[0] += 1e-3f;
    CHECK(param_digest(net) != digest);
}

TEST_CASE("zero-initialized residual adapter is the identity") {
    auto model = split_at(build_desk_backbone<float>(8, 42), "after_block2");
    auto adapter = make_adapter<float>(AdapterVariant::residual, model.latent_shape, RngStream(5, "adapter"));
    RngStream rng(13, "x");
    auto x = random_tensor<float>({4, 1, 16, 16}, rng, 0.0, 1.0);
    auto z = model.forward_head(x);
    auto zp = adapter.apply(z);
    CHECK(zp.bit_equal(z));

    // whole-pipeline logits equal the unsplit backbone bit-for-bit
    auto logits = model.forward_tail(zp);
    auto reference = run_backbone(build_desk_backbone<float>(8, 42), x);
    CHECK(logits.bit_equal(reference));
}

TEST_CASE("both adapter variants preserve the latent shape at every split point") {
    RngStream rng(21, "x");
    auto x = random_tensor<float>({2, 1, 16, 16}, rng, 0.0, 1.0);
    for (const char* point : kDeskSplitPoints) {
        auto model = split_at(build_desk_backbone<float>(8, 42), point);
        auto z = model.forward_head(x);
        for (auto variant : {AdapterVariant::residual, AdapterVariant::insertion}) {
            auto adapter = make_adapter<float>(variant, model.latent_shape, RngStream(5, "adapter"));
            auto zp = adapter.apply(z);
            CHECK(zp.shape() == z.shape());
        }
    }
}

TEST_CASE("adapter rejects mismatched latent shapes") {
    auto model = split_at(build_desk_backbone<float>(8, 42), "after_block2");
    auto adapter = make_adapter<float>(AdapterVariant::residual, model.latent_shape, RngStream(5, "adapter"));
    CHECK_THROWS_AS(adapter.apply(Tensor<float>({2, 16, 8, 8})), DimensionError);
}

TEST_CASE("network serialization roundtrip preserves logits and digest") {
    auto net = build_desk_backbone<float>(8, 77);
    // pollute running stats so buffers are exercised too
    RngStream rng(1, "x");
    auto x = random_tensor<float>({8, 1, 16, 16}, rng, 0.0, 1.0);
    {
        Graph<float> g;
        net.forward(g, g.input(x), /*training=*/true);
    }
    const auto digest = param_digest(net);
    auto logits = run_backbone(net, x);

    auto bytes = serialize_network(net);
    auto bytes2 = serialize_network(net);
    CHECK(bytes == bytes2);

    const std::string path = "roundtrip.smdl";
    save_network(net, path);
    auto loaded = load_network(path);
    std::remove(path.c_str());

    CHECK(param_digest(loaded) == digest);
    CHECK(run_backbone(loaded, x).bit_equal(logits));
    CHECK(loaded.boundaries == net.boundaries);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(deserialize_network(truncated), IoError);
}

TEST_CASE("adapter serialization roundtrip") {
    auto adapter = make_adapter<float>(AdapterVariant::insertion, {32, 4, 4}, RngStream(9, "adapter"));
    const std::string path = "roundtrip.sadp";
    save_adapter(adapter, path);
    auto loaded = load_adapter(path);
    std::remove(path.c_str());
    CHECK(loaded.variant == AdapterVariant::insertion);
    CHECK(loaded.latent_shape == Shape{32, 4, 4});
    CHECK(loaded.digest() == adapter.digest());
    for (const Parameter<float>* p : loaded.params()) CHECK(p->trainable);
}

} // TEST_SUITE
