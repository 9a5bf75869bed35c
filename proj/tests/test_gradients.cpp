// SPDX-License-Identifier: Apache-2.0
// Finite-difference oracles for every differentiable primitive, run at f64.
#include <doctest.h>

#include <functional>

#include "salt/channel.hpp"
#include "salt/graph.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::fd_check;
using salt::testing::random_tensor;

namespace {

// Scalarizes an op output with fixed random weights so every output element
// contributes to the loss.
struct OpCheck {
    using Builder = std::function<Graph<double>::Var(Graph<double>&, std::vector<Graph<double>::Var>&)>;

    std::vector<Tensor<double>> inputs;
    Tensor<double> weights; // set after first forward
    Builder build;

    double loss() {
        Graph<double> g;
        std::vector<Graph<double>::Var> vars;
        for (auto& t : inputs) vars.push_back(g.input(t));
        auto out = build(g, vars);
        if (weights.numel() == 0) {
            RngStream wrng(99, "loss-weights");
            weights = random_tensor<double>(g.value(out).shape(), wrng, 0.1, 1.0);
        }
        if (g.value(out).numel() == 1) return g.value(out)[0];
        return g.value(g.sum(g.mul_const(out, weights)))[0];
    }

    // FD-check gradients of every input against the analytic backward.
    void run(double tol = 1e-6) {
        loss(); // fix the weights
        Graph<double> g;
        std::vector<Graph<double>::Var> vars;
        for (auto& t : inputs) vars.push_back(g.input(t));
        auto out = build(g, vars);
        auto scalar = g.value(out).numel() == 1 ? out : g.sum(g.mul_const(out, weights));
        g.backward(scalar);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            std::vector<double> analytic(g.grad(vars[i]).vec());
            const bool ok = fd_check(inputs[i].data(), analytic.data(), inputs[i].numel(),
                                     [this] { return loss(); }, tol);
            CHECK_MESSAGE(ok, "input ", i, " failed the finite-difference check");
        }
    }
};

} // namespace

TEST_SUITE("gradient-oracle") {

TEST_CASE("conv2d gradient vs finite differences") {
    RngStream rng(101, "conv-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 3, 5, 5}, rng), random_tensor<double>({4, 3, 3, 3}, rng),
                  random_tensor<double>({4}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.conv2d(v[0], v[1], v[2], 1, 1);
    };
    chk.run();
}

TEST_CASE("conv2d strided gradient vs finite differences") {
    RngStream rng(102, "conv-grad-s2");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({1, 2, 5, 5}, rng), random_tensor<double>({3, 2, 3, 3}, rng),
                  random_tensor<double>({3}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.conv2d(v[0], v[1], v[2], 2, 1);
    };
    chk.run();
}

TEST_CASE("conv2d 1x1 gradient vs finite differences") {
    RngStream rng(103, "conv-grad-1x1");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 4, 3, 3}, rng), random_tensor<double>({2, 4, 1, 1}, rng),
                  random_tensor<double>({2}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.conv2d(v[0], v[1], v[2], 1, 0);
    };
    chk.run();
}

TEST_CASE("batchnorm train-mode gradient vs finite differences") {
    RngStream rng(104, "bn-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({3, 2, 3, 3}, rng, -2.0, 2.0), random_tensor<double>({2}, rng, 0.5, 1.5),
                  random_tensor<double>({2}, rng, -0.5, 0.5)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        static thread_local Tensor<double> rmean({2});
        static thread_local Tensor<double> rvar = Tensor<double>::full({2}, 1.0);
        return g.batchnorm2d(v[0], v[1], v[2], rmean, rvar, true, 0.1, 1e-5);
    };
    chk.run();
}

TEST_CASE("batchnorm eval-mode gradient vs finite differences") {
    RngStream rng(105, "bn-eval-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 3, 3, 3}, rng), random_tensor<double>({3}, rng, 0.5, 1.5),
                  random_tensor<double>({3}, rng, -0.5, 0.5)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        static thread_local Tensor<double> rmean({3}, {0.2, -0.1, 0.4});
        static thread_local Tensor<double> rvar({3}, {1.3, 0.8, 1.1});
        return g.batchnorm2d(v[0], v[1], v[2], rmean, rvar, false, 0.1, 1e-5);
    };
    chk.run();
}

TEST_CASE("relu gradient away from the kink") {
    RngStream rng(106, "relu-grad");
    OpCheck chk;
    Tensor<double> x = random_tensor<double>({4, 7}, rng, -1.0, 1.0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (std::fabs(x[i]) < 1e-3) x[i] = 0.1; // keep clear of the kink
    }
    chk.inputs = {x};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) { return g.relu(v[0]); };
    chk.run();
}

TEST_CASE("maxpool gradient vs finite differences") {
    RngStream rng(107, "pool-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 2, 4, 4}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) { return g.maxpool2d(v[0], 2, 2); };
    chk.run();
}

TEST_CASE("linear gradient vs finite differences") {
    RngStream rng(108, "linear-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({3, 5}, rng), random_tensor<double>({4, 5}, rng),
                  random_tensor<double>({4}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) { return g.linear(v[0], v[1], v[2]); };
    chk.run();
}

TEST_CASE("softmax cross entropy gradient equals (softmax - onehot)/N") {
    RngStream rng(109, "ce-grad");
    Tensor<double> logits = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
    std::vector<std::uint32_t> labels = {1, 0, 5, 3};

    OpCheck chk;
    chk.inputs = {logits};
    chk.build = [labels](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.softmax_cross_entropy(v[0], labels);
    };
    chk.run();

    // closed form
    Graph<double> g;
    auto lv = g.input(logits);
    g.backward(g.softmax_cross_entropy(lv, labels));
    for (std::size_t n = 0; n < 4; ++n) {
        double mx = logits[n * 6];
        for (std::size_t j = 1; j < 6; ++j) mx = std::max(mx, logits[n * 6 + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += std::exp(logits[n * 6 + j] - mx);
        for (std::size_t j = 0; j < 6; ++j) {
            const double soft = std::exp(logits[n * 6 + j] - mx) / s;
            const double expect = (soft - (labels[n] == j ? 1.0 : 0.0)) / 4.0;
            CHECK(g.grad(lv)[n * 6 + j] == doctest::Approx(expect).epsilon(1e-10));
        }
    }
}

TEST_CASE("mse gradient vs finite differences") {
    RngStream rng(110, "mse-grad");
    Tensor<double> target = random_tensor<double>({2, 3, 4, 4}, rng);
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 3, 4, 4}, rng)};
    chk.build = [target](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.mse_loss(v[0], target);
    };
    chk.run();
}

TEST_CASE("upsample gradient vs finite differences") {
    RngStream rng(111, "up-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 3, 3, 3}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) { return g.upsample_nearest2(v[0]); };
    chk.run();
}

TEST_CASE("residual add and flatten gradients") {
    RngStream rng(112, "mix-grad");
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 2, 3, 3}, rng), random_tensor<double>({2, 2, 3, 3}, rng)};
    chk.build = [](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.flatten(g.add(v[0], v[1]));
    };
    chk.run();
}

TEST_CASE("frozen channel ops gradient vs finite differences") {
    RngStream rng(113, "chan-grad");
    RngStream draw(113, "chan-draw");
    Tensor<double> mask = sample_mask<double>(0.3, {2, 3, 3, 3}, draw);
    Tensor<double> noise = sample_noise<double>(0.5, {2, 3, 3, 3}, draw);
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 3, 3, 3}, rng)};
    chk.build = [mask, noise](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        return g.add_const(g.mul_const(v[0], mask), noise);
    };
    chk.run();
}

TEST_CASE("composite pipeline gradient vs finite differences") {
    // conv -> bn(train) -> relu -> maxpool -> flatten -> linear -> cross-entropy
    RngStream rng(114, "pipe-grad");
    std::vector<std::uint32_t> labels = {0, 2};
    OpCheck chk;
    chk.inputs = {random_tensor<double>({2, 2, 4, 4}, rng),          // x
                  random_tensor<double>({3, 2, 3, 3}, rng),          // conv w
                  random_tensor<double>({3}, rng),                   // conv b
                  random_tensor<double>({3}, rng, 0.5, 1.5),         // gamma
                  random_tensor<double>({3}, rng, -0.3, 0.3),        // beta
                  random_tensor<double>({4, 12}, rng),               // linear w
                  random_tensor<double>({4}, rng)};                  // linear b
    chk.build = [labels](Graph<double>& g, std::vector<Graph<double>::Var>& v) {
        static thread_local Tensor<double> rmean({3});
        static thread_local Tensor<double> rvar = Tensor<double>::full({3}, 1.0);
        auto h = g.conv2d(v[0], v[1], v[2], 1, 1);
        h = g.batchnorm2d(h, v[3], v[4], rmean, rvar, true, 0.1, 1e-5);
        h = g.relu(h);
        h = g.maxpool2d(h, 2, 2);
        h = g.flatten(h);
        h = g.linear(h, v[5], v[6]);
        return g.softmax_cross_entropy(h, labels);
    };
    chk.run(1e-5);
}

} // TEST_SUITE
