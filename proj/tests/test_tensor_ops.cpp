// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "salt/graph.hpp"
#include "testing.hpp"

using namespace salt;
using salt::testing::random_tensor;

namespace {

template <typename T>
Tensor<T> run_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding) {
    Graph<T> g;
    auto out = g.conv2d(g.input(x), g.input(w), g.input(b), stride, padding);
    return g.value(out);
}

} // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS_AS(Tensor<float>({2, 0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), DimensionError);
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    RngStream rng(11, "conv-id");
    auto x = random_tensor<float>({2, 3, 5, 5}, rng);
    Tensor<float> w({3, 3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) w[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0f; // center tap only
    Tensor<float> b({3});
    auto out = run_conv(x, w, b, 1, 1);
    REQUIRE(out.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("conv2d 1x1 scaling") {
    auto x = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
    auto w = Tensor<float>::full({1, 1, 1, 1}, 2.0f);
    Tensor<float> b({1});
    auto out = run_conv(x, w, b, 1, 0);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 2.0f);
}

TEST_CASE("conv2d rejects channel mismatch and bad geometry") {
    Graph<float> g;
    auto x = g.input(Tensor<float>({1, 2, 4, 4}));
    auto w = g.input(Tensor<float>({3, 5, 3, 3}));
    auto b = g.input(Tensor<float>({3}));
    CHECK_THROWS_AS(g.conv2d(x, w, b, 1, 1), DimensionError);

    Graph<float> g2;
    auto x2 = g2.input(Tensor<float>({1, 1, 6, 6}));
    auto w2 = g2.input(Tensor<float>({1, 1, 3, 3}));
    auto b2 = g2.input(Tensor<float>({1}));
    CHECK_THROWS_AS(g2.conv2d(x2, w2, b2, 2, 0), DimensionError); // (6-3) not a multiple of 2
    auto w5 = g2.input(Tensor<float>({1, 1, 5, 5}));
    CHECK_THROWS_AS(g2.conv2d(x2, w5, b2, 1, 2), DimensionError); // kernel must be 1 or 3
}

TEST_CASE("relu forward and dead-region backward") {
    Graph<float> g;
    auto x = g.input(Tensor<float>({3}, {-1.0f, 0.0f, 2.5f}));
    auto y = g.relu(x);
    CHECK(g.value(y)[0] == 0.0f);
    CHECK(g.value(y)[1] == 0.0f);
    CHECK(g.value(y)[2] == 2.5f);

    Graph<float> g2;
    auto xn = g2.input(Tensor<float>({4}, {-1.f, -2.f, -0.5f, -3.f}));
    auto yn = g2.relu(xn);
    auto s = g2.sum(yn);
    g2.backward(s);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(g2.value(yn)[i] == 0.0f);
        CHECK(g2.grad(xn)[i] == 0.0f);
    }
}

TEST_CASE("maxpool window maximum and tie routing") {
    Graph<float> g;
    auto x = g.input(Tensor<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f}));
    auto y = g.maxpool2d(x, 2, 2);
    CHECK(g.value(y).numel() == 1);
    CHECK(g.value(y)[0] == 4.0f);

    Graph<float> g2;
    auto xc = g2.input(Tensor<float>::full({1, 1, 4, 4}, 7.0f));
    auto yc = g2.maxpool2d(xc, 2, 2);
    auto s = g2.sum(yc);
    g2.backward(s);
    // ties go to the lowest flat index of each window
    const Tensor<float>& dx = g2.grad(xc);
    for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t w = 0; w < 4; ++w) {
            const float expect = (h % 2 == 0 && w % 2 == 0) ? 1.0f : 0.0f;
            CHECK(dx[h * 4 + w] == expect);
        }
    }

    Graph<float> g3;
    auto xb = g3.input(Tensor<float>({1, 1, 5, 5}));
    CHECK_THROWS_AS(g3.maxpool2d(xb, 2, 2), DimensionError);
}

TEST_CASE("linear identity and bias-only") {
    Graph<float> g;
    RngStream rng(3, "linear");
    auto x = random_tensor<float>({2, 4}, rng);
    Tensor<float> eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0f;
    auto y = g.linear(g.input(x), g.input(eye), g.input(Tensor<float>({4})));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g.value(y)[i] == x[i]);

    Graph<float> g2;
    Tensor<float> bias({3}, {0.5f, -1.f, 2.f});
    auto y2 = g2.linear(g2.input(Tensor<float>({2, 4})), g2.input(Tensor<float>({3, 4})), g2.input(bias));
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t o = 0; o < 3; ++o) CHECK(g2.value(y2)[n * 3 + o] == bias[o]);
    }

    Graph<float> g3;
    CHECK_THROWS_AS(
        g3.linear(g3.input(Tensor<float>({2, 4})), g3.input(Tensor<float>({3, 5})), g3.input(Tensor<float>({3}))),
        DimensionError);
}

TEST_CASE("softmax cross entropy uniform and stability") {
    Graph<double> g;
    auto logits = g.input(Tensor<double>::full({3, 4}, 0.7));
    std::vector<std::uint32_t> labels = {0, 3, 2};
    auto loss = g.softmax_cross_entropy(logits, labels);
    CHECK(g.value(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Graph<double> g2;
    auto extreme = g2.input(Tensor<double>({1, 2}, {1000.0, -1000.0}));
    std::vector<std::uint32_t> l2 = {0};
    auto loss2 = g2.softmax_cross_entropy(extreme, l2);
    CHECK(std::isfinite(g2.value(loss2)[0]));
    CHECK(g2.value(loss2)[0] == doctest::Approx(0.0).epsilon(1e-12));

    Graph<double> g3;
    auto lg = g3.input(Tensor<double>({1, 3}));
    std::vector<std::uint32_t> bad = {3};
    CHECK_THROWS_AS(g3.softmax_cross_entropy(lg, bad), LabelError);
}

TEST_CASE("batchnorm train normalizes and eval uses running stats") {
    RngStream rng(5, "bn");
    auto x = random_tensor<double>({4, 3, 4, 4}, rng, -2.0, 3.0);
    Tensor<double> gamma = Tensor<double>::full({3}, 1.0);
    Tensor<double> beta({3});
    Tensor<double> rmean({3});
    Tensor<double> rvar = Tensor<double>::full({3}, 1.0);

    Graph<double> g;
    auto y = g.batchnorm2d(g.input(x), g.input(gamma), g.input(beta), rmean, rvar, true, 0.1, 1e-5);
    const Tensor<double>& out = g.value(y);
    const std::size_t m = 4 * 4 * 4;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            for (std::size_t i = 0; i < 16; ++i) mean += out[out.offset4(n, c, i / 4, i % 4)];
        }
        mean /= m;
        for (std::size_t n = 0; n < 4; ++n) {
            for (std::size_t i = 0; i < 16; ++i) {
                const double d = out[out.offset4(n, c, i / 4, i % 4)] - mean;
                var += d * d;
            }
        }
        var /= m;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(var - 1.0) < 1e-3);
        CHECK(rmean[c] != 0.0); // running stats moved
    }

    // eval with identity running stats: output is input / sqrt(1 + eps)
    Tensor<double> rm0({3});
    Tensor<double> rv1 = Tensor<double>::full({3}, 1.0);
    Graph<double> ge;
    auto ye = ge.batchnorm2d(ge.input(x), ge.input(gamma), ge.input(beta), rm0, rv1, false, 0.1, 1e-5);
    const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(ge.value(ye)[i] == doctest::Approx(x[i] * scale).epsilon(1e-12));
    }

    Graph<double> gd;
    auto deg = gd.input(Tensor<double>({1, 3, 1, 1}));
    CHECK_THROWS_AS(gd.batchnorm2d(deg, gd.input(gamma), gd.input(beta), rm0, rv1, true, 0.1, 1e-5),
                    DimensionError);
}

TEST_CASE("upsample nearest doubles resolution") {
    Graph<float> g;
    auto x = g.input(Tensor<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f}));
    auto y = g.upsample_nearest2(x);
    const Tensor<float>& out = g.value(y);
    REQUIRE(out.shape() == Shape{1, 1, 4, 4});
    CHECK(out[0] == 1.f);
    CHECK(out[1] == 1.f);
    CHECK(out[5] == 1.f);
    CHECK(out[2] == 2.f);
    CHECK(out[15] == 4.f);

    auto s = g.sum(y);
    g.backward(s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad(x)[i] == 4.0f);
}

TEST_CASE("backward sum rule, accumulation and zero_grad") {
    Parameter<double> p(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));

    Graph<double> g;
    auto loss = g.sum(g.use(p));
    g.backward(loss);
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.grad[i] == 1.0);

    // second backward without zeroing doubles the grads exactly
    g.backward(loss);
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.grad[i] == 2.0);

    // zero_grad then a fresh graph reproduces the first-run grads
    p.zero_grad();
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.grad[i] == 0.0);
    Graph<double> g2;
    g2.backward(g2.sum(g2.use(p)));
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.grad[i] == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Graph<double> g;
    auto x = g.input(Tensor<double>({2, 2}));
    auto y = g.relu(x);
    CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("forward pass is deterministic") {
    RngStream rng(17, "det");
    auto x = random_tensor<float>({2, 2, 6, 6}, rng);
    auto w = random_tensor<float>({4, 2, 3, 3}, rng);
    auto b = random_tensor<float>({4}, rng);
    auto a = run_conv(x, w, b, 1, 1);
    auto c = run_conv(x, w, b, 1, 1);
    CHECK(a.bit_equal(c));
}

} // TEST_SUITE
