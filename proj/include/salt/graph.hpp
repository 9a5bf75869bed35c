// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "salt/tensor.hpp"

namespace salt {

/// A learnable (or frozen) tensor. Optimizers must never touch the value
/// when trainable is false; backward still fills grad so that gradients
/// can flow *through* frozen layers.
template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
    bool backwarded = false; // some backward pass has accumulated into grad

    Parameter() = default;
    explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(T(0)); }
};

/// Reverse-mode tape. Operations append nodes in execution order; backward
/// replays the tape in exact reverse order, accumulating into node grads
/// and, for parameter leaves, into Parameter::grad.
///
/// A graph and its tensors stay on one thread for the duration of a
/// forward/backward pass; independent graphs may run concurrently.
template <typename T>
class Graph {
public:
    struct Var {
        std::size_t idx = npos;
        bool valid() const { return idx != npos; }
        static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ----------------------------------------------------------

    /// Plain input leaf; its gradient is readable after backward.
    Var input(Tensor<T> value);

    /// Parameter leaf. The caller keeps ownership; backward accumulates
    /// into p.grad regardless of p.trainable.
    Var use(Parameter<T>& p);

    // ---- primitives ------------------------------------------------------

    /// Cross-correlation, NCHW. kernel must be 1 or 3, square.
    Var conv2d(Var x, Var weight, Var bias, int stride, int padding);

    /// Batch normalization over (N,H,W) per channel. Train mode normalizes
    /// with batch statistics (gradients flow through them) and updates the
    /// caller-owned running stats in place; eval mode uses running stats.
    Var batchnorm2d(Var x, Var gamma, Var beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var,
                    bool training, T momentum, T epsilon);

    Var relu(Var x);

    /// Windowed max over HxW. Ties route the gradient to the lowest flat index.
    Var maxpool2d(Var x, int k, int stride);

    /// y = x * W^T + b with x:[N,Din], W:[Dout,Din], b:[Dout].
    Var linear(Var x, Var weight, Var bias);

    /// [N, ...] -> [N, prod(...)].
    Var flatten(Var x);

    /// Elementwise sum of two same-shaped vars (residual connection).
    Var add(Var a, Var b);

    /// Elementwise product with a constant tensor (backward scales by it).
    Var mul_const(Var x, const Tensor<T>& m);

    /// Elementwise addition of a constant tensor (backward is identity).
    Var add_const(Var x, const Tensor<T>& c);

    /// Nearest-neighbour 2x spatial upsample of an NCHW tensor.
    Var upsample_nearest2(Var x);

    /// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
    Var softmax_cross_entropy(Var logits, std::span<const std::uint32_t> labels);

    /// Mean squared error against a constant target.
    Var mse_loss(Var pred, const Tensor<T>& target);

    /// Scalar sum of all elements (test utility).
    Var sum(Var x);

    // ---- access / backward ----------------------------------------------

    const Tensor<T>& value(Var v) const { return nodes_[v.idx].value; }
    const Tensor<T>& grad(Var v) const { return nodes_[v.idx].grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Backward from a scalar loss node (seed gradient 1). Node grads are
    /// recomputed from scratch; parameter grads accumulate across calls.
    void backward(Var loss);

    /// Backward from an arbitrary node with an explicit seed gradient,
    /// e.g. the gradient tensor received from the server side.
    void backward(Var node, const Tensor<T>& seed);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Graph&)> backprop; // empty for leaves without params
    };

    Var emplace(Tensor<T> value, std::function<void(Graph&)> backprop);
    void run_backward(std::size_t from);
    Tensor<T>& grad_mut(Var v) { return nodes_[v.idx].grad; }
    const Tensor<T>& val(Var v) const { return nodes_[v.idx].value; }

    std::vector<Node> nodes_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

/// Zero every parameter gradient in the range.
template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
    for (Parameter<T>* p : params) p->zero_grad();
}

} // namespace salt
