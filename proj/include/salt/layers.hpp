// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "salt/graph.hpp"
#include "salt/rng.hpp"
#include "salt/tensor.hpp"

namespace salt {

enum class LayerKind : std::uint8_t {
    conv = 1,
    batchnorm = 2,
    relu = 3,
    maxpool = 4,
    flatten = 5,
    linear = 6,
    upsample = 7, // nearest-neighbour x2, used by inversion decoders
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::uint32_t in_ch = 0;
    std::uint32_t out_ch = 0;
    std::uint32_t kernel = 0;
    std::uint32_t stride = 0;
    std::uint32_t padding = 0;
    std::uint32_t in_features = 0;
    std::uint32_t out_features = 0;

    static LayerSpec conv2d(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t kernel,
                            std::uint32_t stride = 1, std::uint32_t padding = 0);
    static LayerSpec batchnorm(std::uint32_t channels);
    static LayerSpec relu_spec();
    static LayerSpec maxpool(std::uint32_t kernel = 2, std::uint32_t stride = 2);
    static LayerSpec flatten_spec();
    static LayerSpec linear(std::uint32_t in_features, std::uint32_t out_features);
    static LayerSpec upsample2();

    bool operator==(const LayerSpec&) const = default;
};

/// Weight initialization policy for a fresh layer.
enum class InitMode {
    he_uniform,   // conv/linear weights He-uniform, biases zero
    zeros,        // weights and biases all zero (residual adapter tail)
    identity,     // 1x1 conv identity kernel (insertion adapter tail)
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual const LayerSpec& spec() const = 0;
    virtual typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool training) = 0;
    virtual Shape output_shape(const Shape& in) const = 0;
    /// Parameters (optimizable) and buffers (running stats) in declaration order.
    virtual void collect(std::vector<Parameter<T>*>& params, std::vector<Tensor<T>*>& buffers) = 0;
};

/// A plain layer sequence. Backbones, adapters and attack decoders are all
/// Networks; split points are named boundary indices into the sequence.
template <typename T>
struct Network {
    std::vector<std::unique_ptr<Layer<T>>> layers;
    Shape input_shape;
    std::map<std::string, std::size_t> boundaries;

    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool training,
                                   std::size_t begin = 0, std::size_t end = Graph<T>::Var::npos) const;

    std::vector<Parameter<T>*> params() const;
    std::vector<Tensor<T>*> buffers() const;
    std::vector<LayerSpec> specs() const;
    Shape shape_at(std::size_t boundary) const; // activation shape entering layers[boundary]
    Shape output_shape() const { return shape_at(layers.size()); }

    void set_trainable(bool trainable) const;
    Network clone() const;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

/// Instantiate a layer sequence with deterministic He-uniform init drawn
/// from `init`. Shape-checks the whole chain against input_shape.
template <typename T>
Network<T> build_network(const std::vector<LayerSpec>& specs, const Shape& input_shape, RngStream init,
                         std::map<std::string, std::size_t> boundaries = {});

template <typename T>
Network<T> build_backbone(const std::vector<LayerSpec>& specs, const Shape& input_shape, std::uint64_t seed,
                          std::map<std::string, std::size_t> boundaries = {});

/// Re-initialize a single layer with the given policy (adapter tails).
template <typename T>
void reinit_layer(Layer<T>& layer, InitMode mode, RngStream& init);

/// 64-bit content digest over parameter values and buffers in declaration
/// order; proves frozen networks stayed frozen.
template <typename T>
std::uint64_t param_digest(const Network<T>& net);

// ---- model file format -------------------------------------------------
// magic "SMDL", u8 version=1, input shape, named boundaries, layer-spec
// table, then per-layer parameter/buffer blobs as little-endian f32 in
// declaration order.

void save_network(const Network<float>& net, const std::string& path);
Network<float> load_network(const std::string& path);

std::vector<std::uint8_t> serialize_network(const Network<float>& net);
Network<float> deserialize_network(const std::vector<std::uint8_t>& bytes);

} // namespace salt
