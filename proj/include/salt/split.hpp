// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "salt/layers.hpp"

namespace salt {

/// A backbone partitioned at a named boundary into a frozen head and a
/// frozen tail. The two halves are views into one layer sequence, so
/// tail(head(x)) is the unsplit forward by construction. Immutable after
/// construction and shareable read-only across threads.
template <typename T>
struct SplitModel {
    Network<T> net;
    std::string split_point;
    std::size_t boundary = 0;
    Shape latent_shape;  // shape of z = H(x) for batch size 1
    Shape input_sample_shape;
    std::size_t num_classes = 0;

    /// z = H(x); frozen batchnorm runs in eval mode.
    Tensor<T> forward_head(const Tensor<T>& x) const;

    /// logits = T(z'); eval mode throughout.
    Tensor<T> forward_tail(const Tensor<T>& z) const;

    typename Graph<T>::Var forward_head(Graph<T>& g, typename Graph<T>::Var x) const;
    typename Graph<T>::Var forward_tail(Graph<T>& g, typename Graph<T>::Var z) const;

    std::uint64_t head_digest() const;
    std::uint64_t tail_digest() const;

    Shape latent_batch_shape(std::size_t n) const;

    SplitModel clone() const;
};

using SplitModelF = SplitModel<float>;

/// Partition at a named boundary and freeze every parameter.
template <typename T>
SplitModel<T> split_at(Network<T>&& backbone, const std::string& split_point);

enum class AdapterVariant : std::uint8_t { residual = 1, insertion = 2 };

/// The only trainable component. Residual variant emits z + S(z); the
/// insertion variant emits S(z). Both preserve the latent shape.
template <typename T>
struct Adapter {
    AdapterVariant variant = AdapterVariant::residual;
    Network<T> net;
    Shape latent_shape; // [C,h,w]

    typename Graph<T>::Var apply(Graph<T>& g, typename Graph<T>::Var z, bool training) const;
    Tensor<T> apply(const Tensor<T>& z) const; // eval-mode convenience

    std::vector<Parameter<T>*> params() const { return net.params(); }
    std::uint64_t digest() const { return param_digest(net); }
    Adapter clone() const;
};

using AdapterF = Adapter<float>;

/// Three-conv adapter stack on the latent shape: conv3x3 -> BN -> ReLU,
/// twice, then a 1x1 conv producing the correction. The residual variant's
/// final conv starts at zero so training begins at the identity mapping;
/// the insertion variant's final conv starts as the identity kernel.
template <typename T>
Adapter<T> make_adapter(AdapterVariant variant, const Shape& latent_shape, RngStream init);

/// Adapter container format: magic "SADP", version, variant, latent shape,
/// then the embedded network in the model file format.
void save_adapter(const Adapter<float>& adapter, const std::string& path);
Adapter<float> load_adapter(const std::string& path);

// ---- desk backbone ---------------------------------------------------------

/// Split-point names of the desk backbone, shallow to deep.
extern const char* const kDeskSplitPoints[4];

/// 8 weighted layers on [N,1,16,16] inputs, K-way logits, with named split
/// boundaries input / before_block1 / after_block1 / after_block2 /
/// after_block3 mirroring a blockwise residual backbone at desk scale.
std::vector<LayerSpec> desk_backbone_specs(std::size_t num_classes);

template <typename T>
Network<T> build_desk_backbone(std::size_t num_classes, std::uint64_t seed);

std::map<std::string, std::size_t> desk_boundaries();

} // namespace salt
