// SPDX-License-Identifier: Apache-2.0
#include "salt/split.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "salt/errors.hpp"

namespace salt {

// ---- SplitModel --------------------------------------------------------

template <typename T>
typename Graph<T>::Var SplitModel<T>::forward_head(Graph<T>& g, typename Graph<T>::Var x) const {
    return net.forward(g, x, /*training=*/false, 0, boundary);
}

template <typename T>
typename Graph<T>::Var SplitModel<T>::forward_tail(Graph<T>& g, typename Graph<T>::Var z) const {
    return net.forward(g, z, /*training=*/false, boundary);
}

template <typename T>
Tensor<T> SplitModel<T>::forward_head(const Tensor<T>& x) const {
    if (x.rank() != input_sample_shape.size() + 1) {
        throw DimensionError("head input must be a batch of " + shape_str(input_sample_shape));
    }
    for (std::size_t i = 0; i < input_sample_shape.size(); ++i) {
        if (x.dim(i + 1) != input_sample_shape[i]) {
            throw DimensionError("head input " + shape_str(x.shape()) + " does not match configured sample shape " +
                                 shape_str(input_sample_shape));
        }
    }
    Graph<T> g;
    auto v = forward_head(g, g.input(x));
    return g.value(v);
}

template <typename T>
Tensor<T> SplitModel<T>::forward_tail(const Tensor<T>& z) const {
    if (z.rank() != latent_shape.size() + 1) {
        throw DimensionError("tail input must be a batch of " + shape_str(latent_shape));
    }
    for (std::size_t i = 0; i < latent_shape.size(); ++i) {
        if (z.dim(i + 1) != latent_shape[i]) {
            throw DimensionError("tail input " + shape_str(z.shape()) + " does not match latent shape " +
                                 shape_str(latent_shape));
        }
    }
    Graph<T> g;
    auto v = forward_tail(g, g.input(z));
    return g.value(v);
}

template <typename T>
std::uint64_t SplitModel<T>::head_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    std::vector<Parameter<T>*> ps;
    std::vector<Tensor<T>*> bs;
    for (std::size_t i = 0; i < boundary; ++i) net.layers[i]->collect(ps, bs);
    for (const Parameter<T>* p : ps) h = fnv1a64(p->value.data(), p->value.numel() * sizeof(T), h);
    for (const Tensor<T>* b : bs) h = fnv1a64(b->data(), b->numel() * sizeof(T), h);
    return h;
}

template <typename T>
std::uint64_t SplitModel<T>::tail_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    std::vector<Parameter<T>*> ps;
    std::vector<Tensor<T>*> bs;
    for (std::size_t i = boundary; i < net.layers.size(); ++i) net.layers[i]->collect(ps, bs);
    for (const Parameter<T>* p : ps) h = fnv1a64(p->value.data(), p->value.numel() * sizeof(T), h);
    for (const Tensor<T>* b : bs) h = fnv1a64(b->data(), b->numel() * sizeof(T), h);
    return h;
}

template <typename T>
Shape SplitModel<T>::latent_batch_shape(std::size_t n) const {
    Shape s = latent_shape;
    s.insert(s.begin(), n);
    return s;
}

template <typename T>
SplitModel<T> SplitModel<T>::clone() const {
    SplitModel<T> out;
    out.net = net.clone();
    out.split_point = split_point;
    out.boundary = boundary;
    out.latent_shape = latent_shape;
    out.input_sample_shape = input_sample_shape;
    out.num_classes = num_classes;
    return out;
}

template <typename T>
SplitModel<T> split_at(Network<T>&& backbone, const std::string& split_point) {
    auto it = backbone.boundaries.find(split_point);
    if (it == backbone.boundaries.end()) {
        throw ConfigError("unknown split point '" + split_point + "'");
    }
    SplitModel<T> model;
    model.boundary = it->second;
    model.split_point = split_point;
    model.net = std::move(backbone);
    model.net.set_trainable(false);
    Shape latent = model.net.shape_at(model.boundary);
    model.latent_shape = Shape(latent.begin() + 1, latent.end());
    model.input_sample_shape = Shape(model.net.input_shape.begin() + 1, model.net.input_shape.end());
    Shape out = model.net.output_shape();
    model.num_classes = out.back();
    return model;
}

// ---- Adapter -------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Adapter<T>::apply(Graph<T>& g, typename Graph<T>::Var z, bool training) const {
    const Shape& zs = g.value(z).shape();
    if (zs.size() != latent_shape.size() + 1 ||
        !std::equal(latent_shape.begin(), latent_shape.end(), zs.begin() + 1)) {
        throw DimensionError("adapter expects a batch of " + shape_str(latent_shape) + ", got " + shape_str(zs));
    }
    auto correction = net.forward(g, z, training);
    return variant == AdapterVariant::residual ? g.add(z, correction) : correction;
}

template <typename T>
Tensor<T> Adapter<T>::apply(const Tensor<T>& z) const {
    Graph<T> g;
    auto v = apply(g, g.input(z), /*training=*/false);
    return g.value(v);
}

template <typename T>
Adapter<T> Adapter<T>::clone() const {
    Adapter<T> out;
    out.variant = variant;
    out.net = net.clone();
    out.latent_shape = latent_shape;
    return out;
}

template <typename T>
Adapter<T> make_adapter(AdapterVariant variant, const Shape& latent_shape, RngStream init) {
    if (latent_shape.size() != 3) {
        throw ConstructionError("adapter latent shape must be [C,h,w], got " + shape_str(latent_shape));
    }
    const auto c = static_cast<std::uint32_t>(latent_shape[0]);
    std::vector<LayerSpec> specs = {
        LayerSpec::conv2d(c, c, 3, 1, 1), LayerSpec::batchnorm(c), LayerSpec::relu_spec(),
        LayerSpec::conv2d(c, c, 3, 1, 1), LayerSpec::batchnorm(c), LayerSpec::relu_spec(),
        LayerSpec::conv2d(c, c, 1, 1, 0),
    };
    Shape in = latent_shape;
    in.insert(in.begin(), 1);
    Adapter<T> adapter;
    adapter.variant = variant;
    adapter.latent_shape = latent_shape;
    adapter.net = build_network<T>(specs, in, init);
    RngStream tail_init = init.fork("tail");
    reinit_layer(*adapter.net.layers.back(),
                 variant == AdapterVariant::residual ? InitMode::zeros : InitMode::identity, tail_init);
    adapter.net.set_trainable(true);
    return adapter;
}

// ---- adapter container ----------------------------------------------------

namespace {
constexpr char kAdapterMagic[4] = {'S', 'A', 'D', 'P'};
}

void save_adapter(const Adapter<float>& adapter, const std::string& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kAdapterMagic, kAdapterMagic + 4);
    out.push_back(1); // version
    out.push_back(static_cast<std::uint8_t>(adapter.variant));
    out.push_back(static_cast<std::uint8_t>(adapter.latent_shape.size()));
    for (std::size_t d : adapter.latent_shape) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((d >> (8 * i)) & 0xff));
    }
    auto net_bytes = serialize_network(adapter.net);
    out.insert(out.end(), net_bytes.begin(), net_bytes.end());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

Adapter<float> load_adapter(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open adapter file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 7 || std::memcmp(bytes.data(), kAdapterMagic, 4) != 0) {
        throw IoError("not an adapter file: " + path);
    }
    if (bytes[4] != 1) throw IoError("unsupported adapter file version");
    Adapter<float> adapter;
    adapter.variant = static_cast<AdapterVariant>(bytes[5]);
    const std::uint8_t rank = bytes[6];
    std::size_t off = 7;
    if (bytes.size() < off + 4u * rank) throw IoError("adapter file truncated");
    adapter.latent_shape.resize(rank);
    for (std::uint8_t i = 0; i < rank; ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[off + b]) << (8 * b);
        adapter.latent_shape[i] = v;
        off += 4;
    }
    adapter.net = deserialize_network(std::vector<std::uint8_t>(bytes.begin() + static_cast<long>(off), bytes.end()));
    adapter.net.set_trainable(true);
    return adapter;
}

// ---- desk backbone ----------------------------------------------------------

const char* const kDeskSplitPoints[4] = {"before_block1", "after_block1", "after_block2", "after_block3"};

std::vector<LayerSpec> desk_backbone_specs(std::size_t num_classes) {
    const auto k = static_cast<std::uint32_t>(num_classes);
    return {
        // stem
        LayerSpec::conv2d(1, 8, 3, 1, 1), LayerSpec::batchnorm(8), LayerSpec::relu_spec(),
        // block 1
        LayerSpec::maxpool(), LayerSpec::conv2d(8, 16, 3, 1, 1), LayerSpec::batchnorm(16), LayerSpec::relu_spec(),
        LayerSpec::conv2d(16, 16, 3, 1, 1), LayerSpec::batchnorm(16), LayerSpec::relu_spec(),
        // block 2
        LayerSpec::maxpool(), LayerSpec::conv2d(16, 32, 3, 1, 1), LayerSpec::batchnorm(32), LayerSpec::relu_spec(),
        LayerSpec::conv2d(32, 32, 3, 1, 1), LayerSpec::batchnorm(32), LayerSpec::relu_spec(),
        // block 3
        LayerSpec::conv2d(32, 32, 3, 1, 1), LayerSpec::batchnorm(32), LayerSpec::relu_spec(),
        LayerSpec::conv2d(32, 32, 3, 1, 1), LayerSpec::batchnorm(32), LayerSpec::relu_spec(),
        // classifier
        LayerSpec::flatten_spec(), LayerSpec::linear(32 * 4 * 4, k),
    };
}

std::map<std::string, std::size_t> desk_boundaries() {
    return {
        {"input", 0}, {"before_block1", 3}, {"after_block1", 10}, {"after_block2", 17}, {"after_block3", 23},
    };
}

template <typename T>
Network<T> build_desk_backbone(std::size_t num_classes, std::uint64_t seed) {
    return build_backbone<T>(desk_backbone_specs(num_classes), Shape{1, 1, 16, 16}, seed, desk_boundaries());
}

// ---- explicit instantiations ------------------------------------------------

template struct SplitModel<float>;
template struct SplitModel<double>;
template SplitModel<float> split_at<float>(Network<float>&&, const std::string&);
template SplitModel<double> split_at<double>(Network<double>&&, const std::string&);
template struct Adapter<float>;
template struct Adapter<double>;
template Adapter<float> make_adapter<float>(AdapterVariant, const Shape&, RngStream);
template Adapter<double> make_adapter<double>(AdapterVariant, const Shape&, RngStream);
template Network<float> build_desk_backbone<float>(std::size_t, std::uint64_t);
template Network<double> build_desk_backbone<double>(std::size_t, std::uint64_t);

} // namespace salt
