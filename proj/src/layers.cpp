// SPDX-License-Identifier: Apache-2.0
#include "salt/layers.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "salt/errors.hpp"

namespace salt {

// ---- spec factories ----------------------------------------------------

LayerSpec LayerSpec::conv2d(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t kernel,
                            std::uint32_t stride, std::uint32_t padding) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::batchnorm(std::uint32_t channels) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    s.in_ch = channels;
    s.out_ch = channels;
    return s;
}

LayerSpec LayerSpec::relu_spec() {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
}

LayerSpec LayerSpec::maxpool(std::uint32_t kernel, std::uint32_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::flatten_spec() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

LayerSpec LayerSpec::linear(std::uint32_t in_features, std::uint32_t out_features) {
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec LayerSpec::upsample2() {
    LayerSpec s;
    s.kind = LayerKind::upsample;
    return s;
}

// ---- concrete layers ----------------------------------------------------

namespace {

template <typename T>
class ConvLayer final : public Layer<T> {
public:
    explicit ConvLayer(const LayerSpec& spec) : spec_(spec) {
        weight_ = Parameter<T>(Tensor<T>({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel}));
        bias_ = Parameter<T>(Tensor<T>({spec.out_ch}));
    }

    const LayerSpec& spec() const override { return spec_; }

    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override {
        auto w = g.use(weight_);
        auto b = g.use(bias_);
        return g.conv2d(x, w, b, static_cast<int>(spec_.stride), static_cast<int>(spec_.padding));
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != spec_.in_ch) {
            throw DimensionError("conv layer expects [N," + std::to_string(spec_.in_ch) + ",H,W], got " +
                                 shape_str(in));
        }
        auto ext = [&](std::size_t d) {
            long numer = static_cast<long>(d) + 2L * spec_.padding - static_cast<long>(spec_.kernel);
            if (numer < 0 || numer % spec_.stride != 0) {
                throw DimensionError("conv layer output extent is not a positive integer for input " +
                                     shape_str(in));
            }
            return static_cast<std::size_t>(numer / spec_.stride) + 1;
        };
        return {in[0], spec_.out_ch, ext(in[2]), ext(in[3])};
    }

    void collect(std::vector<Parameter<T>*>& params, std::vector<Tensor<T>*>&) override {
        params.push_back(&weight_);
        params.push_back(&bias_);
    }

    Parameter<T> weight_;
    Parameter<T> bias_;

private:
    LayerSpec spec_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
public:
    explicit BatchNormLayer(const LayerSpec& spec) : spec_(spec) {
        gamma_ = Parameter<T>(Tensor<T>::full({spec.in_ch}, T(1)));
        beta_ = Parameter<T>(Tensor<T>({spec.in_ch}));
        running_mean_ = Tensor<T>({spec.in_ch});
        running_var_ = Tensor<T>::full({spec.in_ch}, T(1));
    }

    const LayerSpec& spec() const override { return spec_; }

    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool training) override {
        auto gm = g.use(gamma_);
        auto bt = g.use(beta_);
        return g.batchnorm2d(x, gm, bt, running_mean_, running_var_, training, T(0.1), T(1e-5));
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != spec_.in_ch) {
            throw DimensionError("batchnorm layer expects [N," + std::to_string(spec_.in_ch) + ",H,W], got " +
                                 shape_str(in));
        }
        return in;
    }

    void collect(std::vector<Parameter<T>*>& params, std::vector<Tensor<T>*>& buffers) override {
        params.push_back(&gamma_);
        params.push_back(&beta_);
        buffers.push_back(&running_mean_);
        buffers.push_back(&running_var_);
    }

    Parameter<T> gamma_;
    Parameter<T> beta_;
    Tensor<T> running_mean_;
    Tensor<T> running_var_;

private:
    LayerSpec spec_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
public:
    explicit ReluLayer(const LayerSpec& spec) : spec_(spec) {}
    const LayerSpec& spec() const override { return spec_; }
    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override { return g.relu(x); }
    Shape output_shape(const Shape& in) const override { return in; }
    void collect(std::vector<Parameter<T>*>&, std::vector<Tensor<T>*>&) override {}

private:
    LayerSpec spec_;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
public:
    explicit MaxPoolLayer(const LayerSpec& spec) : spec_(spec) {}
    const LayerSpec& spec() const override { return spec_; }
    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override {
        return g.maxpool2d(x, static_cast<int>(spec_.kernel), static_cast<int>(spec_.stride));
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4) throw DimensionError("maxpool layer expects rank-4 input");
        if (in[2] % spec_.stride != 0 || in[3] % spec_.stride != 0 || in[2] < spec_.kernel || in[3] < spec_.kernel) {
            throw DimensionError("maxpool layer: input " + shape_str(in) + " not divisible by stride");
        }
        return {in[0], in[1], (in[2] - spec_.kernel) / spec_.stride + 1, (in[3] - spec_.kernel) / spec_.stride + 1};
    }
    void collect(std::vector<Parameter<T>*>&, std::vector<Tensor<T>*>&) override {}

private:
    LayerSpec spec_;
};

template <typename T>
class FlattenLayer final : public Layer<T> {
public:
    explicit FlattenLayer(const LayerSpec& spec) : spec_(spec) {}
    const LayerSpec& spec() const override { return spec_; }
    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override { return g.flatten(x); }
    Shape output_shape(const Shape& in) const override {
        if (in.size() < 2) throw DimensionError("flatten layer expects rank >= 2");
        std::size_t prod = 1;
        for (std::size_t i = 1; i < in.size(); ++i) prod *= in[i];
        return {in[0], prod};
    }
    void collect(std::vector<Parameter<T>*>&, std::vector<Tensor<T>*>&) override {}

private:
    LayerSpec spec_;
};

template <typename T>
class LinearLayer final : public Layer<T> {
public:
    explicit LinearLayer(const LayerSpec& spec) : spec_(spec) {
        weight_ = Parameter<T>(Tensor<T>({spec.out_features, spec.in_features}));
        bias_ = Parameter<T>(Tensor<T>({spec.out_features}));
    }
    const LayerSpec& spec() const override { return spec_; }
    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override {
        auto w = g.use(weight_);
        auto b = g.use(bias_);
        return g.linear(x, w, b);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 2 || in[1] != spec_.in_features) {
            throw DimensionError("linear layer expects [N," + std::to_string(spec_.in_features) + "], got " +
                                 shape_str(in));
        }
        return {in[0], spec_.out_features};
    }
    void collect(std::vector<Parameter<T>*>& params, std::vector<Tensor<T>*>&) override {
        params.push_back(&weight_);
        params.push_back(&bias_);
    }

    Parameter<T> weight_;
    Parameter<T> bias_;

private:
    LayerSpec spec_;
};

template <typename T>
class UpsampleLayer final : public Layer<T> {
public:
    explicit UpsampleLayer(const LayerSpec& spec) : spec_(spec) {}
    const LayerSpec& spec() const override { return spec_; }
    typename Graph<T>::Var forward(Graph<T>& g, typename Graph<T>::Var x, bool) override {
        return g.upsample_nearest2(x);
    }
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4) throw DimensionError("upsample layer expects rank-4 input");
        return {in[0], in[1], 2 * in[2], 2 * in[3]};
    }
    void collect(std::vector<Parameter<T>*>&, std::vector<Tensor<T>*>&) override {}

private:
    LayerSpec spec_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::conv:
            if (spec.in_ch == 0 || spec.out_ch == 0 || (spec.kernel != 1 && spec.kernel != 3) || spec.stride == 0) {
                throw ConstructionError("invalid conv spec");
            }
            return std::make_unique<ConvLayer<T>>(spec);
        case LayerKind::batchnorm:
            if (spec.in_ch == 0) throw ConstructionError("invalid batchnorm spec");
            return std::make_unique<BatchNormLayer<T>>(spec);
        case LayerKind::relu:
            return std::make_unique<ReluLayer<T>>(spec);
        case LayerKind::maxpool:
            if (spec.kernel == 0 || spec.stride == 0) throw ConstructionError("invalid maxpool spec");
            return std::make_unique<MaxPoolLayer<T>>(spec);
        case LayerKind::flatten:
            return std::make_unique<FlattenLayer<T>>(spec);
        case LayerKind::linear:
            if (spec.in_features == 0 || spec.out_features == 0) throw ConstructionError("invalid linear spec");
            return std::make_unique<LinearLayer<T>>(spec);
        case LayerKind::upsample:
            return std::make_unique<UpsampleLayer<T>>(spec);
    }
    throw ConstructionError("unknown layer kind");
}

template <typename T>
void he_uniform_fill(Tensor<T>& w, std::size_t fan_in, RngStream& init) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(init.uniform_range(-bound, bound));
}

} // namespace

template <typename T>
void reinit_layer(Layer<T>& layer, InitMode mode, RngStream& init) {
    const LayerSpec& s = layer.spec();
    if (s.kind == LayerKind::conv) {
        auto& conv = static_cast<ConvLayer<T>&>(layer);
        switch (mode) {
            case InitMode::he_uniform:
                he_uniform_fill(conv.weight_.value, static_cast<std::size_t>(s.in_ch) * s.kernel * s.kernel, init);
                conv.bias_.value.fill(T(0));
                break;
            case InitMode::zeros:
                conv.weight_.value.fill(T(0));
                conv.bias_.value.fill(T(0));
                break;
            case InitMode::identity:
                if (s.in_ch != s.out_ch || s.kernel != 1) {
                    throw ConstructionError("identity init needs a square-channel 1x1 conv");
                }
                conv.weight_.value.fill(T(0));
                for (std::uint32_t c = 0; c < s.in_ch; ++c) {
                    conv.weight_.value[(static_cast<std::size_t>(c) * s.in_ch + c)] = T(1);
                }
                conv.bias_.value.fill(T(0));
                break;
        }
    } else if (s.kind == LayerKind::linear) {
        auto& lin = static_cast<LinearLayer<T>&>(layer);
        if (mode == InitMode::zeros) {
            lin.weight_.value.fill(T(0));
            lin.bias_.value.fill(T(0));
        } else {
            he_uniform_fill(lin.weight_.value, s.in_features, init);
            lin.bias_.value.fill(T(0));
        }
    }
    // batchnorm keeps gamma=1 beta=0; stateless layers have nothing to init
}

// ---- network -------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Network<T>::forward(Graph<T>& g, typename Graph<T>::Var x, bool training,
                                           std::size_t begin, std::size_t end) const {
    if (end == Graph<T>::Var::npos) end = layers.size();
    for (std::size_t i = begin; i < end; ++i) x = layers[i]->forward(g, x, training);
    return x;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::params() const {
    std::vector<Parameter<T>*> ps;
    std::vector<Tensor<T>*> bs;
    for (const auto& l : layers) l->collect(ps, bs);
    return ps;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::buffers() const {
    std::vector<Parameter<T>*> ps;
    std::vector<Tensor<T>*> bs;
    for (const auto& l : layers) l->collect(ps, bs);
    return bs;
}

template <typename T>
std::vector<LayerSpec> Network<T>::specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(l->spec());
    return out;
}

template <typename T>
Shape Network<T>::shape_at(std::size_t boundary) const {
    Shape s = input_shape;
    if (boundary > layers.size()) throw ConfigError("boundary index past end of network");
    for (std::size_t i = 0; i < boundary; ++i) s = layers[i]->output_shape(s);
    return s;
}

template <typename T>
void Network<T>::set_trainable(bool trainable) const {
    for (Parameter<T>* p : params()) p->trainable = trainable;
}

template <typename T>
Network<T> Network<T>::clone() const {
    Network<T> out;
    out.input_shape = input_shape;
    out.boundaries = boundaries;
    for (const auto& l : layers) out.layers.push_back(make_layer<T>(l->spec()));
    auto src_p = params();
    auto dst_p = out.params();
    for (std::size_t i = 0; i < src_p.size(); ++i) {
        dst_p[i]->value = src_p[i]->value;
        dst_p[i]->trainable = src_p[i]->trainable;
    }
    auto src_b = buffers();
    auto dst_b = out.buffers();
    for (std::size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = *src_b[i];
    return out;
}

template <typename T>
Network<T> build_network(const std::vector<LayerSpec>& specs, const Shape& input_shape, RngStream init,
                         std::map<std::string, std::size_t> boundaries) {
    Network<T> net;
    net.input_shape = input_shape;
    net.boundaries = std::move(boundaries);
    Shape cur = input_shape;
    for (const LayerSpec& s : specs) {
        auto layer = make_layer<T>(s);
        try {
            cur = layer->output_shape(cur);
        } catch (const DimensionError& e) {
            throw ConstructionError(std::string("layer spec inconsistent with input shape: ") + e.what());
        }
        reinit_layer(*layer, InitMode::he_uniform, init);
        net.layers.push_back(std::move(layer));
    }
    for (const auto& [name, idx] : net.boundaries) {
        if (idx > net.layers.size()) throw ConstructionError("boundary '" + name + "' past end of network");
    }
    return net;
}

template <typename T>
Network<T> build_backbone(const std::vector<LayerSpec>& specs, const Shape& input_shape, std::uint64_t seed,
                          std::map<std::string, std::size_t> boundaries) {
    return build_network<T>(specs, input_shape, RngStream(seed, "init"), std::move(boundaries));
}

template <typename T>
std::uint64_t param_digest(const Network<T>& net) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Parameter<T>* p : net.params()) {
        h = fnv1a64(p->value.data(), p->value.numel() * sizeof(T), h);
    }
    for (const Tensor<T>* b : net.buffers()) {
        h = fnv1a64(b->data(), b->numel() * sizeof(T), h);
    }
    return h;
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'M', 'D', 'L'};
constexpr std::uint8_t kVersion = 1;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Cursor {
    const std::uint8_t* p;
    std::size_t left;

    void need(std::size_t n) const {
        if (left < n) throw IoError("model file truncated");
    }
    std::uint8_t u8() {
        need(1);
        std::uint8_t v = *p;
        ++p;
        --left;
        return v;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        left -= 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
};

} // namespace

std::vector<std::uint8_t> serialize_network(const Network<float>& net) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u8(out, kVersion);
    put_u8(out, static_cast<std::uint8_t>(net.input_shape.size()));
    for (std::size_t d : net.input_shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(net.boundaries.size()));
    for (const auto& [name, idx] : net.boundaries) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(idx));
    }
    auto specs = net.specs();
    put_u32(out, static_cast<std::uint32_t>(specs.size()));
    for (const LayerSpec& s : specs) {
        put_u8(out, static_cast<std::uint8_t>(s.kind));
        put_u32(out, s.in_ch);
        put_u32(out, s.out_ch);
        put_u32(out, s.kernel);
        put_u32(out, s.stride);
        put_u32(out, s.padding);
        put_u32(out, s.in_features);
        put_u32(out, s.out_features);
    }
    for (const Parameter<float>* p : net.params()) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) put_f32(out, p->value[i]);
    }
    for (const Tensor<float>* b : net.buffers()) {
        for (std::size_t i = 0; i < b->numel(); ++i) put_f32(out, (*b)[i]);
    }
    return out;
}

Network<float> deserialize_network(const std::vector<std::uint8_t>& bytes) {
    Cursor c{bytes.data(), bytes.size()};
    c.need(5);
    if (std::memcmp(c.p, kMagic, 4) != 0) throw IoError("not a model file (bad magic)");
    c.p += 4;
    c.left -= 4;
    const std::uint8_t version = c.u8();
    if (version != kVersion) throw IoError("unsupported model file version " + std::to_string(version));
    const std::uint8_t rank = c.u8();
    Shape input_shape(rank);
    for (std::uint8_t i = 0; i < rank; ++i) input_shape[i] = c.u32();
    std::map<std::string, std::size_t> boundaries;
    const std::uint32_t nb = c.u32();
    for (std::uint32_t i = 0; i < nb; ++i) {
        const std::uint16_t len = c.u16();
        std::string name = c.str(len);
        boundaries[name] = c.u32();
    }
    const std::uint32_t nl = c.u32();
    std::vector<LayerSpec> specs(nl);
    for (std::uint32_t i = 0; i < nl; ++i) {
        LayerSpec& s = specs[i];
        s.kind = static_cast<LayerKind>(c.u8());
        s.in_ch = c.u32();
        s.out_ch = c.u32();
        s.kernel = c.u32();
        s.stride = c.u32();
        s.padding = c.u32();
        s.in_features = c.u32();
        s.out_features = c.u32();
    }
    Network<float> net = build_network<float>(specs, input_shape, RngStream(0, "load"), std::move(boundaries));
    for (Parameter<float>* p : net.params()) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] = c.f32();
    }
    for (Tensor<float>* b : net.buffers()) {
        for (std::size_t i = 0; i < b->numel(); ++i) (*b)[i] = c.f32();
    }
    if (c.left != 0) throw IoError("model file has trailing bytes");
    return net;
}

void save_network(const Network<float>& net, const std::string& path) {
    auto bytes = serialize_network(net);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Network<float> load_network(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open model file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_network(bytes);
}

// ---- explicit instantiations ----------------------------------------------

template struct Network<float>;
template struct Network<double>;
template Network<float> build_network<float>(const std::vector<LayerSpec>&, const Shape&, RngStream,
                                             std::map<std::string, std::size_t>);
template Network<double> build_network<double>(const std::vector<LayerSpec>&, const Shape&, RngStream,
                                               std::map<std::string, std::size_t>);
template Network<float> build_backbone<float>(const std::vector<LayerSpec>&, const Shape&, std::uint64_t,
                                              std::map<std::string, std::size_t>);
template Network<double> build_backbone<double>(const std::vector<LayerSpec>&, const Shape&, std::uint64_t,
                                                std::map<std::string, std::size_t>);
template void reinit_layer<float>(Layer<float>&, InitMode, RngStream&);
template void reinit_layer<double>(Layer<double>&, InitMode, RngStream&);
template std::uint64_t param_digest<float>(const Network<float>&);
template std::uint64_t param_digest<double>(const Network<double>&);

} // namespace salt
