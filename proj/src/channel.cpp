// SPDX-License-Identifier: Apache-2.0
#include "salt/channel.hpp"

#include "salt/errors.hpp"

namespace salt {

// ---- spec ------------------------------------------------------------------

ChannelSpec ChannelSpec::identity() {
    return {};
}

ChannelSpec ChannelSpec::packet_loss(double p) {
    if (p < 0.0 || p > 1.0) throw ConfigError("packet loss rate must lie in [0,1]");
    ChannelSpec s;
    s.kind = Kind::packet_loss;
    s.p = p;
    return s;
}

ChannelSpec ChannelSpec::gaussian_noise(double sigma) {
    if (sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
    ChannelSpec s;
    s.kind = Kind::gaussian_noise;
    s.sigma = sigma;
    return s;
}

ChannelSpec ChannelSpec::compose(std::vector<ChannelSpec> members) {
    if (members.empty()) throw ConfigError("compose channel needs at least one member");
    ChannelSpec s;
    s.kind = Kind::compose;
    s.members = std::move(members);
    return s;
}

bool ChannelSpec::is_identity() const {
    switch (kind) {
        case Kind::identity: return true;
        case Kind::packet_loss: return false;
        case Kind::gaussian_noise: return sigma == 0.0;
        case Kind::compose:
            for (const auto& m : members) {
                if (!m.is_identity()) return false;
            }
            return true;
    }
    return false;
}

nlohmann::json ChannelSpec::to_json() const {
    nlohmann::json j;
    switch (kind) {
        case Kind::identity: j["kind"] = "identity"; break;
        case Kind::packet_loss:
            j["kind"] = "packet_loss";
            j["p"] = p;
            break;
        case Kind::gaussian_noise:
            j["kind"] = "gaussian_noise";
            j["sigma"] = sigma;
            break;
        case Kind::compose: {
            j["kind"] = "compose";
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& m : members) arr.push_back(m.to_json());
            j["members"] = arr;
            break;
        }
    }
    return j;
}

ChannelSpec ChannelSpec::from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") return identity();
    if (kind == "packet_loss") return packet_loss(j.at("p").get<double>());
    if (kind == "gaussian_noise") return gaussian_noise(j.at("sigma").get<double>());
    if (kind == "compose") {
        std::vector<ChannelSpec> members;
        for (const auto& m : j.at("members")) members.push_back(from_json(m));
        return compose(std::move(members));
    }
    throw ConfigError("unknown channel kind '" + kind + "'");
}

// ---- realization -------------------------------------------------------------

template <typename T>
Tensor<T> sample_mask(double p, const Shape& shape, RngStream& rng) {
    if (p < 0.0 || p > 1.0) throw ConfigError("packet loss rate must lie in [0,1]");
    Tensor<T> mask(shape);
    const double keep = 1.0 - p;
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < keep ? T(1) : T(0);
    return mask;
}

template <typename T>
Tensor<T> sample_noise(double sigma, const Shape& shape, RngStream& rng) {
    Tensor<T> noise(shape);
    for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = static_cast<T>(sigma * rng.normal());
    return noise;
}

template <typename T>
Tensor<T> apply_channel(const ChannelSpec& spec, const Tensor<T>& t, ChannelRng rng) {
    switch (spec.kind) {
        case ChannelSpec::Kind::identity:
            return t;
        case ChannelSpec::Kind::packet_loss: {
            Tensor<T> mask = sample_mask<T>(spec.p, t.shape(), *rng.mask);
            Tensor<T> out(t.shape());
            for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i] * mask[i];
            return out;
        }
        case ChannelSpec::Kind::gaussian_noise: {
            if (spec.sigma == 0.0) return t;
            Tensor<T> noise = sample_noise<T>(spec.sigma, t.shape(), *rng.noise);
            Tensor<T> out(t.shape());
            for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i] + noise[i];
            return out;
        }
        case ChannelSpec::Kind::compose: {
            Tensor<T> cur = t;
            for (const auto& m : spec.members) cur = apply_channel(m, cur, rng);
            return cur;
        }
    }
    throw ConfigError("unknown channel kind");
}

template <typename T>
Tensor<T> apply_channel(const ChannelSpec& spec, const Tensor<T>& t, RngStream& rng) {
    return apply_channel(spec, t, ChannelRng{&rng, &rng});
}

template <typename T>
typename Graph<T>::Var apply_channel_differentiable(const ChannelSpec& spec, Graph<T>& g,
                                                    typename Graph<T>::Var t, ChannelRng rng) {
    switch (spec.kind) {
        case ChannelSpec::Kind::identity:
            return t;
        case ChannelSpec::Kind::packet_loss: {
            Tensor<T> mask = sample_mask<T>(spec.p, g.value(t).shape(), *rng.mask);
            return g.mul_const(t, mask);
        }
        case ChannelSpec::Kind::gaussian_noise: {
            if (spec.sigma == 0.0) return t;
            Tensor<T> noise = sample_noise<T>(spec.sigma, g.value(t).shape(), *rng.noise);
            return g.add_const(t, noise);
        }
        case ChannelSpec::Kind::compose: {
            auto cur = t;
            for (const auto& m : spec.members) cur = apply_channel_differentiable(m, g, cur, rng);
            return cur;
        }
    }
    throw ConfigError("unknown channel kind");
}

template <typename T>
typename Graph<T>::Var apply_channel_differentiable(const ChannelSpec& spec, Graph<T>& g,
                                                    typename Graph<T>::Var t, RngStream& rng) {
    return apply_channel_differentiable(spec, g, t, ChannelRng{&rng, &rng});
}

template Tensor<float> sample_mask<float>(double, const Shape&, RngStream&);
template Tensor<double> sample_mask<double>(double, const Shape&, RngStream&);
template Tensor<float> sample_noise<float>(double, const Shape&, RngStream&);
template Tensor<double> sample_noise<double>(double, const Shape&, RngStream&);
template Tensor<float> apply_channel<float>(const ChannelSpec&, const Tensor<float>&, ChannelRng);
template Tensor<double> apply_channel<double>(const ChannelSpec&, const Tensor<double>&, ChannelRng);
template Tensor<float> apply_channel<float>(const ChannelSpec&, const Tensor<float>&, RngStream&);
template Tensor<double> apply_channel<double>(const ChannelSpec&, const Tensor<double>&, RngStream&);
template Graph<float>::Var apply_channel_differentiable<float>(const ChannelSpec&, Graph<float>&,
                                                               Graph<float>::Var, ChannelRng);
template Graph<double>::Var apply_channel_differentiable<double>(const ChannelSpec&, Graph<double>&,
                                                                 Graph<double>::Var, ChannelRng);
template Graph<float>::Var apply_channel_differentiable<float>(const ChannelSpec&, Graph<float>&,
                                                               Graph<float>::Var, RngStream&);
template Graph<double>::Var apply_channel_differentiable<double>(const ChannelSpec&, Graph<double>&,
                                                                 Graph<double>::Var, RngStream&);

} // namespace salt
