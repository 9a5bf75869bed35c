// SPDX-License-Identifier: Apache-2.0
#include "salt/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "salt/errors.hpp"

namespace salt {

Shape Dataset::sample_shape() const {
    if (images.rank() < 2) throw DimensionError("dataset images must be [N, ...]");
    return Shape(images.shape().begin() + 1, images.shape().end());
}

std::size_t Dataset::sample_numel() const {
    return size() == 0 ? 0 : images.numel() / images.dim(0);
}

Tensor<float> Dataset::gather(std::span<const std::size_t> indices) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    Tensor<float> out(shape);
    const std::size_t stride = sample_numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw DimensionError("gather index out of range");
        std::copy_n(images.data() + indices[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

std::vector<std::uint32_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<std::uint32_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
    return out;
}

// ---- synthetic generation ------------------------------------------------

nlohmann::json SyntheticDatasetSpec::to_json() const {
    nlohmann::json j;
    j["num_classes"] = num_classes;
    j["image_shape"] = image_shape;
    j["template_seed"] = template_seed;
    j["sample_noise"] = sample_noise;
    j["train_per_class"] = train_per_class;
    j["test_per_class"] = test_per_class;
    j["user_subset"] = user_subset;
    j["transform"] = {{"scale", transform.scale}, {"bias", transform.bias}};
    return j;
}

SyntheticDatasetSpec SyntheticDatasetSpec::from_json(const nlohmann::json& j) {
    SyntheticDatasetSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.contains("image_shape")) s.image_shape = j.at("image_shape").get<Shape>();
    s.template_seed = j.value("template_seed", s.template_seed);
    s.sample_noise = j.value("sample_noise", s.sample_noise);
    s.train_per_class = j.value("train_per_class", s.train_per_class);
    s.test_per_class = j.value("test_per_class", s.test_per_class);
    if (j.contains("user_subset")) s.user_subset = j.at("user_subset").get<std::vector<std::uint32_t>>();
    if (j.contains("transform")) {
        s.transform.scale = j.at("transform").value("scale", 1.0);
        s.transform.bias = j.at("transform").value("bias", 0.0);
    }
    return s;
}

namespace {

float clip01(double v) {
    return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

Dataset generate_split(const SyntheticDatasetSpec& spec, const std::vector<Tensor<float>>& templates,
                       std::uint32_t per_class, RngStream& samples) {
    const std::size_t pixels = shape_numel(spec.image_shape);
    const std::size_t total = static_cast<std::size_t>(spec.num_classes) * per_class;
    Shape shape = spec.image_shape;
    shape.insert(shape.begin(), std::max<std::size_t>(total, 1));
    Dataset out;
    out.images = Tensor<float>(shape);
    out.labels.reserve(total);
    std::size_t row = 0;
    for (std::uint32_t k = 0; k < spec.num_classes; ++k) {
        const Tensor<float>& tpl = templates[k];
        for (std::uint32_t i = 0; i < per_class; ++i) {
            float* dst = out.images.data() + row * pixels;
            for (std::size_t px = 0; px < pixels; ++px) {
                const double noisy = tpl[px] + spec.sample_noise * samples.normal();
                dst[px] = clip01(spec.transform.scale * noisy + spec.transform.bias);
            }
            out.labels.push_back(k);
            ++row;
        }
    }
    if (total == 0) out.images = Tensor<float>(Shape{1, 1, 1, 1}); // placeholder, labels empty
    return out;
}

Dataset filter_subset(Dataset&& d, const std::vector<std::uint32_t>& subset) {
    if (subset.empty()) return std::move(d);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (std::find(subset.begin(), subset.end(), d.labels[i]) != subset.end()) keep.push_back(i);
    }
    Dataset out;
    out.images = d.gather(keep);
    out.labels = d.gather_labels(keep);
    return out;
}

} // namespace

TrainTestSplit generate_synthetic(const SyntheticDatasetSpec& spec, const RngStream& rng) {
    if (!spec.user_subset.empty()) {
        std::vector<std::uint32_t> sorted = spec.user_subset;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConfigError("user subset has duplicate classes");
        }
        if (sorted.back() >= spec.num_classes) throw ConfigError("user subset class out of range");
    }

    RngStream template_stream(spec.template_seed, "templates");
    std::vector<Tensor<float>> templates;
    templates.reserve(spec.num_classes);
    for (std::uint32_t k = 0; k < spec.num_classes; ++k) {
        Tensor<float> tpl(spec.image_shape);
        for (std::size_t i = 0; i < tpl.numel(); ++i) tpl[i] = static_cast<float>(template_stream.uniform());
        templates.push_back(std::move(tpl));
    }

    RngStream samples = rng.fork("samples");
    TrainTestSplit split;
    split.train = filter_subset(generate_split(spec, templates, spec.train_per_class, samples), spec.user_subset);
    split.test = filter_subset(generate_split(spec, templates, spec.test_per_class, samples), spec.user_subset);
    return split;
}

void shuffle_indices(std::vector<std::size_t>& indices, RngStream& rng) {
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = rng.next_u64() % i;
        std::swap(indices[i - 1], indices[j]);
    }
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& data, double val_fraction, RngStream rng) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0) throw ConfigError("val fraction must lie in (0,1)");
    std::uint32_t max_label = 0;
    for (std::uint32_t y : data.labels) max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> per_class(max_label + 1);
    for (std::size_t i = 0; i < data.size(); ++i) per_class[data.labels[i]].push_back(i);

    std::vector<std::size_t> train_idx, val_idx;
    for (auto& bucket : per_class) {
        if (bucket.empty()) continue;
        shuffle_indices(bucket, rng);
        std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(bucket.size()));
        n_val = std::min(std::max<std::size_t>(n_val, 1), bucket.size() - 1);
        for (std::size_t i = 0; i < bucket.size(); ++i) {
            (i < n_val ? val_idx : train_idx).push_back(bucket[i]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    Dataset train{data.gather(train_idx), data.gather_labels(train_idx)};
    Dataset val{data.gather(val_idx), data.gather_labels(val_idx)};
    return {std::move(train), std::move(val)};
}

// ---- CIFAR-10 ---------------------------------------------------------------

Dataset load_cifar10(const std::vector<std::string>& files) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    std::vector<std::uint8_t> raw;
    for (const std::string& path : files) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open CIFAR file: " + path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (bytes.size() % kRecord != 0) {
            throw IoError("CIFAR file size is not a multiple of the 3073-byte record: " + path);
        }
        raw.insert(raw.end(), bytes.begin(), bytes.end());
    }
    const std::size_t n = raw.size() / kRecord;
    if (n == 0) throw IoError("no CIFAR records found");
    Dataset out;
    out.images = Tensor<float>({n, 3, 32, 32});
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = raw.data() + i * kRecord;
        if (rec[0] > 9) throw IoError("CIFAR label byte out of range");
        out.labels[i] = rec[0];
        float* dst = out.images.data() + i * 3072;
        for (std::size_t px = 0; px < 3072; ++px) dst[px] = static_cast<float>(rec[1 + px]) / 255.0f;
    }
    return out;
}

} // namespace salt
