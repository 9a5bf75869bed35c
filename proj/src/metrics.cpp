// SPDX-License-Identifier: Apache-2.0
#include "salt/metrics.hpp"

#include <cmath>

#include "salt/errors.hpp"

namespace salt {

void LatencyModel::validate() const {
    if (bandwidth_bits_per_s <= 0 || feature_size_bits <= 0 || batch_size == 0 || samples == 0 || epochs == 0) {
        throw ConfigError("latency model fields must all be positive");
    }
}

double feature_bits(const Shape& latent_shape, std::size_t dtype_bits) {
    return static_cast<double>(shape_numel(latent_shape)) * static_cast<double>(dtype_bits);
}

double comm_latency_per_batch(const LatencyModel& m) {
    m.validate();
    return 2.0 * (m.feature_size_bits * static_cast<double>(m.batch_size)) / m.bandwidth_bits_per_s;
}

double total_comm_latency(const LatencyModel& m) {
    m.validate();
    const std::uint64_t batches_per_epoch = (m.samples + m.batch_size - 1) / m.batch_size;
    return static_cast<double>(m.epochs) * static_cast<double>(batches_per_epoch) * comm_latency_per_batch(m);
}

// ---- SSIM ------------------------------------------------------------------

namespace {

template <typename T>
double ssim_plane(const T* x, const T* y, std::size_t h, std::size_t w, const SsimParams& p) {
    const std::size_t win = p.window;
    const double c1 = p.c1();
    const double c2 = p.c2();
    const double n = static_cast<double>(win * win);
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t oy = 0; oy + win <= h; ++oy) {
        for (std::size_t ox = 0; ox + win <= w; ++ox) {
            double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (std::size_t dy = 0; dy < win; ++dy) {
                const T* xr = x + (oy + dy) * w + ox;
                const T* yr = y + (oy + dy) * w + ox;
                for (std::size_t dx = 0; dx < win; ++dx) {
                    const double xv = xr[dx];
                    const double yv = yr[dx];
                    sx += xv;
                    sy += yv;
                    sxx += xv * xv;
                    syy += yv * yv;
                    sxy += xv * yv;
                }
            }
            const double mx = sx / n;
            const double my = sy / n;
            const double vx = sxx / n - mx * mx;
            const double vy = syy / n - my * my;
            const double cov = sxy / n - mx * my;
            const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

template <typename T>
double ssim_impl(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p) {
    if (!x.same_shape(y)) {
        throw DimensionError("ssim inputs must share a shape, got " + shape_str(x.shape()) + " vs " +
                             shape_str(y.shape()));
    }
    Shape s = x.shape();
    while (s.size() > 3 && s.front() == 1) s.erase(s.begin());
    std::size_t channels = 1, h = 0, w = 0;
    if (s.size() == 2) {
        h = s[0];
        w = s[1];
    } else if (s.size() == 3) {
        channels = s[0];
        h = s[1];
        w = s[2];
    } else {
        throw DimensionError("ssim expects [H,W], [C,H,W] or [1,C,H,W] inputs");
    }
    if (p.window % 2 == 0 || p.dynamic_range <= 0.0) throw ConfigError("ssim window must be odd and L > 0");
    if (h < p.window || w < p.window) throw DimensionError("ssim window larger than the image");

    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
        acc += ssim_plane(x.data() + c * h * w, y.data() + c * h * w, h, w, p);
    }
    return acc / static_cast<double>(channels);
}

} // namespace

double ssim(const Tensor<float>& x, const Tensor<float>& y, const SsimParams& params) {
    return ssim_impl(x, y, params);
}

double ssim(const Tensor<double>& x, const Tensor<double>& y, const SsimParams& params) {
    return ssim_impl(x, y, params);
}

double mse(const Tensor<float>& x, const Tensor<float>& y) {
    if (!x.same_shape(y)) throw DimensionError("mse inputs must share a shape");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

} // namespace salt
