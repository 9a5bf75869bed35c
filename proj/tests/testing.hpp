// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "salt/rng.hpp"
#include "salt/tensor.hpp"

namespace salt::testing {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform_range(lo, hi));
    return t;
}

inline bool rel_close(double analytic, double numeric, double tol) {
    const double m = std::max(std::fabs(analytic), std::fabs(numeric));
    if (m < 1e-7) return true; // both effectively zero
    return std::fabs(analytic - numeric) / m < tol;
}

/// Central finite differences against an analytic gradient buffer.
/// `loss` re-evaluates the forward pass with the current contents of the
/// perturbed buffer; it must not depend on the implementation's backward.
inline bool fd_check(double* values, const double* analytic, std::size_t n,
                     const std::function<double()>& loss, double tol = 1e-6, double h = 1e-6) {
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) {
        const double keep = values[i];
        values[i] = keep + h;
        const double up = loss();
        values[i] = keep - h;
        const double dn = loss();
        values[i] = keep;
        const double numeric = (up - dn) / (2.0 * h);
        if (!rel_close(analytic[i], numeric, tol)) ok = false;
    }
    return ok;
}

inline std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace salt::testing
