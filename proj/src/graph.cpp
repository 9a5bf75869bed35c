// SPDX-License-Identifier: Apache-2.0
#include "salt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace salt {

namespace {

template <typename T>
void check_rank4(const Tensor<T>& t, const char* what) {
    if (t.rank() != 4) {
        throw DimensionError(std::string(what) + " must be rank 4, got " + shape_str(t.shape()));
    }
}

// Output extent of a 1-D cross-correlation; throws unless it is a positive
// integer as required by the conv contract.
std::size_t conv_out_extent(std::size_t in, int k, int stride, int padding, const char* axis) {
    long numer = static_cast<long>(in) + 2L * padding - k;
    if (numer < 0 || numer % stride != 0) {
        throw DimensionError(std::string("conv2d: (") + axis + " + 2*padding - k) must be a nonnegative multiple of stride");
    }
    return static_cast<std::size_t>(numer / stride) + 1;
}

} // namespace

// ---- tape machinery --------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::emplace(Tensor<T> value, std::function<void(Graph&)> backprop) {
    Node node;
    node.grad = Tensor<T>(value.shape());
    node.value = std::move(value);
    node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::Var Graph<T>::input(Tensor<T> value) {
    return emplace(std::move(value), nullptr);
}

template <typename T>
typename Graph<T>::Var Graph<T>::use(Parameter<T>& p) {
    if (!p.grad.same_shape(p.value)) {
        throw ContractError("parameter grad shape does not match value shape");
    }
    Parameter<T>* pp = &p;
    Var v = emplace(p.value, nullptr);
    std::size_t self = v.idx;
    nodes_[self].backprop = [self, pp](Graph& g) {
        const Tensor<T>& gsrc = g.nodes_[self].grad;
        pp->backwarded = true;
        T* dst = pp->grad.data();
        const T* src = gsrc.data();
        for (std::size_t i = 0; i < gsrc.numel(); ++i) dst[i] += src[i];
    };
    return v;
}

template <typename T>
void Graph<T>::run_backward(std::size_t from) {
    for (std::size_t i = from + 1; i-- > 0;) {
        if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
}

template <typename T>
void Graph<T>::backward(Var loss) {
    if (!loss.valid() || loss.idx >= nodes_.size()) throw ContractError("backward: invalid var");
    if (nodes_[loss.idx].value.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(nodes_[loss.idx].value.shape()));
    }
    for (Node& n : nodes_) n.grad.fill(T(0));
    nodes_[loss.idx].grad[0] = T(1);
    run_backward(loss.idx);
}

template <typename T>
void Graph<T>::backward(Var node, const Tensor<T>& seed) {
    if (!node.valid() || node.idx >= nodes_.size()) throw ContractError("backward: invalid var");
    if (!seed.same_shape(nodes_[node.idx].value)) {
        throw DimensionError("backward seed shape " + shape_str(seed.shape()) +
                             " does not match node shape " + shape_str(nodes_[node.idx].value.shape()));
    }
    for (Node& n : nodes_) n.grad.fill(T(0));
    nodes_[node.idx].grad = seed;
    run_backward(node.idx);
}

// ---- conv2d ----------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::conv2d(Var xv, Var wv, Var bv, int stride, int padding) {
    const Tensor<T>& x = val(xv);
    const Tensor<T>& w = val(wv);
    const Tensor<T>& b = val(bv);
    check_rank4(x, "conv2d input");
    check_rank4(w, "conv2d weight");
    const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0);
    const int k = static_cast<int>(w.dim(2));
    if (k != 1 && k != 3) throw DimensionError("conv2d kernel must be 1 or 3");
    if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d kernel must be square");
    if (w.dim(1) != Ci) {
        throw DimensionError("conv2d: input has " + std::to_string(Ci) + " channels, weight expects " +
                             std::to_string(w.dim(1)));
    }
    if (b.rank() != 1 || b.dim(0) != Co) throw DimensionError("conv2d bias must be [C_out]");
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    const std::size_t Ho = conv_out_extent(H, k, stride, padding, "H");
    const std::size_t Wo = conv_out_extent(W, k, stride, padding, "W");

    Tensor<T> out({N, Co, Ho, Wo});
    const T* xp = x.data();
    const T* wp = w.data();
    T* op = out.data();
    constexpr std::size_t kRowCap = 64; // desk rows are at most 16 wide
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t co = 0; co < Co; ++co) {
            T* obase = op + ((n * Co + co) * Ho) * Wo;
            const T bias = b[co];
            if (stride == 1 && Wo <= kRowCap) {
                // row-resident accumulator: one store per output row
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    T acc[kRowCap];
                    for (std::size_t i = 0; i < Wo; ++i) acc[i] = bias;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        const T* xbase = xp + ((n * Ci + ci) * H) * W;
                        for (int kh = 0; kh < k; ++kh) {
                            const long ih = static_cast<long>(oh) - padding + kh;
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            const T* xrow = xbase + ih * W;
                            for (int kw = 0; kw < k; ++kw) {
                                const T wgt = wp[(((co * Ci + ci) * k + kh) * k) + kw];
                                const long shift = kw - padding;
                                const long lo = std::max(0L, -shift);
                                const long hi =
                                    std::min(static_cast<long>(Wo) - 1, static_cast<long>(W) - 1 - shift);
                                const T* __restrict__ xs = xrow + shift;
                                for (long ow = lo; ow <= hi; ++ow) acc[ow] += wgt * xs[ow];
                            }
                        }
                    }
                    T* __restrict__ orow = obase + oh * Wo;
                    for (std::size_t i = 0; i < Wo; ++i) orow[i] = acc[i];
                }
                continue;
            }
            for (std::size_t i = 0; i < Ho * Wo; ++i) obase[i] = bias;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
                const T* xbase = xp + ((n * Ci + ci) * H) * W;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T wgt = wp[(((co * Ci + ci) * k + kh) * k) + kw];
                        for (std::size_t oh = 0; oh < Ho; ++oh) {
                            const long ih = static_cast<long>(oh) * stride - padding + kh;
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            const T* xrow = xbase + ih * W;
                            T* orow = obase + oh * Wo;
                            // valid ow range so that iw = ow*stride - padding + kw lies in [0, W)
                            const long shift = kw - padding;
                            for (long ow = 0; ow < static_cast<long>(Wo); ++ow) {
                                const long iw = ow * stride + shift;
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                orow[ow] += wgt * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }

    std::size_t xi = xv.idx, wi = wv.idx, bi = bv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        const Tensor<T>& xt = g.nodes_[xi].value;
        const Tensor<T>& wt = g.nodes_[wi].value;
        Tensor<T>& dx = g.nodes_[xi].grad;
        Tensor<T>& dw = g.nodes_[wi].grad;
        Tensor<T>& db = g.nodes_[bi].grad;
        const T* gp = gout.data();
        const T* xp2 = xt.data();
        const T* wp2 = wt.data();
        constexpr std::size_t kRowCap = 64;

        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
                const T* gbase = gp + ((n * Co + co) * Ho) * Wo;
                T acc = T(0);
                for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gbase[i];
                db[co] += acc;
            }
        }

        if (stride == 1 && W <= kRowCap) {
            // input-gradient rows stay register-resident across (co, kh, kw)
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    T* dxbase = dx.data() + ((n * Ci + ci) * H) * W;
                    for (std::size_t ih = 0; ih < H; ++ih) {
                        T dacc[kRowCap] = {};
                        for (std::size_t co = 0; co < Co; ++co) {
                            const T* gbase = gp + ((n * Co + co) * Ho) * Wo;
                            for (int kh = 0; kh < k; ++kh) {
                                const long oh = static_cast<long>(ih) + padding - kh;
                                if (oh < 0 || oh >= static_cast<long>(Ho)) continue;
                                const T* grow = gbase + oh * Wo;
                                for (int kw = 0; kw < k; ++kw) {
                                    const T wgt = wp2[(((co * Ci + ci) * k + kh) * k) + kw];
                                    const long shift = kw - padding; // iw = ow + shift
                                    const long lo = std::max(0L, shift);
                                    const long hi =
                                        std::min(static_cast<long>(W) - 1, static_cast<long>(Wo) - 1 + shift);
                                    const T* __restrict__ gs = grow - shift;
                                    for (long iw = lo; iw <= hi; ++iw) dacc[iw] += wgt * gs[iw];
                                }
                            }
                        }
                        T* __restrict__ dxrow = dxbase + ih * W;
                        for (std::size_t i = 0; i < W; ++i) dxrow[i] += dacc[i];
                    }
                }
            }
            // weight gradients: blocked dot products with fixed lane order
            for (std::size_t co = 0; co < Co; ++co) {
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    for (int kh = 0; kh < k; ++kh) {
                        for (int kw = 0; kw < k; ++kw) {
                            const long shift = kw - padding;
                            const long lo = std::max(0L, -shift);
                            T lanes[8] = {};
                            for (std::size_t n = 0; n < N; ++n) {
                                const T* gbase = gp + ((n * Co + co) * Ho) * Wo;
                                const T* xbase = xp2 + ((n * Ci + ci) * H) * W;
                                for (std::size_t oh = 0; oh < Ho; ++oh) {
                                    const long ih = static_cast<long>(oh) - padding + kh;
                                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                    const T* __restrict__ gs = gbase + oh * Wo;
                                    const T* __restrict__ xs = xbase + ih * W + shift;
                                    const long hi =
                                        std::min(static_cast<long>(Wo) - 1, static_cast<long>(W) - 1 - shift);
                                    for (long ow = lo; ow <= hi; ++ow) lanes[(ow - lo) & 7] += gs[ow] * xs[ow];
                                }
                            }
                            T dwacc = T(0);
                            for (int l = 0; l < 8; ++l) dwacc += lanes[l];
                            dw[(((co * Ci + ci) * k + kh) * k) + kw] += dwacc;
                        }
                    }
                }
            }
            return;
        }

        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
                const T* gbase = gp + ((n * Co + co) * Ho) * Wo;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    const T* xbase = xp2 + ((n * Ci + ci) * H) * W;
                    T* dxbase = dx.data() + ((n * Ci + ci) * H) * W;
                    for (int kh = 0; kh < k; ++kh) {
                        for (int kw = 0; kw < k; ++kw) {
                            const std::size_t widx = (((co * Ci + ci) * k + kh) * k) + kw;
                            const T wgt = wp2[widx];
                            T dwacc = T(0);
                            for (std::size_t oh = 0; oh < Ho; ++oh) {
                                const long ih = static_cast<long>(oh) * stride - padding + kh;
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                const T* xrow = xbase + ih * W;
                                T* dxrow = dxbase + ih * W;
                                const T* grow = gbase + oh * Wo;
                                const long shift = kw - padding;
                                for (long ow = 0; ow < static_cast<long>(Wo); ++ow) {
                                    const long iw = ow * stride + shift;
                                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                    const T go = grow[ow];
                                    dwacc += go * xrow[iw];
                                    dxrow[iw] += wgt * go;
                                }
                            }
                            dw[widx] += dwacc;
                        }
                    }
                }
            }
        }
    };
    return out_v;
}

// ---- batchnorm2d -----------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::batchnorm2d(Var xv, Var gv, Var bv,
                                             Tensor<T>& running_mean, Tensor<T>& running_var,
                                             bool training, T momentum, T epsilon) {
    const Tensor<T>& x = val(xv);
    check_rank4(x, "batchnorm input");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t m = N * H * W;
    if (val(gv).numel() != C || val(bv).numel() != C) {
        throw DimensionError("batchnorm gamma/beta must have one entry per channel");
    }
    if (running_mean.numel() != C || running_var.numel() != C) {
        throw DimensionError("batchnorm running stats must have one entry per channel");
    }
    if (training && m < 2) {
        throw DimensionError("batchnorm train mode needs N*H*W >= 2 (degenerate batch)");
    }

    const T* xp = x.data();
    const T* gamma = val(gv).data();
    const T* beta = val(bv).data();
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(C);

    auto channel_loop = [&](std::size_t c, auto&& fn) {
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = ((n * C + c) * H) * W;
            for (std::size_t i = 0; i < H * W; ++i) fn(base + i);
        }
    };

    for (std::size_t c = 0; c < C; ++c) {
        T mean, var;
        if (training) {
            T s = T(0);
            channel_loop(c, [&](std::size_t i) { s += xp[i]; });
            mean = s / static_cast<T>(m);
            T sq = T(0);
            channel_loop(c, [&](std::size_t i) {
                const T d = xp[i] - mean;
                sq += d * d;
            });
            var = sq / static_cast<T>(m); // biased, used for normalization
            const T unbiased = (m > 1) ? sq / static_cast<T>(m - 1) : var;
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T istd = T(1) / std::sqrt(var + epsilon);
        inv_std[c] = istd;
        const T gc = gamma[c], bc = beta[c];
        channel_loop(c, [&](std::size_t i) {
            const T xh = (xp[i] - mean) * istd;
            xhat[i] = xh;
            out[i] = gc * xh + bc;
        });
    }

    std::size_t xi = xv.idx, gi = gv.idx, bi = bv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        Tensor<T>& dgamma = g.nodes_[gi].grad;
        Tensor<T>& dbeta = g.nodes_[bi].grad;
        const T* gamma2 = g.nodes_[gi].value.data();
        const T* gp = gout.data();
        for (std::size_t c = 0; c < C; ++c) {
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t base = ((n * C + c) * H) * W;
                for (std::size_t i = 0; i < H * W; ++i) {
                    sum_dy += gp[base + i];
                    sum_dy_xhat += gp[base + i] * xhat[base + i];
                }
            }
            dbeta[c] += sum_dy;
            dgamma[c] += sum_dy_xhat;
            const T gc = gamma2[c] * inv_std[c];
            if (training) {
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t base = ((n * C + c) * H) * W;
                    for (std::size_t i = 0; i < H * W; ++i) {
                        const std::size_t j = base + i;
                        dx[j] += gc * (gp[j] - inv_m * sum_dy - xhat[j] * inv_m * sum_dy_xhat);
                    }
                }
            } else {
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t base = ((n * C + c) * H) * W;
                    for (std::size_t i = 0; i < H * W; ++i) dx[base + i] += gc * gp[base + i];
                }
            }
        }
    };
    return out_v;
}

// ---- relu ------------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::relu(Var xv) {
    const Tensor<T>& x = val(xv);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        const Tensor<T>& xt = g.nodes_[xi].value;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) {
            if (xt[i] > T(0)) dx[i] += gout[i]; // subgradient at 0 is 0
        }
    };
    return out_v;
}

// ---- maxpool2d -------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::maxpool2d(Var xv, int k, int stride) {
    const Tensor<T>& x = val(xv);
    check_rank4(x, "maxpool input");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k < 1 || stride < 1) throw DimensionError("maxpool window and stride must be >= 1");
    if (H % stride != 0 || W % stride != 0) {
        throw DimensionError("maxpool: spatial dims " + shape_str({H, W}) +
                             " not divisible by stride " + std::to_string(stride));
    }
    if (H < static_cast<std::size_t>(k) || W < static_cast<std::size_t>(k)) {
        throw DimensionError("maxpool window larger than input");
    }
    const std::size_t Ho = (H - k) / stride + 1;
    const std::size_t Wo = (W - k) / stride + 1;

    Tensor<T> out({N, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.numel());
    const T* xp = x.data();
    std::size_t oidx = 0;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = ((n * C + c) * H) * W;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    std::size_t best = base + (oh * stride) * W + ow * stride;
                    T bestv = xp[best];
                    for (int dh = 0; dh < k; ++dh) {
                        for (int dw = 0; dw < k; ++dw) {
                            const std::size_t idx = base + (oh * stride + dh) * W + (ow * stride + dw);
                            if (xp[idx] > bestv) { // ties keep the lowest flat index
                                bestv = xp[idx];
                                best = idx;
                            }
                        }
                    }
                    out[oidx] = bestv;
                    argmax[oidx] = best;
                    ++oidx;
                }
            }
        }
    }

    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=, argmax = std::move(argmax)](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) dx[argmax[i]] += gout[i];
    };
    return out_v;
}

// ---- linear ----------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::linear(Var xv, Var wv, Var bv) {
    const Tensor<T>& x = val(xv);
    const Tensor<T>& w = val(wv);
    const Tensor<T>& b = val(bv);
    if (x.rank() != 2 || w.rank() != 2) throw DimensionError("linear expects rank-2 input and weight");
    const std::size_t N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    if (w.dim(1) != Din) {
        throw DimensionError("linear: input features " + std::to_string(Din) +
                             " vs weight expects " + std::to_string(w.dim(1)));
    }
    if (b.rank() != 1 || b.dim(0) != Dout) throw DimensionError("linear bias must be [D_out]");

    Tensor<T> out({N, Dout});
    const T* xp = x.data();
    const T* wp = w.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < Dout; ++o) {
            T acc = b[o];
            const T* xr = xp + n * Din;
            const T* wr = wp + o * Din;
            for (std::size_t i = 0; i < Din; ++i) acc += xr[i] * wr[i];
            out[n * Dout + o] = acc;
        }
    }

    std::size_t xi = xv.idx, wi = wv.idx, bi = bv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        const Tensor<T>& xt = g.nodes_[xi].value;
        const Tensor<T>& wt = g.nodes_[wi].value;
        Tensor<T>& dx = g.nodes_[xi].grad;
        Tensor<T>& dw = g.nodes_[wi].grad;
        Tensor<T>& db = g.nodes_[bi].grad;
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t o = 0; o < Dout; ++o) {
                const T go = gout[n * Dout + o];
                db[o] += go;
                const T* xr = xt.data() + n * Din;
                const T* wr = wt.data() + o * Din;
                T* dxr = dx.data() + n * Din;
                T* dwr = dw.data() + o * Din;
                for (std::size_t i = 0; i < Din; ++i) {
                    dwr[i] += go * xr[i];
                    dxr[i] += go * wr[i];
                }
            }
        }
    };
    return out_v;
}

// ---- shape ops -------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::flatten(Var xv) {
    const Tensor<T>& x = val(xv);
    if (x.rank() < 2) throw DimensionError("flatten expects rank >= 2");
    const std::size_t N = x.dim(0);
    Tensor<T> out({N, x.numel() / N}, x.vec());
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) dx[i] += gout[i];
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::add(Var av, Var bv) {
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    if (!a.same_shape(b)) {
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    std::size_t ai = av.idx, bi = bv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& da = g.nodes_[ai].grad;
        Tensor<T>& db = g.nodes_[bi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) {
            da[i] += gout[i];
            db[i] += gout[i];
        }
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::mul_const(Var xv, const Tensor<T>& m) {
    const Tensor<T>& x = val(xv);
    if (!x.same_shape(m)) {
        throw DimensionError("mul_const: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(m.shape()));
    }
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * m[i];
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=, m = m](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) dx[i] += gout[i] * m[i];
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::add_const(Var xv, const Tensor<T>& c) {
    const Tensor<T>& x = val(xv);
    if (!x.same_shape(c)) {
        throw DimensionError("add_const: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
    }
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + c[i];
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < gout.numel(); ++i) dx[i] += gout[i];
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::upsample_nearest2(Var xv) {
    const Tensor<T>& x = val(xv);
    check_rank4(x, "upsample input");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({N, C, 2 * H, 2 * W});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* xb = x.data() + nc * H * W;
        T* ob = out.data() + nc * 4 * H * W;
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) {
                const T v = xb[h * W + w];
                const std::size_t o = (2 * h) * (2 * W) + 2 * w;
                ob[o] = v;
                ob[o + 1] = v;
                ob[o + 2 * W] = v;
                ob[o + 2 * W + 1] = v;
            }
        }
    }
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const Tensor<T>& gout = g.nodes_[self].grad;
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t nc = 0; nc < N * C; ++nc) {
            const T* gb = gout.data() + nc * 4 * H * W;
            T* dxb = dx.data() + nc * H * W;
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w < W; ++w) {
                    const std::size_t o = (2 * h) * (2 * W) + 2 * w;
                    dxb[h * W + w] += gb[o] + gb[o + 1] + gb[o + 2 * W] + gb[o + 2 * W + 1];
                }
            }
        }
    };
    return out_v;
}

// ---- losses ----------------------------------------------------------------

template <typename T>
typename Graph<T>::Var Graph<T>::softmax_cross_entropy(Var lv, std::span<const std::uint32_t> labels) {
    const Tensor<T>& logits = val(lv);
    if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy expects [N,K] logits");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    if (labels.size() != N) {
        throw DimensionError("label count " + std::to_string(labels.size()) + " vs batch " + std::to_string(N));
    }
    for (std::uint32_t y : labels) {
        if (y >= K) throw LabelError("label " + std::to_string(y) + " out of range [0," + std::to_string(K) + ")");
    }

    Tensor<T> probs({N, K});
    T loss_acc = T(0);
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = logits.data() + n * K;
        T mx = row[0];
        for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < K; ++j) {
            const T e = std::exp(row[j] - mx);
            probs[n * K + j] = e;
            s += e;
        }
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < K; ++j) probs[n * K + j] *= inv;
        loss_acc += -(row[labels[n]] - mx - std::log(s));
    }
    Tensor<T> loss({1});
    loss[0] = loss_acc / static_cast<T>(N);

    std::size_t li = lv.idx;
    std::vector<std::uint32_t> ylab(labels.begin(), labels.end());
    Var out_v = emplace(std::move(loss), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=, probs = std::move(probs), ylab = std::move(ylab)](Graph& g) {
        const T go = g.nodes_[self].grad[0];
        Tensor<T>& dl = g.nodes_[li].grad;
        const T scale = go / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t j = 0; j < K; ++j) {
                T v = probs[n * K + j];
                if (j == ylab[n]) v -= T(1);
                dl[n * K + j] += scale * v;
            }
        }
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::mse_loss(Var pv, const Tensor<T>& target) {
    const Tensor<T>& pred = val(pv);
    if (!pred.same_shape(target)) {
        throw DimensionError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    T acc = T(0);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const T d = pred[i] - target[i];
        acc += d * d;
    }
    Tensor<T> loss({1});
    loss[0] = acc / static_cast<T>(pred.numel());

    std::size_t pi = pv.idx;
    Var out_v = emplace(std::move(loss), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=, target = target](Graph& g) {
        const T go = g.nodes_[self].grad[0];
        const Tensor<T>& pt = g.nodes_[pi].value;
        Tensor<T>& dp = g.nodes_[pi].grad;
        const T scale = T(2) * go / static_cast<T>(pt.numel());
        for (std::size_t i = 0; i < pt.numel(); ++i) dp[i] += scale * (pt[i] - target[i]);
    };
    return out_v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::sum(Var xv) {
    const Tensor<T>& x = val(xv);
    T acc = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor<T> out({1});
    out[0] = acc;
    std::size_t xi = xv.idx;
    Var out_v = emplace(std::move(out), nullptr);
    std::size_t self = out_v.idx;
    nodes_[self].backprop = [=](Graph& g) {
        const T go = g.nodes_[self].grad[0];
        Tensor<T>& dx = g.nodes_[xi].grad;
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += go;
    };
    return out_v;
}

template class Graph<float>;
template class Graph<double>;

} // namespace salt
