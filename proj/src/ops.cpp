#include "featherpoint/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "featherpoint/error.hpp"
#include "featherpoint/trace.hpp"
#include "kernels.hpp"

namespace featherpoint::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
    }
}

// Accumulates into parent `i` if it takes gradients.
inline double* grad_of(Node& n, std::size_t i) {
    Node& p = *n.parents[i];
    if (!p.requires_grad) return nullptr;
    return p.ensure_grad().data();
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F f, D dfdx) {
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    auto r = make_result(name, x.shape(), std::move(out), {x}, [dfdx](Node& n) {
        double* gx = grad_of(n, 0);
        if (!gx) return;
        const auto& xv = n.parents[0]->data;
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += n.grad[i] * dfdx(xv[i], n.data[i]);
    });
    trace_op(name, {&x}, r, 0);
    return r;
}

// Decomposes a shape around `axis` into outer * len * inner.
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
    AxisView(const Shape& s, std::size_t axis) {
        if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        len = s[axis];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    }
    std::size_t index(std::size_t o, std::size_t k, std::size_t in) const { return (o * len + k) * inner + in; }
};

}  // namespace

BatchNormState BatchNormState::identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto r = make_result("add", a.shape(), std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = grad_of(n, k)) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
            }
        }
    });
    trace_op("add", {&a, &b}, r, 0);
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto r = make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& n) {
        const auto& x = n.parents[0]->data;
        const auto& y = n.parents[1]->data;
        if (double* g = grad_of(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * y[i];
        }
        if (double* g = grad_of(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * x[i];
        }
    });
    trace_op("mul", {&a, &b}, r, 0);
    return r;
}

Tensor scale(const Tensor& a, double s) {
    return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto r = make_result("sum", Shape{1}, {s}, {a}, [](Node& n) {
        if (double* g = grad_of(n, 0)) {
            const std::size_t len = n.parents[0]->data.size();
            for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[0];
        }
    });
    trace_op("sum", {&a}, r, 0);
    return r;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t F = kernel.dim(0), KC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
    if (KC != C) {
        throw ShapeError("conv2d: kernel dim 1 (input channels) is " + std::to_string(KC) + " but input has " +
                         std::to_string(C) + " channels");
    }
    if (KH % 2 == 0 || KW % 2 == 0) throw ShapeError("conv2d: kernel spatial dims must be odd");
    if (stride == 0) throw ValueError("conv2d: stride must be positive");
    if (H + 2 * padding < KH || W + 2 * padding < KW) throw ShapeError("conv2d: kernel larger than padded input");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != F)) {
        throw ShapeError("conv2d: bias dim 0 must equal kernel output channels " + std::to_string(F));
    }
    const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
    const std::size_t OW = (W + 2 * padding - KW) / stride + 1;
    const kernels::ConvGeometry geo{C, H, W, KH, KW, stride, padding, OH, OW};
    const std::size_t P = OH * OW, K = C * KH * KW;

    std::vector<double> out(N * F * P, 0.0);
    std::vector<double> cols(K * P);
    auto x = input.data();
    auto w = kernel.data();
    for (std::size_t n = 0; n < N; ++n) {
        kernels::im2col(geo, x.data() + n * C * H * W, cols.data());
        double* y = out.data() + n * F * P;
        kernels::gemm_nn(F, P, K, w.data(), cols.data(), y);
        if (bias.defined()) {
            auto b = bias.data();
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t p = 0; p < P; ++p) y[f * P + p] += b[f];
        }
    }

    std::vector<Tensor> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    const bool has_bias = bias.defined();
    auto r = make_result("conv2d", Shape{N, F, OH, OW}, std::move(out), parents, [geo, N, F, P, K, has_bias](Node& n) {
        const auto& xv = n.parents[0]->data;
        const auto& wv = n.parents[1]->data;
        double* gx = grad_of(n, 0);
        double* gw = grad_of(n, 1);
        double* gb = has_bias ? grad_of(n, 2) : nullptr;
        const std::size_t in_sz = geo.channels * geo.height * geo.width;
        std::vector<double> cols(K * P), dcols(K * P);
        for (std::size_t b = 0; b < N; ++b) {
            const double* gy = n.grad.data() + b * F * P;
            if (gw) {
                kernels::im2col(geo, xv.data() + b * in_sz, cols.data());
                kernels::gemm_nt(F, K, P, gy, cols.data(), gw);
            }
            if (gx) {
                std::fill(dcols.begin(), dcols.end(), 0.0);
                kernels::gemm_tn(K, P, F, wv.data(), gy, dcols.data());
                kernels::col2im(geo, dcols.data(), gx + b * in_sz);
            }
            if (gb) {
                for (std::size_t f = 0; f < F; ++f) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < P; ++p) s += gy[f * P + p];
                    gb[f] += s;
                }
            }
        }
    });
    trace_op("conv2d", {&input, &kernel, &bias}, r, static_cast<std::uint64_t>(N) * F * P * K);
    return r;
}

Tensor affine_channel(const Tensor& input, const Tensor& scale_t, const Tensor& bias) {
    require_rank(input, 4, "affine_channel", "input");
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    if (scale_t.numel() != C || bias.numel() != C) {
        throw ShapeError("affine_channel: scale/bias length must equal channel count " + std::to_string(C));
    }
    auto x = input.data();
    auto s = scale_t.data();
    auto b = bias.data();
    std::vector<double> out(x.size());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) out[off + i] = s[c] * x[off + i] + b[c];
        }
    auto r = make_result("affine_channel", input.shape(), std::move(out), {input, scale_t, bias},
                         [N, C, HW](Node& n) {
                             const auto& xv = n.parents[0]->data;
                             const auto& sv = n.parents[1]->data;
                             double* gx = grad_of(n, 0);
                             double* gs = grad_of(n, 1);
                             double* gb = grad_of(n, 2);
                             for (std::size_t b = 0; b < N; ++b)
                                 for (std::size_t c = 0; c < C; ++c) {
                                     const std::size_t off = (b * C + c) * HW;
                                     double ss = 0.0, sb = 0.0;
                                     for (std::size_t i = 0; i < HW; ++i) {
                                         const double g = n.grad[off + i];
                                         if (gx) gx[off + i] += g * sv[c];
                                         ss += g * xv[off + i];
                                         sb += g;
                                     }
                                     if (gs) gs[c] += ss;
                                     if (gb) gb[c] += sb;
                                 }
                         });
    trace_op("affine_channel", {&input, &scale_t, &bias}, r, static_cast<std::uint64_t>(N) * C * HW);
    return r;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   NormMode mode, double momentum, double eps) {
    require_rank(input, 4, "batchnorm2d", "input");
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    if (gamma.numel() != C || beta.numel() != C) {
        throw ShapeError("batchnorm2d: gamma/beta length must equal channel count " + std::to_string(C));
    }
    if (state.running_mean.size() != C || state.running_var.size() != C) {
        throw ShapeError("batchnorm2d: running stats length must equal channel count " + std::to_string(C));
    }
    const std::size_t M = N * HW;
    if (mode == NormMode::Train && M < 2) {
        throw ValueError("batchnorm2d: train mode needs N*H*W >= 2 per channel (variance undefined)");
    }
    auto x = input.data();
    auto g = gamma.data();
    auto be = beta.data();
    std::vector<double> mu(C), inv_std(C);
    if (mode == NormMode::Train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < N; ++b)
                for (std::size_t i = 0; i < HW; ++i) s += x[(b * C + c) * HW + i];
            const double m = s / static_cast<double>(M);
            double v = 0.0;
            for (std::size_t b = 0; b < N; ++b)
                for (std::size_t i = 0; i < HW; ++i) {
                    const double d = x[(b * C + c) * HW + i] - m;
                    v += d * d;
                }
            const double var = v / static_cast<double>(M);
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + eps);
            const double unbiased = v / static_cast<double>(M - 1);
            state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
            state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
        }
    }
    std::vector<double> xhat(x.size()), out(x.size());
    for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                xhat[off + i] = (x[off + i] - mu[c]) * inv_std[c];
                out[off + i] = g[c] * xhat[off + i] + be[c];
            }
        }
    const bool train = mode == NormMode::Train;
    auto r = make_result(
        "batchnorm2d", input.shape(), std::move(out), {input, gamma, beta},
        [N, C, HW, M, train, xhat = std::move(xhat), inv_std](Node& n) {
            const auto& gv = n.parents[1]->data;
            double* gx = grad_of(n, 0);
            double* gg = grad_of(n, 1);
            double* gb = grad_of(n, 2);
            for (std::size_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t i = 0; i < HW; ++i) {
                        const std::size_t k = (b * C + c) * HW + i;
                        sum_g += n.grad[k];
                        sum_gx += n.grad[k] * xhat[k];
                    }
                if (gg) gg[c] += sum_gx;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                const double gam = gv[c];
                const double inv_m = 1.0 / static_cast<double>(M);
                for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t i = 0; i < HW; ++i) {
                        const std::size_t k = (b * C + c) * HW + i;
                        if (train) {
                            gx[k] += gam * inv_std[c] * (n.grad[k] - inv_m * sum_g - xhat[k] * inv_m * sum_gx);
                        } else {
                            gx[k] += gam * inv_std[c] * n.grad[k];
                        }
                    }
            }
        });
    trace_op("batchnorm2d", {&input, &gamma, &beta}, r, static_cast<std::uint64_t>(N) * C * HW);
    return r;
}

Tensor relu(const Tensor& x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor hardtanh(const Tensor& x, double lo, double hi) {
    if (!(lo < hi)) throw ValueError("hardtanh: lo must be < hi");
    return unary("hardtanh", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                 [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor hardsigmoid(const Tensor& x) {
    return unary("hardsigmoid", x, [](double v) { return std::clamp(v / 6.0 + 0.5, 0.0, 1.0); },
                 [](double v, double) { return (v > -3.0 && v < 3.0) ? 1.0 / 6.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary("sigmoid", x,
                 [](double v) {
                     if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                     const double e = std::exp(v);
                     return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

namespace {

// Gather with a fixed index map: out[i] = in[map[i]].
Tensor gather(const char* name, const Tensor& x, Shape out_shape, std::vector<std::size_t> map) {
    auto in = x.data();
    std::vector<double> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
    auto r = make_result(name, std::move(out_shape), std::move(out), {x}, [map = std::move(map)](Node& n) {
        if (double* g = grad_of(n, 0)) {
            for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += n.grad[i];
        }
    });
    trace_op(name, {&x}, r, 0);
    return r;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
    require_rank(x, 4, "pixel_shuffle", "input");
    if (r == 0) throw ValueError("pixel_shuffle: r must be positive");
    const std::size_t N = x.dim(0), CR = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (CR % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: channel count " + std::to_string(CR) + " not divisible by r^2 = " +
                         std::to_string(r * r));
    }
    const std::size_t C = CR / (r * r), OH = H * r, OW = W * r;
    std::vector<std::size_t> map(N * C * OH * OW);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const std::size_t h = oh / r, i = oh % r, w = ow / r, j = ow % r;
                    const std::size_t ic = c * r * r + i * r + j;
                    map[o++] = ((n * CR + ic) * H + h) * W + w;
                }
    return gather("pixel_shuffle", x, Shape{N, C, OH, OW}, std::move(map));
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
    require_rank(x, 4, "pixel_unshuffle", "input");
    if (r == 0) throw ValueError("pixel_unshuffle: r must be positive");
    const std::size_t N = x.dim(0), C = x.dim(1), OH = x.dim(2), OW = x.dim(3);
    if (OH % r != 0 || OW % r != 0) throw ShapeError("pixel_unshuffle: spatial dims not divisible by r");
    const std::size_t H = OH / r, W = OW / r, CR = C * r * r;
    std::vector<std::size_t> map(N * CR * H * W);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t ic = 0; ic < CR; ++ic)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) {
                    const std::size_t c = ic / (r * r), i = (ic % (r * r)) / r, j = ic % r;
                    map[o++] = ((n * C + c) * OH + h * r + i) * OW + w * r + j;
                }
    return gather("pixel_unshuffle", x, Shape{N, CR, H, W}, std::move(map));
}

Tensor softmax(const Tensor& x, std::size_t axis, double tau) {
    if (!(tau > 0.0)) throw ValueError("softmax: temperature must be > 0");
    const AxisView v(x.shape(), axis);
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.inner; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, in[v.index(o, k, j)] / tau);
            double s = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) {
                const double e = std::exp(in[v.index(o, k, j)] / tau - mx);
                out[v.index(o, k, j)] = e;
                s += e;
            }
            for (std::size_t k = 0; k < v.len; ++k) out[v.index(o, k, j)] /= s;
        }
    auto r = make_result("softmax", x.shape(), std::move(out), {x}, [v, tau](Node& n) {
        double* g = grad_of(n, 0);
        if (!g) return;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.inner; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < v.len; ++k) dot += n.grad[v.index(o, k, j)] * n.data[v.index(o, k, j)];
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t i = v.index(o, k, j);
                    g[i] += n.data[i] * (n.grad[i] - dot) / tau;
                }
            }
    });
    trace_op("softmax", {&x}, r, 0);
    return r;
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
    if (!(eps > 0.0)) throw ValueError("l2_normalize: eps must be > 0");
    const AxisView v(x.shape(), axis);
    auto in = x.data();
    std::vector<double> out(in.size());
    std::vector<double> norms(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.inner; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) s += in[v.index(o, k, j)] * in[v.index(o, k, j)];
            const double nrm = std::sqrt(s);
            norms[o * v.inner + j] = nrm;
            const double d = std::max(nrm, eps);
            for (std::size_t k = 0; k < v.len; ++k) out[v.index(o, k, j)] = in[v.index(o, k, j)] / d;
        }
    auto r = make_result("l2_normalize", x.shape(), std::move(out), {x}, [v, eps, norms = std::move(norms)](Node& n) {
        double* g = grad_of(n, 0);
        if (!g) return;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.inner; ++j) {
                const double nrm = norms[o * v.inner + j];
                if (nrm > eps) {
                    double dot = 0.0;
                    for (std::size_t k = 0; k < v.len; ++k) dot += n.grad[v.index(o, k, j)] * n.data[v.index(o, k, j)];
                    for (std::size_t k = 0; k < v.len; ++k) {
                        const std::size_t i = v.index(o, k, j);
                        g[i] += (n.grad[i] - n.data[i] * dot) / nrm;
                    }
                } else {
                    for (std::size_t k = 0; k < v.len; ++k) g[v.index(o, k, j)] += n.grad[v.index(o, k, j)] / eps;
                }
            }
    });
    trace_op("l2_normalize", {&x}, r, 0);
    return r;
}

Tensor kl_div(const Tensor& p, const Tensor& q, std::size_t axis) {
    require_same_shape(p, q, "kl_div");
    const AxisView v(p.shape(), axis);
    auto pv = p.data(), qv = q.data();
    Shape out_shape;
    for (std::size_t i = 0; i < p.rank(); ++i)
        if (i != axis) out_shape.push_back(p.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<double> out(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.inner; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) {
                const std::size_t i = v.index(o, k, j);
                if (pv[i] > 0.0) s += pv[i] * (std::log(pv[i]) - std::log(qv[i]));
            }
            out[o * v.inner + j] = s;
        }
    auto r = make_result("kl_div", out_shape, std::move(out), {p, q}, [v](Node& n) {
        const auto& pd = n.parents[0]->data;
        const auto& qd = n.parents[1]->data;
        double* gp = grad_of(n, 0);
        double* gq = grad_of(n, 1);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.inner; ++j) {
                const double g = n.grad[o * v.inner + j];
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t i = v.index(o, k, j);
                    if (pd[i] <= 0.0) continue;
                    if (gp) gp[i] += g * (std::log(pd[i]) + 1.0 - std::log(qd[i]));
                    if (gq) gq[i] -= g * pd[i] / qd[i];
                }
            }
    });
    trace_op("kl_div", {&p, &q}, r, 0);
    return r;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& t : xs) require_rank(t, 4, "concat_channels", "input");
    const std::size_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    std::size_t C = 0;
    std::vector<std::size_t> chans;
    for (const auto& t : xs) {
        if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
            throw ShapeError("concat_channels: mismatched batch/spatial dims " + shape_str(t.shape()));
        }
        chans.push_back(t.dim(1));
        C += t.dim(1);
    }
    const std::size_t HW = H * W;
    std::vector<double> out(N * C * HW);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            auto d = xs[k].data();
            std::copy_n(d.begin() + n * chans[k] * HW, chans[k] * HW, out.begin() + (n * C + c0) * HW);
            c0 += chans[k];
        }
    }
    auto r = make_result("concat", Shape{N, C, H, W}, std::move(out), xs, [N, C, HW, chans](Node& n) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
            if (double* g = grad_of(n, k)) {
                for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t i = 0; i < chans[k] * HW; ++i) g[b * chans[k] * HW + i] += n.grad[(b * C + c0) * HW + i];
            }
            c0 += chans[k];
        }
    });
    trace_op("concat", xs, r, 0);
    return r;
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& w) {
    if (xs.empty()) throw ShapeError("weighted_sum: no inputs");
    if (w.numel() != xs.size()) {
        throw ShapeError("weighted_sum: weight length " + std::to_string(w.numel()) + " != inputs " +
                         std::to_string(xs.size()));
    }
    for (const auto& t : xs) require_same_shape(xs[0], t, "weighted_sum");
    auto wv = w.data();
    std::vector<double> out(xs[0].numel(), 0.0);
    // Summed in candidate-index order so results do not depend on scheduling.
    for (std::size_t k = 0; k < xs.size(); ++k) {
        auto d = xs[k].data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * d[i];
    }
    std::vector<Tensor> parents = xs;
    parents.push_back(w);
    const std::size_t K = xs.size();
    auto r = make_result("weighted_sum", xs[0].shape(), std::move(out), parents, [K](Node& n) {
        const auto& wd = n.parents[K]->data;
        double* gw = grad_of(n, K);
        for (std::size_t k = 0; k < K; ++k) {
            const auto& xd = n.parents[k]->data;
            double* gx = grad_of(n, k);
            double dw = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                if (gx) gx[i] += wd[k] * n.grad[i];
                dw += xd[i] * n.grad[i];
            }
            if (gw) gw[k] += dw;
        }
    });
    std::vector<Tensor> traced = xs;
    traced.push_back(w);
    trace_op("weighted_sum", traced, r, 0);
    return r;
}

namespace {

template <class F>
Tensor spatial_permute(const char* name, const Tensor& x, std::size_t OH, std::size_t OW, F src) {
    if (x.rank() < 2) throw ShapeError(std::string(name) + ": need at least 2 dims");
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    const std::size_t planes = x.numel() / (H * W);
    Shape out_shape = x.shape();
    out_shape[x.rank() - 2] = OH;
    out_shape[x.rank() - 1] = OW;
    std::vector<std::size_t> map(planes * OH * OW);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t xx = 0; xx < OW; ++xx) {
                auto [sy, sx] = src(y, xx, H, W);
                map[(p * OH + y) * OW + xx] = (p * H + sy) * W + sx;
            }
    return gather(name, x, std::move(out_shape), std::move(map));
}

}  // namespace

Tensor rot90(const Tensor& x, int k) {
    k = ((k % 4) + 4) % 4;
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    switch (k) {
        case 0:
            return spatial_permute("rot90", x, H, W, [](std::size_t y, std::size_t xx, std::size_t, std::size_t) {
                return std::pair{y, xx};
            });
        case 1:  // counter-clockwise
            return spatial_permute("rot90", x, W, H, [](std::size_t y, std::size_t xx, std::size_t, std::size_t w) {
                return std::pair{xx, w - 1 - y};
            });
        case 2:
            return spatial_permute("rot90", x, H, W, [](std::size_t y, std::size_t xx, std::size_t h, std::size_t w) {
                return std::pair{h - 1 - y, w - 1 - xx};
            });
        default:
            return spatial_permute("rot90", x, W, H, [](std::size_t y, std::size_t xx, std::size_t h, std::size_t) {
                return std::pair{h - 1 - xx, y};
            });
    }
}

Tensor flip_horizontal(const Tensor& x) {
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    return spatial_permute("flip_h", x, H, W, [](std::size_t y, std::size_t xx, std::size_t, std::size_t w) {
        return std::pair{y, w - 1 - xx};
    });
}

Tensor flip_vertical(const Tensor& x) {
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    return spatial_permute("flip_v", x, H, W, [](std::size_t y, std::size_t xx, std::size_t h, std::size_t) {
        return std::pair{h - 1 - y, xx};
    });
}

}  // namespace featherpoint::ops
