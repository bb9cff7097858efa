#pragma once

#include <cstddef>
#include <vector>

#include "featherpoint/tensor.hpp"

/// Differentiable operators. Every op records onto the tape when grad mode is
/// on and an input requires grad, and reports itself to an active TraceScope.
/// Subgradients at piecewise-linear kinks are 0.
namespace featherpoint::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Cross-correlation over NCHW input with an FCkk kernel. `bias` may be
/// undefined. Odd kernel sizes only. Output size is
/// floor((H + 2p - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// out[n,c,h,w] = scale[c] * in[n,c,h,w] + bias[c]; no batch statistics.
Tensor affine_channel(const Tensor& input, const Tensor& scale, const Tensor& bias);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    static BatchNormState identity(std::size_t channels);
};
enum class NormMode { Train, Eval };

/// Train mode normalizes with biased batch variance and folds the unbiased
/// variance into the running estimate with `momentum`.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   NormMode mode, double momentum = 0.1, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor hardtanh(const Tensor& x, double lo = -1.0, double hi = 1.0);
/// clamp(x/6 + 1/2, 0, 1)
Tensor hardsigmoid(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r)
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
/// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

/// Max-subtracted softmax of x / tau along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, double tau = 1.0);
/// x / max(||x||, eps) along `axis`.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-12);
/// sum p * (log p - log q) along `axis` with 0 log 0 = 0. The reduced axis is
/// removed from the output shape (a full reduction yields shape {1}).
Tensor kl_div(const Tensor& p, const Tensor& q, std::size_t axis);

/// Concatenate NCHW tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& xs);
/// sum_k w[k] * xs[k]; all xs share one shape, w has shape {K}.
Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& w);

/// Rotations by multiples of 90 degrees and flips over the two trailing axes.
/// Rotation requires square spatial dims unless k is even.
Tensor rot90(const Tensor& x, int k);
Tensor flip_horizontal(const Tensor& x);
Tensor flip_vertical(const Tensor& x);

}  // namespace featherpoint::ops
