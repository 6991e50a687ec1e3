#pragma once

#include "vt/nn/tensor.hpp"

// Differentiable operations. Image tensors are NCHW; vectors are [N, K].
namespace vt::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

/// x[N,C,H,W] + v[N,C] broadcast over H and W.
Tensor add_channel(const Tensor& x, const Tensor& v);
/// x[N,C,H,W] * v[N,C] broadcast over H and W.
Tensor mul_channel(const Tensor& x, const Tensor& v);

/// Zero-padded 2D convolution; w is [Cout, Cin, k, k]; b may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
int conv_output_size(int in, int kernel, int stride, int pad);

Tensor upsample_nearest2x(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Group normalisation with per-channel affine gamma/beta of shape [C].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// x[N,in] * w[out,in]^T + b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Columns [begin, begin+count) of a [N,K] tensor.
Tensor columns(const Tensor& x, int begin, int count);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// mean |pred - target|.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// Per-sample sum(|pred - target| * mask) / sum(mask), averaged over the
/// batch (dim 0). Throws std::domain_error if any sample's mask is empty.
Tensor masked_l1_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);
/// mean (x - c)^2.
Tensor mse_to_constant(const Tensor& x, float c);

}  // namespace vt::nn
