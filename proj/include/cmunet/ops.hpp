#pragma once

// Differentiable tensor operations. Every function records its backward when
// grad mode is enabled and an input requires a gradient.

#include <cstdint>
#include <vector>

#include "cmunet/tensor.hpp"

namespace cmunet {

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
// x[index] along axis 0.
Tensor select(const Tensor& x, std::int64_t index);
// Stacks equal-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& xs);
Tensor flip(const Tensor& x, int axis);

// ---- dense -----------------------------------------------------------------

// y[..., j] = sum_i x[..., i] * w[j, i] + b[j]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
};

// NCHW cross-correlation. w: [Cout, Cin/groups, kh, kw]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opts = {});

enum class PoolKind { kMax, kMean, kGlobalMean, kGlobalMax };

// Global kinds return [B,C,1,1] and ignore kernel/stride/padding. Max pooling
// routes the gradient to the first maximal element in scan order.
Tensor pool2d(const Tensor& x, PoolKind kind, std::int64_t kernel = 1, std::int64_t stride = 1,
              std::int64_t padding = 0);

// ---- normalization ---------------------------------------------------------

// Normalizes over `axis` (default last) then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  int axis = -1);

// NCHW batch norm. In training mode uses batch statistics and updates the
// running buffers in place (momentum as in the usual exponential average).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps);

// ---- pointwise -------------------------------------------------------------

enum class Activation { kSilu, kRelu, kSigmoid, kSoftplus, kExp, kSoftmaxChannel };

Tensor activation(Activation kind, const Tensor& x);
inline Tensor silu(const Tensor& x) { return activation(Activation::kSilu, x); }
inline Tensor relu(const Tensor& x) { return activation(Activation::kRelu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::kSigmoid, x); }
inline Tensor softplus(const Tensor& x) { return activation(Activation::kSoftplus, x); }
inline Tensor exp(const Tensor& x) { return activation(Activation::kExp, x); }
// Softmax over axis 1 (the channel axis of NCHW, or the class axis of [N,K]).
inline Tensor softmax_channel(const Tensor& x) {
  return activation(Activation::kSoftmaxChannel, x);
}

enum class Elementwise { kAdd, kSub, kMul };

// Equal-rank broadcasting: each dim of a and b must match or be 1.
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kMul, a, b); }
Tensor scale(const Tensor& x, double factor);

// ---- spatial ---------------------------------------------------------------

enum class ResizeMode { kNearest, kBilinear };

// Half-pixel (align_corners = false) sampling.
Tensor resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w,
              ResizeMode mode = ResizeMode::kBilinear);

enum class ChannelReduce { kMean, kMax };

// [B,C,H,W] -> [B,1,H,W]
Tensor channel_reduce(const Tensor& x, ChannelReduce kind);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace cmunet
