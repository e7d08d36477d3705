#pragma once

#include <vector>

#include "mosaic_sr/tensor.hpp"

// Differentiable tensor operations. Every op is pure: it never writes to its
// operands and returns a freshly allocated tensor.

namespace msr::ops {

/// 2-D cross-correlation with zero padding. `bias` may be undefined.
/// Weight shape is (C_out, C_in, k, k); bias shape is (1, C_out, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int pad = 0);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product of identically shaped tensors.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product where each dimension of `b` either matches `a` or is
/// 1 (broadcast). Used for channel gating and per-channel peepholes.
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// N x C x 1 x 1 spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// out(n, c, r*h + q/r, r*w + q%r) = in(n, c*r*r + q, h, w)
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Stack single-image tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& xs);

/// Clamp to [lo, hi]; not differentiable (inference only).
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// Converts precision; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x);

}  // namespace msr::ops
