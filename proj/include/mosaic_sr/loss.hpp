#pragma once

#include "mosaic_sr/tensor.hpp"

namespace msr {

/// Mean over unmasked elements of z(d), d = gt - pred:
///   z = 0.5 d^2 if |d| < 1, |d| - 0.5 otherwise.
/// `mask` is optional; when given it has pred's shape and nonzero entries
/// mark the elements that count. Gradient flows to pred only.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask = {});

}  // namespace msr
