#pragma once

// Differentiable operations over BasicTensor. Shapes are always explicit:
// the only implicit expansion is a bias vector added along the channel or
// feature axis.

#include <vector>

#include "fvpy/tensor.hpp"

namespace fvpy::ops {

// input [C,H,W] or [B,C,H,W]; kernel [C_out,C_in,kH,kW]; bias [C_out] or an
// undefined tensor for no bias.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      int stride = 1, int padding = 0);

// input [D_in] or [B,D_in]; weight [D_out,D_in]; bias [D_out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

// Softmax taken jointly over the trailing two axes (each H x W map is one
// distribution). Leading axes index independent maps.
template <typename T>
BasicTensor<T> softmax_flat(const BasicTensor<T>& input);

// [D]: sum of |pred - target|. [B,D]: mean over rows of the per-row sums.
template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

// input [C,H,W] or [B,C,H,W]; padded cells never win the max.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, int kernel, int stride, int padding = 0);

// Batch statistics over (B,H,W) per channel; input [B,C,H,W].
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps = 1e-5);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& input, Shape shape);

// Flattens every part and joins them end to end.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input);

// Scalar sum(input * weights) with constant weights; used to reduce
// non-scalar ops to a scalar for gradient checks.
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& input, const std::vector<T>& weights);

// input [B,D] -> [B,D], row b mapped to M_b x_b + o_b. `matrices` holds B
// row-major DxD blocks and `offsets` B vectors of D; both are constants.
template <typename T>
BasicTensor<T> row_affine(const BasicTensor<T>& input, const std::vector<T>& matrices, const std::vector<T>& offsets);

}  // namespace fvpy::ops
