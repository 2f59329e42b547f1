#pragma once

// Data-parallel inner loops. Every kernel here has a serial counterpart in
// reference.hpp that the tests compare against.
//
// Parallel loops are split over independent outputs (batch items, rows) and
// any cross-item reduction is summed in a fixed order afterwards, so results
// are bit-identical for every thread count.

#include <cstdint>
#include <span>
#include <vector>

namespace fvpy::kernels {

struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::int64_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::int64_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::int64_t out_pixels() const { return out_height() * out_width(); }
};

// Forward convolution through im2col + GEMM. `columns` receives the unfolded
// input (batch * patch_size * out_pixels values) for reuse by the backward
// pass; pass an empty span to skip keeping it.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output, std::span<T> columns);

// Accumulates gradients into grad_input / grad_weight / grad_bias (any may be
// empty to skip). `columns` must be the buffer filled by conv2d_forward.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> grad_output, std::span<const T> weight,
                     std::span<const T> columns, std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

// 5-tap binomial blur with clamped borders followed by keeping even-indexed
// rows and columns. Output is ceil(width/2) x ceil(height/2).
void blur_decimate(std::span<const float> src, int width, int height, std::span<float> dst);

}  // namespace fvpy::kernels
