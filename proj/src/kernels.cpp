#include "fvpy/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>

namespace fvpy::kernels {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.width;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* image) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = plane + iy * g.width;
          const T* src = row + oy * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output, std::span<T> columns) {
  const std::int64_t k = g.patch_size();
  const std::int64_t p = g.out_pixels();
  const std::int64_t in_stride = g.in_channels * g.height * g.width;
  const std::int64_t out_stride = g.out_channels * p;
  const bool keep = !columns.empty();
  const ConstMatrixMap<T> w(weight.data(), g.out_channels, k);

#pragma omp parallel
  {
    std::vector<T> scratch;
    if (!keep) scratch.resize(static_cast<std::size_t>(k * p));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      T* cols = keep ? columns.data() + b * k * p : scratch.data();
      im2col(g, input.data() + b * in_stride, cols);
      MatrixMap<T> out(output.data() + b * out_stride, g.out_channels, p);
      out.noalias() = w * ConstMatrixMap<T>(cols, k, p);
      if (!bias.empty()) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) out.row(o).array() += bias[o];
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> grad_output, std::span<const T> weight,
                     std::span<const T> columns, std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const std::int64_t k = g.patch_size();
  const std::int64_t p = g.out_pixels();
  const std::int64_t in_stride = g.in_channels * g.height * g.width;
  const std::int64_t out_stride = g.out_channels * p;
  const std::int64_t wsize = g.out_channels * k;
  const ConstMatrixMap<T> w(weight.data(), g.out_channels, k);

  // Per-item weight gradients, summed in item order below.
  std::vector<T> partial_w(grad_weight.empty() ? 0 : static_cast<std::size_t>(g.batch * wsize));

#pragma omp parallel
  {
    std::vector<T> dcols(grad_input.empty() ? 0 : static_cast<std::size_t>(k * p));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const ConstMatrixMap<T> dout(grad_output.data() + b * out_stride, g.out_channels, p);
      const ConstMatrixMap<T> cols(columns.data() + b * k * p, k, p);
      if (!grad_weight.empty()) {
        MatrixMap<T>(partial_w.data() + b * wsize, g.out_channels, k).noalias() = dout * cols.transpose();
      }
      if (!grad_input.empty()) {
        MatrixMap<T>(dcols.data(), k, p).noalias() = w.transpose() * dout;
        col2im_add(g, dcols.data(), grad_input.data() + b * in_stride);
      }
    }
  }

  if (!grad_weight.empty()) {
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* src = partial_w.data() + b * wsize;
      for (std::int64_t i = 0; i < wsize; ++i) grad_weight[i] += src[i];
    }
  }
  if (!grad_bias.empty()) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < g.batch; ++b) {
        const T* row = grad_output.data() + b * out_stride + o * p;
        for (std::int64_t i = 0; i < p; ++i) acc += row[i];
      }
      grad_bias[o] += static_cast<T>(acc);
    }
  }
}

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                     std::span<const float>, std::span<float>, std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>, std::span<double>);
template void conv2d_backward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                      std::span<const float>, std::span<float>, std::span<float>,
                                      std::span<float>);
template void conv2d_backward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                       std::span<const double>, std::span<double>, std::span<double>,
                                       std::span<double>);

void blur_decimate(std::span<const float> src, int width, int height, std::span<float> dst) {
  constexpr std::array<float, 5> taps{1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};
  const int ow = (width + 1) / 2;
  const int oh = (height + 1) / 2;
  auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

  // Horizontal pass at even columns only, then vertical pass at even rows.
  std::vector<float> rows(static_cast<std::size_t>(height) * ow);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    const float* in = src.data() + static_cast<std::size_t>(y) * width;
    float* out = rows.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      float acc = 0.0f;
      for (int t = 0; t < 5; ++t) acc += taps[t] * in[clamp(2 * x + t - 2, width - 1)];
      out[x] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y) {
    float* out = dst.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) out[x] = 0.0f;
    for (int t = 0; t < 5; ++t) {
      const float* in = rows.data() + static_cast<std::size_t>(clamp(2 * y + t - 2, height - 1)) * ow;
      for (int x = 0; x < ow; ++x) out[x] += taps[t] * in[x];
    }
  }
}

}  // namespace fvpy::kernels
