#include "fvpy/reference.hpp"

#include <algorithm>
#include <array>

namespace fvpy::reference {

void conv2d_forward(const kernels::ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::int64_t c = 0; c < g.in_channels; ++c) {
            for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
              for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
                const auto iy = oy * g.stride - g.padding + ki;
                const auto ix = ox * g.stride - g.padding + kj;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += input[((b * g.in_channels + c) * g.height + iy) * g.width + ix] *
                       weight[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
              }
            }
          }
          output[((b * g.out_channels + o) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

void blur_decimate(std::span<const float> src, int width, int height, std::span<float> dst) {
  constexpr std::array<double, 5> taps{1.0, 4.0, 6.0, 4.0, 1.0};
  const int ow = (width + 1) / 2;
  const int oh = (height + 1) / 2;
  std::vector<double> blurred(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
          const int sy = std::clamp(y + i - 2, 0, height - 1);
          const int sx = std::clamp(x + j - 2, 0, width - 1);
          acc += taps[i] * taps[j] * src[static_cast<std::size_t>(sy) * width + sx];
        }
      }
      blurred[static_cast<std::size_t>(y) * width + x] = acc / 256.0;
    }
  }
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      dst[static_cast<std::size_t>(y) * ow + x] =
          static_cast<float>(blurred[static_cast<std::size_t>(2 * y) * width + 2 * x]);
    }
  }
}

}  // namespace fvpy::reference
