#pragma once

// Serial, loop-for-loop reference versions of the parallel kernels. Slow on
// purpose; these exist to check kernels.hpp and to anchor the benchmark.

#include <span>
#include <vector>

#include "fvpy/kernels.hpp"

namespace fvpy::reference {

// Direct quadruple loop, accumulated in double.
void conv2d_forward(const kernels::ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);

// Full 2-D 5x5 binomial convolution at every source pixel, then decimation.
void blur_decimate(std::span<const float> src, int width, int height, std::span<float> dst);

}  // namespace fvpy::reference
