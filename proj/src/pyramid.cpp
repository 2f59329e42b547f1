#include "fvpy/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fvpy/error.hpp"
#include "fvpy/kernels.hpp"

namespace fvpy {

int num_levels(int width, int height, int patch_size) {
  if (width < 1 || height < 1 || patch_size < 1) throw ValueError("num_levels: sizes must be positive");
  const double ratio = static_cast<double>(std::max(width, height)) / patch_size;
  return std::max(1, static_cast<int>(std::lround(std::log2(ratio))) + 1);
}

GrayImage downsample(const GrayImage& image) {
  if (image.width <= 1 && image.height <= 1) throw ValueError("downsample: cannot halve a 1x1 image");
  GrayImage out((image.width + 1) / 2, (image.height + 1) / 2);
  kernels::blur_decimate(image.pixels, image.width, image.height, out.pixels);
  return out;
}

std::size_t GaussianPyramid::total_pixels() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.size();
  return n;
}

int max_levels(int width, int height) {
  int n = 1;
  while (width > 1 || height > 1) {
    width = (width + 1) / 2;
    height = (height + 1) / 2;
    ++n;
  }
  return n;
}

GaussianPyramid build_pyramid(const GrayImage& image, int levels) {
  if (levels < 1) throw ValueError("build_pyramid: need at least one level");
  if (levels > max_levels(image.width, image.height)) {
    throw ValueError("build_pyramid: " + std::to_string(levels) + " levels exceed what a " +
                     std::to_string(image.width) + "x" + std::to_string(image.height) + " image can be halved to");
  }
  GaussianPyramid p;
  p.levels.reserve(static_cast<std::size_t>(levels));
  p.levels.push_back(image);
  for (int i = 1; i < levels; ++i) p.levels.push_back(downsample(p.levels.back()));
  return p;
}

GaussianPyramid build_pyramid(const GrayImage& image) {
  return build_pyramid(image, num_levels(image.width, image.height));
}

}  // namespace fvpy
