#pragma once

#include <cstddef>
#include <vector>

#include "fvpy/image.hpp"

namespace fvpy {

inline constexpr int kPatchSize = 64;

// Number of pyramid levels so that the top level is roughly one patch:
// max(1, round(log2(max(width, height) / patch_size)) + 1).
int num_levels(int width, int height, int patch_size = kPatchSize);

// Binomial [1,4,6,4,1]/16 blur (separable, clamped borders), then keep the
// even-indexed rows and columns. Rejects a 1x1 image.
GrayImage downsample(const GrayImage& image);

struct GaussianPyramid {
  std::vector<GrayImage> levels;  // levels[0] is the source image

  int size() const { return static_cast<int>(levels.size()); }
  const GrayImage& level(int index) const { return levels.at(static_cast<std::size_t>(index)); }
  int source_width() const { return levels.front().width; }
  int source_height() const { return levels.front().height; }
  std::size_t total_pixels() const;
};

// Largest level count reachable by halving before the image is 1x1.
int max_levels(int width, int height);

GaussianPyramid build_pyramid(const GrayImage& image, int levels);
GaussianPyramid build_pyramid(const GrayImage& image);

}  // namespace fvpy
