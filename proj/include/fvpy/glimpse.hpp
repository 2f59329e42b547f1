#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fvpy/geometry.hpp"
#include "fvpy/image.hpp"
#include "fvpy/pyramid.hpp"

namespace fvpy {

// Rotation (radians) and scale applied to the sampling grid about the focal
// point. Positive rotation turns +x toward +y.
struct GlimpseTransform {
  double rotation = 0.0;
  double scale = 1.0;

  bool is_identity() const { return rotation == 0.0 && scale == 1.0; }
  // s * R(theta) * v
  Point2 apply(Point2 v) const;
  // (s * R(theta))^-1 * v
  Point2 invert(Point2 v) const;
};

struct Glimpse {
  int levels = 0;
  Point2 focal;
  GlimpseTransform transform;
  std::vector<float> patches;  // levels x 64 x 64

  std::span<const float> patch(int level) const {
    return std::span<const float>(patches).subspan(static_cast<std::size_t>(level) * kPatchSize * kPatchSize,
                                                   kPatchSize * kPatchSize);
  }
};

// Samples the 64x64 patch for pyramid level `level_index` (1-based, level 1
// is full resolution). Glimpse pixel (u, v) reads the level at
//   focal / 2^(level_index-1) + s R(theta) (u - 31.5, v - 31.5)
// by bilinear interpolation between pixel centers; taps outside the level
// read as zero.
void sample_patch(const GrayImage& level, int level_index, Point2 focal, const GlimpseTransform& transform,
                  std::span<float> out);
std::vector<float> sample_patch(const GrayImage& level, int level_index, Point2 focal,
                                const GlimpseTransform& transform);

// Distinct source pixels read by sample_patch with these arguments.
std::size_t count_touched_pixels(const GrayImage& level, int level_index, Point2 focal,
                                 const GlimpseTransform& transform);

Glimpse extract_glimpse(const GaussianPyramid& pyramid, Point2 focal, const GlimpseTransform& transform = {});

inline constexpr double kDefaultMaxRotation = 15.0 * 3.14159265358979323846 / 180.0;
inline constexpr double kDefaultMaxScaleDelta = 0.05;

// Rotation uniform in [-max_rotation, max_rotation], scale uniform in
// [1 - max_scale_delta, 1 + max_scale_delta].
GlimpseTransform random_transform(std::mt19937_64& rng, double max_rotation = kDefaultMaxRotation,
                                  double max_scale_delta = kDefaultMaxScaleDelta);

// A displacement predicted in the glimpse frame, expressed in the image
// frame: s R(theta) offset.
Point2 map_offset_to_image(const GlimpseTransform& transform, Point2 offset);
Point2 map_offset_to_glimpse(const GlimpseTransform& transform, Point2 offset);

}  // namespace fvpy
