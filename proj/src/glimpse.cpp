#include "fvpy/glimpse.hpp"

#include <cmath>
#include <unordered_set>

#include "fvpy/error.hpp"

namespace fvpy {

Point2 GlimpseTransform::apply(Point2 v) const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return {scale * (c * v.x - s * v.y), scale * (s * v.x + c * v.y)};
}

Point2 GlimpseTransform::invert(Point2 v) const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return {(c * v.x + s * v.y) / scale, (-s * v.x + c * v.y) / scale};
}

namespace {

// Walks every bilinear tap of the patch; `tap(x, y)` is called for
// in-bounds taps only and returns the pixel value.
template <typename Tap>
void sample_grid(const GrayImage& level, int level_index, Point2 focal, const GlimpseTransform& transform,
                 float* out, Tap&& tap) {
  if (level_index < 1) throw ValueError("sample_patch: level index is 1-based");
  if (!(transform.scale > 0.0)) throw ValueError("sample_patch: scale must be positive");
  const double factor = std::ldexp(1.0, -(level_index - 1));
  const double cx = focal.x * factor;
  const double cy = focal.y * factor;
  const double c = std::cos(transform.rotation) * transform.scale;
  const double s = std::sin(transform.rotation) * transform.scale;
  constexpr double half = kPatchSize / 2.0 - 0.5;

  for (int v = 0; v < kPatchSize; ++v) {
    const double gv = v - half;
    for (int u = 0; u < kPatchSize; ++u) {
      const double gu = u - half;
      // Continuous position relative to pixel centers.
      const double px = cx + c * gu - s * gv - 0.5;
      const double py = cy + s * gu + c * gv - 0.5;
      const double fx = std::floor(px);
      const double fy = std::floor(py);
      const double wx = px - fx;
      const double wy = py - fy;
      double acc = 0.0;
      if (fx >= -1.0 && fy >= -1.0 && fx < level.width && fy < level.height) {
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const bool left = x0 >= 0;
        const bool right = x0 + 1 < level.width;
        const bool top = y0 >= 0;
        const bool bottom = y0 + 1 < level.height;
        if (top && left) acc += (1 - wx) * (1 - wy) * tap(x0, y0);
        if (top && right) acc += wx * (1 - wy) * tap(x0 + 1, y0);
        if (bottom && left) acc += (1 - wx) * wy * tap(x0, y0 + 1);
        if (bottom && right) acc += wx * wy * tap(x0 + 1, y0 + 1);
      }
      out[v * kPatchSize + u] = static_cast<float>(acc);
    }
  }
}

}  // namespace

void sample_patch(const GrayImage& level, int level_index, Point2 focal, const GlimpseTransform& transform,
                  std::span<float> out) {
  if (out.size() != static_cast<std::size_t>(kPatchSize * kPatchSize)) throw ValueError("sample_patch: output must be 64x64");
  sample_grid(level, level_index, focal, transform, out.data(), [&](int x, int y) { return level.at(x, y); });
}

std::vector<float> sample_patch(const GrayImage& level, int level_index, Point2 focal,
                                const GlimpseTransform& transform) {
  std::vector<float> out(kPatchSize * kPatchSize);
  sample_patch(level, level_index, focal, transform, out);
  return out;
}

std::size_t count_touched_pixels(const GrayImage& level, int level_index, Point2 focal,
                                 const GlimpseTransform& transform) {
  std::unordered_set<std::int64_t> touched;
  std::vector<float> scratch(kPatchSize * kPatchSize);
  sample_grid(level, level_index, focal, transform, scratch.data(), [&](int x, int y) {
    touched.insert(static_cast<std::int64_t>(y) * level.width + x);
    return level.at(x, y);
  });
  return touched.size();
}

Glimpse extract_glimpse(const GaussianPyramid& pyramid, Point2 focal, const GlimpseTransform& transform) {
  if (!(transform.scale > 0.0)) throw ValueError("extract_glimpse: scale must be positive");
  Glimpse g;
  g.levels = pyramid.size();
  g.focal = focal;
  g.transform = transform;
  g.patches.resize(static_cast<std::size_t>(g.levels) * kPatchSize * kPatchSize);
#pragma omp parallel for schedule(static) if (g.levels > 1)
  for (int i = 0; i < g.levels; ++i) {
    sample_patch(pyramid.level(i), i + 1, focal, transform,
                 std::span<float>(g.patches).subspan(static_cast<std::size_t>(i) * kPatchSize * kPatchSize,
                                                     kPatchSize * kPatchSize));
  }
  return g;
}

GlimpseTransform random_transform(std::mt19937_64& rng, double max_rotation, double max_scale_delta) {
  GlimpseTransform t;
  if (max_rotation > 0.0) t.rotation = std::uniform_real_distribution<double>(-max_rotation, max_rotation)(rng);
  if (max_scale_delta > 0.0) {
    t.scale = std::uniform_real_distribution<double>(1.0 - max_scale_delta, 1.0 + max_scale_delta)(rng);
  }
  return t;
}

Point2 map_offset_to_image(const GlimpseTransform& transform, Point2 offset) {
  if (transform.is_identity()) return offset;
  return transform.apply(offset);
}

Point2 map_offset_to_glimpse(const GlimpseTransform& transform, Point2 offset) {
  if (transform.is_identity()) return offset;
  return transform.invert(offset);
}

}  // namespace fvpy
