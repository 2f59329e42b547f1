#pragma once

// Spatialized features: each activation map is read as a softmax
// distribution over its pixel centers and reduced to
//   (expected x, expected y, expected raw activation).
// Coordinates are normalized so the map spans [-1, 1] with the origin at its
// center; for an 8-wide map, column x (1-based) sits at (x - 4.5) / 4.

#include <filesystem>
#include <vector>

#include "fvpy/tensor.hpp"

namespace fvpy {

// input [..., C, H, W] -> [..., C, 3] with (f_x, f_y, f_a) innermost.
// The softmax is applied to activation / temperature; f_a always averages
// the raw activations.
template <typename T>
BasicTensor<T> spatialize(const BasicTensor<T>& activations, double temperature = 1.0);

// Joins per-level [C,3] features into one level-major vector of N*3*C.
template <typename T>
BasicTensor<T> flatten_and_concat(const std::vector<BasicTensor<T>>& levels);

// Normalized coordinate of 0-based column index `i` in a map of `extent`.
inline double grid_coordinate(std::int64_t i, std::int64_t extent) {
  return (static_cast<double>(i + 1) - (extent + 1) / 2.0) / (extent / 2.0);
}

// Writes heatmaps.csv (channel,y,x,activation,probability) and features.csv
// (channel,f_x,f_y,f_a) for one [C,H,W] activation volume into `dir`.
void dump_spatialize_csv(const std::filesystem::path& dir, const Tensor& activations, double temperature = 1.0);

}  // namespace fvpy
