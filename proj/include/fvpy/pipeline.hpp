#pragma once

// Whole-split prediction and the per-iteration scaling measurement.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fvpy/dataset.hpp"
#include "fvpy/metrics.hpp"
#include "fvpy/model.hpp"

namespace fvpy {

// Inference trajectories (start plus `iterations` estimates) for every image,
// images processed in parallel.
std::vector<std::vector<Point2>> predict_trajectories(const Model& model, const std::vector<AnnotatedImage>& images,
                                                      int iterations);

// Mean radial error in pixels of trajectory step t against landmark `landmark`.
double mean_radial_error_px(const std::vector<std::vector<Point2>>& trajectories,
                            const std::vector<AnnotatedImage>& images, int landmark, int t);

struct ScalingRow {
  int side = 0;
  int levels = 0;
  std::size_t glimpse_pixels = 0;
  double pyramid_seconds = 0.0;
  double seconds_per_iteration = 0.0;  // fastest block of 10 calls, per call
  double mean_seconds_per_iteration = 0.0;
  std::size_t buffer_bytes = 0;  // pyramid levels plus one glimpse
  std::optional<std::string> error;
};

struct ScalingReport {
  std::string preset;
  int calls = 0;
  std::vector<ScalingRow> rows;
  // seconds_per_iteration ~ a + b log2(side) over the rows without errors.
  double fit_a = 0.0;
  double fit_b = 0.0;
  double fit_r2 = 0.0;
  double ratio_last_first = 0.0;
};

// For every side: a constant square image, its pyramid, a freshly seeded
// model, then `calls` refine_once calls at random focal points, timed in
// blocks of 10. A side that fails (for example on allocation) records the
// error and the rest still run.
ScalingReport run_scaling_bench(const std::vector<int>& sides, int calls, const std::string& preset,
                                std::uint64_t seed);

std::string scaling_report_json(const ScalingReport& report);
std::string scaling_report_table(const ScalingReport& report);

}  // namespace fvpy
