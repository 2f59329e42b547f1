#pragma once

// Iterative error-feedback training and inference: each iteration looks at a
// glimpse centered on the current estimate, regresses an offset, and moves
// the estimate by it. Iterations share no gradient path; during training
// every iteration is its own optimizer step.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fvpy/dataset.hpp"
#include "fvpy/geometry.hpp"
#include "fvpy/glimpse.hpp"
#include "fvpy/model.hpp"
#include "fvpy/pyramid.hpp"

namespace fvpy {

struct LandmarkStats {
  Point2 mean;
  Point2 std;  // population standard deviation per axis
};

// Throws ValueError on an empty list.
LandmarkStats compute_label_stats(const std::vector<Point2>& labels);

enum class EstimateMode { Training, Inference };

struct LandmarkEstimate {
  Point2 position;
  int iteration = 0;
};

// Training draws from N(mean, diag(std^2)); inference returns the mean.
LandmarkEstimate init_estimate(EstimateMode mode, const LandmarkStats& stats, std::mt19937_64& rng);

struct TrainConfig {
  std::string preset{kPresetTiny};
  std::array<int, 2> epochs{20, 20};
  std::array<double, 2> learning_rates{1e-4, 1e-5};
  int batch_size = 2;
  int train_iterations = 10;
  int infer_iterations = 10;
  double max_rotation_deg = 15.0;
  double max_scale_delta = 0.05;
  std::uint64_t seed = 0;
  int landmark = 0;
  std::string landmark_name;
  int levels = 0;  // 0: from the first training image's size
  // Multiplier on the MLP output; 0 picks the mean label std (at least 1).
  double output_scale = 0.0;
  int checkpoint_every = 5;  // epochs; 0 disables
  std::filesystem::path output_dir;  // log, checkpoints, divergence dumps

  void validate() const;
  std::string to_json() const;
  // Keys present in `text` override the corresponding fields of `base`.
  static TrainConfig from_json(const std::string& text, TrainConfig base);
  static TrainConfig from_json(const std::string& text);
  // FNV-1a of the canonical JSON, excluding output_dir.
  std::uint64_t hash() const;
};

// One refinement step for a batch of glimpses. Row b of the result is
//   x_hat_b + s_b R_b mlp(features_b)
// with x_hat_b held constant. Patches are gathered from each pyramid at
// its estimate with its transform.
template <typename T>
BasicTensor<T> refine_batch(const BasicModel<T>& model, const std::vector<const GaussianPyramid*>& pyramids,
                            const std::vector<Point2>& estimates, const std::vector<GlimpseTransform>& transforms);

struct RefineStep {
  Point2 offset;  // image frame, pixels
  Point2 next;
};

// Single-image inference-style step (no graph recorded).
RefineStep refine_once(const Model& model, const GaussianPyramid& pyramid, Point2 estimate,
                       const GlimpseTransform& transform = {});

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_radial_error_px = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

struct StepRecord {
  int epoch = 0;
  int batch = 0;
  int iteration = 0;
  std::int64_t step = 0;  // optimizer steps taken so far, including this one
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::int64_t optimizer_steps = 0;
};

// Trains one landmark's model on `train_set`. Writes train_log_L<k>.csv and
// periodic checkpoints under config.output_dir when it is set. A non-finite
// loss writes divergence_L<k>.json there and throws TrainingDivergedError.
TrainResult train(const std::vector<AnnotatedImage>& train_set, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Starts at the stored label mean and applies `iterations` identity-transform
// refinement steps. `trajectory`, when given, receives every estimate
// including the start. Parameters are not modified.
LandmarkEstimate infer(const Model& model, const GaussianPyramid& pyramid, int iterations,
                       std::vector<Point2>* trajectory = nullptr);
LandmarkEstimate infer(const Model& model, const GaussianPyramid& pyramid, const LandmarkStats& stats,
                       int iterations, std::vector<Point2>* trajectory = nullptr);

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace fvpy
