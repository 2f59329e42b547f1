#include "fvpy/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "fvpy/adam.hpp"
#include "fvpy/error.hpp"
#include "fvpy/ops.hpp"

namespace fvpy {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

nlohmann::json config_json(const TrainConfig& c) {
  return {{"preset", c.preset},
          {"epochs", c.epochs},
          {"learning_rates", c.learning_rates},
          {"batch_size", c.batch_size},
          {"train_iterations", c.train_iterations},
          {"infer_iterations", c.infer_iterations},
          {"max_rotation_deg", c.max_rotation_deg},
          {"max_scale_delta", c.max_scale_delta},
          {"seed", c.seed},
          {"landmark", c.landmark},
          {"landmark_name", c.landmark_name},
          {"levels", c.levels},
          {"output_scale", c.output_scale},
          {"checkpoint_every", c.checkpoint_every}};
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint64_t { kModelInit = 1, kEstimateInit = 2, kAugment = 3, kShuffle = 4 };

// Pyramids are kept across epochs only when the whole split fits comfortably.
constexpr double kPyramidCacheBytes = 1.5e9;

class PyramidSource {
 public:
  PyramidSource(const std::vector<AnnotatedImage>& images, int levels) : images_(images), levels_(levels) {
    double bytes = 0.0;
    for (const auto& im : images) bytes += 4.0 * im.width * im.height * 4.0 / 3.0;
    if (bytes <= kPyramidCacheBytes) cache_.resize(images.size());
  }

  std::shared_ptr<const GaussianPyramid> get(std::size_t i) {
    if (!cache_.empty() && cache_[i]) return cache_[i];
    auto p = std::make_shared<const GaussianPyramid>(build_pyramid(images_[i].load(), levels_));
    if (!cache_.empty()) cache_[i] = p;
    return p;
  }

 private:
  const std::vector<AnnotatedImage>& images_;
  int levels_;
  std::vector<std::shared_ptr<const GaussianPyramid>> cache_;
};

void dump_divergence(const TrainConfig& config, const StepRecord& rec, const std::vector<std::string>& ids,
                     const std::vector<Point2>& estimates, const std::vector<Point2>& targets) {
  if (config.output_dir.empty()) return;
  nlohmann::json j;
  j["epoch"] = rec.epoch;
  j["batch"] = rec.batch;
  j["iteration"] = rec.iteration;
  j["step"] = rec.step;
  j["lr"] = rec.lr;
  j["loss"] = std::isfinite(rec.loss) ? nlohmann::json(rec.loss) : nlohmann::json(std::to_string(rec.loss));
  j["images"] = ids;
  for (std::size_t b = 0; b < estimates.size(); ++b) {
    j["estimates"].push_back({estimates[b].x, estimates[b].y});
    j["targets"].push_back({targets[b].x, targets[b].y});
  }
  j["config"] = config_json(config);
  std::filesystem::create_directories(config.output_dir);
  std::ofstream out(config.output_dir / ("divergence_L" + std::to_string(config.landmark) + ".json"));
  out << j.dump(2) << '\n';
}

}  // namespace

LandmarkStats compute_label_stats(const std::vector<Point2>& labels) {
  if (labels.empty()) throw ValueError("compute_label_stats: no labels");
  const double n = static_cast<double>(labels.size());
  LandmarkStats s;
  for (const auto& p : labels) s.mean = s.mean + p;
  s.mean = (1.0 / n) * s.mean;
  double vx = 0.0;
  double vy = 0.0;
  for (const auto& p : labels) {
    vx += (p.x - s.mean.x) * (p.x - s.mean.x);
    vy += (p.y - s.mean.y) * (p.y - s.mean.y);
  }
  s.std = {std::sqrt(vx / n), std::sqrt(vy / n)};
  return s;
}

LandmarkEstimate init_estimate(EstimateMode mode, const LandmarkStats& stats, std::mt19937_64& rng) {
  LandmarkEstimate e;
  e.position = stats.mean;
  if (mode == EstimateMode::Training) {
    std::normal_distribution<double> unit(0.0, 1.0);
    const double zx = unit(rng);
    const double zy = unit(rng);
    e.position = {stats.mean.x + stats.std.x * zx, stats.mean.y + stats.std.y * zy};
  }
  return e;
}

void TrainConfig::validate() const {
  (void)cnn_architecture(preset);
  if (epochs[0] < 0 || epochs[1] < 0) throw ValueError("epochs must be non-negative");
  if (!(learning_rates[0] > 0.0) || !(learning_rates[1] > 0.0)) throw ValueError("learning rates must be positive");
  if (batch_size < 1) throw ValueError("batch size must be at least 1");
  if (train_iterations < 1 || infer_iterations < 1) throw ValueError("iteration counts must be at least 1");
  if (max_rotation_deg < 0.0 || max_scale_delta < 0.0 || max_scale_delta >= 1.0) {
    throw ValueError("augmentation bounds out of range");
  }
  if (landmark < 0) throw ValueError("landmark index must be non-negative");
  if (levels < 0) throw ValueError("levels must be non-negative");
  if (output_scale < 0.0) throw ValueError("output scale must be non-negative");
  if (checkpoint_every < 0) throw ValueError("checkpoint interval must be non-negative");
}

std::string TrainConfig::to_json() const { return config_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text, TrainConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ValueError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValueError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "preset") base.preset = value.get<std::string>();
      else if (key == "epochs") base.epochs = value.get<std::array<int, 2>>();
      else if (key == "learning_rates") base.learning_rates = value.get<std::array<double, 2>>();
      else if (key == "batch_size") base.batch_size = value.get<int>();
      else if (key == "train_iterations") base.train_iterations = value.get<int>();
      else if (key == "infer_iterations") base.infer_iterations = value.get<int>();
      else if (key == "max_rotation_deg") base.max_rotation_deg = value.get<double>();
      else if (key == "max_scale_delta") base.max_scale_delta = value.get<double>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "landmark") base.landmark = value.get<int>();
      else if (key == "landmark_name") base.landmark_name = value.get<std::string>();
      else if (key == "levels") base.levels = value.get<int>();
      else if (key == "output_scale") base.output_scale = value.get<double>();
      else if (key == "checkpoint_every") base.checkpoint_every = value.get<int>();
      else if (key == "output_dir") base.output_dir = value.get<std::string>();
      else throw ValueError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("config value has the wrong type: ") + e.what());
  }
  return base;
}

TrainConfig TrainConfig::from_json(const std::string& text) { return from_json(text, TrainConfig{}); }

std::uint64_t TrainConfig::hash() const { return fnv1a(config_json(*this).dump()); }

template <typename T>
BasicTensor<T> refine_batch(const BasicModel<T>& model, const std::vector<const GaussianPyramid*>& pyramids,
                            const std::vector<Point2>& estimates, const std::vector<GlimpseTransform>& transforms) {
  const std::size_t batch = pyramids.size();
  if (batch == 0 || estimates.size() != batch || transforms.size() != batch) {
    throw ValueError("refine_batch: pyramids, estimates and transforms must have equal non-zero length");
  }
  const int levels = model.meta.levels;
  constexpr std::size_t patch = kPatchSize * kPatchSize;
  std::vector<T> stacked(batch * levels * patch);
  std::vector<T> matrices(batch * 4);
  std::vector<T> offsets(batch * 2);
  for (std::size_t b = 0; b < batch; ++b) {
    if (pyramids[b]->size() != levels) {
      throw ShapeError("refine_batch: pyramid has " + std::to_string(pyramids[b]->size()) + " levels, model expects " +
                       std::to_string(levels));
    }
    const auto g = extract_glimpse(*pyramids[b], estimates[b], transforms[b]);
    std::copy(g.patches.begin(), g.patches.end(), stacked.begin() + static_cast<std::ptrdiff_t>(b * levels * patch));
    const double c = std::cos(transforms[b].rotation) * transforms[b].scale;
    const double s = std::sin(transforms[b].rotation) * transforms[b].scale;
    matrices[b * 4 + 0] = static_cast<T>(c);
    matrices[b * 4 + 1] = static_cast<T>(-s);
    matrices[b * 4 + 2] = static_cast<T>(s);
    matrices[b * 4 + 3] = static_cast<T>(c);
    offsets[b * 2 + 0] = static_cast<T>(estimates[b].x);
    offsets[b * 2 + 1] = static_cast<T>(estimates[b].y);
  }
  const auto n = static_cast<std::int64_t>(batch);
  auto patches = BasicTensor<T>::from_data({n * levels, 1, kPatchSize, kPatchSize}, std::move(stacked));
  auto offset = mlp_forward(model, glimpse_features(model, patches, n));
  return ops::row_affine(offset, matrices, offsets);
}

RefineStep refine_once(const Model& model, const GaussianPyramid& pyramid, Point2 estimate,
                       const GlimpseTransform& transform) {
  NoGradGuard no_grad;
  auto next = refine_batch(model, {&pyramid}, {estimate}, {transform});
  RefineStep r;
  r.next = {static_cast<double>(next.data()[0]), static_cast<double>(next.data()[1])};
  r.offset = r.next - estimate;
  return r;
}

TrainResult train(const std::vector<AnnotatedImage>& train_set, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw ValueError("train: empty training split");
  std::vector<Point2> labels;
  for (const auto& im : train_set) {
    if (config.landmark >= static_cast<int>(im.truth.size())) {
      throw ValueError("train: image " + im.id + " has no landmark " + std::to_string(config.landmark));
    }
    labels.push_back(im.truth[static_cast<std::size_t>(config.landmark)]);
  }
  const auto stats = compute_label_stats(labels);
  const int levels = config.levels > 0 ? config.levels : num_levels(train_set.front().width, train_set.front().height);

  auto init_rng = stream(config.seed, kModelInit);
  TrainResult result;
  result.model = create_model(config.preset, levels, init_rng());
  auto& model = result.model;
  model.meta.landmark = config.landmark;
  model.meta.landmark_name = config.landmark_name;
  model.meta.config_hash = config.hash();
  model.meta.label_mean = stats.mean;
  model.meta.label_std = stats.std;
  model.meta.output_scale =
      config.output_scale > 0.0 ? config.output_scale : std::max(1.0, 0.5 * (stats.std.x + stats.std.y));

  const std::string tag = "L" + std::to_string(config.landmark);
  if (!config.output_dir.empty()) std::filesystem::create_directories(config.output_dir);

  PyramidSource pyramids(train_set, levels);
  AdamState<float> adam;
  auto estimate_rng = stream(config.seed, kEstimateInit);
  auto augment_rng = stream(config.seed, kAugment);
  const double max_rotation = config.max_rotation_deg * std::numbers::pi / 180.0;
  const int total_epochs = config.epochs[0] + config.epochs[1];
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const double lr = epoch <= config.epochs[0] ? config.learning_rates[0] : config.learning_rates[1];
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = stream(config.seed, kShuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    double radial_sum = 0.0;
    int batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
      std::vector<std::shared_ptr<const GaussianPyramid>> held;
      std::vector<const GaussianPyramid*> batch_pyramids;
      std::vector<Point2> estimates;
      std::vector<Point2> targets;
      std::vector<std::string> ids;
      std::vector<float> target_values;
      for (std::size_t k = first; k < last; ++k) {
        const auto& im = train_set[order[k]];
        held.push_back(pyramids.get(order[k]));
        batch_pyramids.push_back(held.back().get());
        estimates.push_back(init_estimate(EstimateMode::Training, stats, estimate_rng).position);
        targets.push_back(labels[order[k]]);
        ids.push_back(im.id);
        target_values.push_back(static_cast<float>(targets.back().x));
        target_values.push_back(static_cast<float>(targets.back().y));
      }
      const auto rows = static_cast<std::int64_t>(targets.size());
      const auto target = Tensor::from_data({rows, 2}, target_values);

      for (int t = 1; t <= config.train_iterations; ++t) {
        std::vector<GlimpseTransform> transforms;
        for (std::int64_t b = 0; b < rows; ++b) {
          transforms.push_back(random_transform(augment_rng, max_rotation, config.max_scale_delta));
        }
        for (auto& p : model.tensors) p.zero_grad();
        auto next = refine_batch(model, batch_pyramids, estimates, transforms);
        auto loss = ops::l1_loss(next, target);
        StepRecord rec{epoch, batch_index, t, result.optimizer_steps + 1, static_cast<double>(loss.item()), lr};
        if (!std::isfinite(rec.loss)) {
          dump_divergence(config, rec, ids, estimates, targets);
          throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index) + ", iteration " + std::to_string(t));
        }
        loss.backward();
        adam_step(model.tensors, adam, lr);
        ++result.optimizer_steps;
        loss_sum += rec.loss;
        ++loss_count;
        for (std::int64_t b = 0; b < rows; ++b) {
          estimates[b] = {static_cast<double>(next.data()[b * 2]), static_cast<double>(next.data()[b * 2 + 1])};
        }
        if (hooks.on_step) hooks.on_step(rec);
      }
      for (std::size_t b = 0; b < estimates.size(); ++b) radial_sum += norm(estimates[b] - targets[b]);
      ++batch_index;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    entry.mean_radial_error_px = radial_sum / static_cast<double>(train_set.size());
    entry.lr = lr;
    entry.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (!config.output_dir.empty()) {
      write_training_log(config.output_dir / ("train_log_" + tag + ".csv"), result.log);
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%s_e%03d.fvpy", tag.c_str(), epoch);
        save_model(model, config.output_dir / name);
      }
    }
  }
  return result;
}

LandmarkEstimate infer(const Model& model, const GaussianPyramid& pyramid, const LandmarkStats& stats, int iterations,
                       std::vector<Point2>* trajectory) {
  if (iterations < 0) throw ValueError("infer: iteration count must be non-negative");
  NoGradGuard no_grad;
  std::mt19937_64 unused;
  LandmarkEstimate e = init_estimate(EstimateMode::Inference, stats, unused);
  if (trajectory) trajectory->assign(1, e.position);
  for (int t = 1; t <= iterations; ++t) {
    e.position = refine_once(model, pyramid, e.position).next;
    e.iteration = t;
    if (trajectory) trajectory->push_back(e.position);
  }
  return e;
}

LandmarkEstimate infer(const Model& model, const GaussianPyramid& pyramid, int iterations,
                       std::vector<Point2>* trajectory) {
  return infer(model, pyramid, LandmarkStats{model.meta.label_mean, model.meta.label_std}, iterations, trajectory);
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path.string());
  out.precision(10);
  out << "epoch,mean_loss,mean_radial_error_px,lr,wall_time_s\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.mean_loss << ',' << e.mean_radial_error_px << ',' << e.lr << ',' << e.wall_time_s
        << '\n';
  }
}

template BasicTensor<float> refine_batch(const BasicModel<float>&, const std::vector<const GaussianPyramid*>&,
                                         const std::vector<Point2>&, const std::vector<GlimpseTransform>&);
template BasicTensor<double> refine_batch(const BasicModel<double>&, const std::vector<const GaussianPyramid*>&,
                                          const std::vector<Point2>&, const std::vector<GlimpseTransform>&);

}  // namespace fvpy
