// fvpy: train, evaluate and run foveated landmark regressors.

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fvpy/dataset.hpp"
#include "fvpy/error.hpp"
#include "fvpy/metrics.hpp"
#include "fvpy/model.hpp"
#include "fvpy/pipeline.hpp"
#include "fvpy/pyramid.hpp"
#include "fvpy/trainer.hpp"

namespace fs = std::filesystem;
using namespace fvpy;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissingInput = 2;

// Errors caused by absent or unreadable inputs.
struct InputError : Error {
  using Error::Error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::array<T, 2> parse_pair(const std::string& text, const char* what) {
  const auto parts = split_list(text);
  if (parts.size() != 2) throw ValueError(std::string(what) + " takes two comma-separated values, got '" + text + "'");
  std::array<T, 2> out{};
  for (int i = 0; i < 2; ++i) {
    std::istringstream in(parts[static_cast<std::size_t>(i)]);
    if (!(in >> out[static_cast<std::size_t>(i)]) || !in.eof()) {
      throw ValueError(std::string(what) + ": cannot parse '" + parts[static_cast<std::size_t>(i)] + "'");
    }
  }
  return out;
}

std::vector<int> parse_landmarks(const std::string& text, int count) {
  std::vector<int> out;
  if (text == "all") {
    for (int i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  for (const auto& item : split_list(text)) {
    int k = -1;
    std::istringstream in(item);
    if (!(in >> k) || !in.eof() || k < 0 || k >= count) {
      throw ValueError("landmark '" + item + "' is not in 0.." + std::to_string(count - 1) + " or 'all'");
    }
    out.push_back(k);
  }
  if (out.empty()) throw ValueError("no landmark selected");
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path model_path(const fs::path& dir, int landmark) { return dir / ("model_L" + std::to_string(landmark) + ".fvpy"); }

Dataset open_dataset(const fs::path& root, const std::string& gt_mode) {
  if (root.empty() || !fs::is_directory(root)) throw InputError("data directory '" + root.string() + "' not found");
  try {
    return load_dataset(root, parse_ground_truth_mode(gt_mode));
  } catch (const IoError& e) {
    throw InputError(e.what());
  } catch (const ParseError& e) {
    throw InputError(e.what());
  }
}

std::vector<AnnotatedImage> select_split(const Dataset& ds, const std::string& name) {
  if (name == "all") return ds.images;
  if (ds.meta.splits.count(name) == 0) {
    throw ValueError("dataset has no split '" + name + "' (use 'all' or one of the splits in metadata.json)");
  }
  return ds.split(name);
}

std::string default_split(const Dataset& ds, const std::string& preferred) {
  return ds.meta.splits.count(preferred) ? preferred : "all";
}

std::string landmark_label(const Model& m) {
  return m.meta.landmark_name.empty() ? "L" + std::to_string(m.meta.landmark + 1) : m.meta.landmark_name;
}

Model open_model(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("model file " + path.string() + " not found");
  return load_model(path);
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string landmarks = "0";
  std::string out = "models";
  std::string config_file;
  std::string split;
  std::string gt_mode = "average";
  std::optional<std::string> preset;
  std::optional<std::string> epochs;
  std::optional<std::string> learning_rates;
  std::optional<int> batch_size;
  std::optional<int> iterations;
  std::optional<int> levels;
  std::optional<double> output_scale;
  std::optional<int> checkpoint_every;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig c;
  if (!a.config_file.empty()) c = TrainConfig::from_json(read_text(a.config_file), c);
  if (a.preset) c.preset = *a.preset;
  if (a.epochs) c.epochs = parse_pair<int>(*a.epochs, "--epochs");
  if (a.learning_rates) c.learning_rates = parse_pair<double>(*a.learning_rates, "--lr");
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.iterations) c.train_iterations = *a.iterations;
  if (a.levels) c.levels = *a.levels;
  if (a.output_scale) c.output_scale = *a.output_scale;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  if (a.seed) c.seed = *a.seed;
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  const auto ds = open_dataset(a.data, a.gt_mode);
  const auto base = resolve_train_config(a);
  const auto images = select_split(ds, a.split.empty() ? default_split(ds, "train") : a.split);
  const auto landmarks = parse_landmarks(a.landmarks, ds.landmark_count());
  fs::create_directories(a.out);

  std::vector<std::string> failures(landmarks.size());
  const bool verbose = !a.quiet && landmarks.size() == 1;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const int k = landmarks[i];
    try {
      TrainConfig c = base;
      c.landmark = k;
      c.landmark_name = ds.meta.landmark_names[static_cast<std::size_t>(k)];
      c.output_dir = a.out;
      TrainHooks hooks;
      if (verbose) {
        hooks.on_epoch = [](const EpochLog& e) {
          std::fprintf(stderr, "epoch %3d  loss %10.4f  radial %8.3f px  lr %.1e  %7.1f s\n", e.epoch, e.mean_loss,
                       e.mean_radial_error_px, e.lr, e.wall_time_s);
        };
      }
      auto result = train(images, c, hooks);
      save_model(result.model, model_path(a.out, k));
      write_text(fs::path(a.out) / ("train_config_L" + std::to_string(k) + ".json"), c.to_json() + "\n");
#pragma omp critical(fvpy_cli_out)
      std::printf("landmark %d (%s): %lld updates, final radial error %.3f px -> %s\n", k, c.landmark_name.c_str(),
                  static_cast<long long>(result.optimizer_steps),
                  result.log.empty() ? 0.0 : result.log.back().mean_radial_error_px,
                  model_path(a.out, k).string().c_str());
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }
  int status = 0;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    if (!failures[i].empty()) {
      std::fprintf(stderr, "error: landmark %d: %s\n", landmarks[i], failures[i].c_str());
      status = kExitFailure;
    }
  }
  return status;
}

// ---- eval ----

struct EvalArgs {
  std::string data;
  std::string models = "models";
  std::string landmarks = "all";
  std::string split;
  std::string gt_mode = "average";
  std::string out;
  int iterations = 10;
  int compare = 3;
};

int cmd_eval(const EvalArgs& a) {
  if (a.iterations < 0 || a.compare < 0) throw ValueError("iteration counts must be non-negative");
  const auto ds = open_dataset(a.data, a.gt_mode);
  const std::string split = a.split.empty() ? default_split(ds, "test") : a.split;
  const auto images = select_split(ds, split);
  if (images.empty()) throw ValueError("split '" + split + "' is empty");
  std::vector<int> landmarks;
  if (a.landmarks == "all") {
    for (int k = 0; k < ds.landmark_count(); ++k) {
      if (fs::exists(model_path(a.models, k))) landmarks.push_back(k);
    }
    if (landmarks.empty()) throw InputError("no model_L<k>.fvpy files in " + a.models);
  } else {
    landmarks = parse_landmarks(a.landmarks, ds.landmark_count());
  }

  const bool have_both = std::all_of(images.begin(), images.end(),
                                     [](const auto& im) { return !im.junior.empty() && !im.senior.empty(); });
  const int depth = std::max(a.iterations, a.compare);
  std::vector<LandmarkRow> rows;
  double short_sum = 0.0;
  double long_sum = 0.0;
  for (int k : landmarks) {
    const auto model = open_model(model_path(a.models, k));
    const auto trajectories = predict_trajectories(model, images, depth);
    std::vector<Point2> preds, shorts, truths, ja, sb;
    for (std::size_t i = 0; i < images.size(); ++i) {
      preds.push_back(trajectories[i][static_cast<std::size_t>(a.iterations)]);
      shorts.push_back(trajectories[i][static_cast<std::size_t>(a.compare)]);
      truths.push_back(images[i].truth.at(static_cast<std::size_t>(k)));
      if (have_both) {
        ja.push_back(images[i].junior.at(static_cast<std::size_t>(k)));
        sb.push_back(images[i].senior.at(static_cast<std::size_t>(k)));
      }
    }
    rows.push_back(landmark_row(ds.meta.landmark_names[static_cast<std::size_t>(k)], preds, truths, ds.meta.px_per_mm,
                                kSdrThresholdsMm, ja, sb));
    long_sum += rows.back().mre.mean;
    short_sum += mre(radial_errors(shorts, truths, ds.meta.px_per_mm)).mean;
  }
  char title[256];
  std::snprintf(title, sizeof title, "split '%s', %zu images, T=%d, %.3g px/mm", split.c_str(), images.size(),
                a.iterations, ds.meta.px_per_mm);
  auto report = make_report(title, rows);
  if (a.compare > 0 && a.compare != a.iterations) {
    IterationComparison c;
    c.short_iterations = a.compare;
    c.long_iterations = a.iterations;
    c.short_mre_mm = short_sum / static_cast<double>(landmarks.size());
    c.long_mre_mm = long_sum / static_cast<double>(landmarks.size());
    c.delta_mm = c.short_mre_mm - c.long_mre_mm;
    report.comparison = c;
  }
  const auto table = report_table(report);
  std::fputs(table.c_str(), stdout);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "report.json", report_json(report) + "\n");
    write_text(fs::path(a.out) / "report.txt", table);
  }
  return 0;
}

// ---- infer ----

struct InferArgs {
  std::string image;
  std::vector<std::string> model_files;
  std::string models;
  std::optional<int> iterations;
};

int cmd_infer(const InferArgs& a) {
  std::vector<fs::path> paths(a.model_files.begin(), a.model_files.end());
  if (paths.empty()) {
    const fs::path dir = a.models.empty() ? fs::path("models") : fs::path(a.models);
    if (!fs::is_directory(dir)) throw InputError("model directory " + dir.string() + " not found");
    std::map<int, fs::path> found;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      int k = -1;
      if (std::sscanf(name.c_str(), "model_L%d.fvpy", &k) == 1 && e.path().extension() == ".fvpy") found[k] = e.path();
    }
    for (const auto& [k, p] : found) paths.push_back(p);
    if (paths.empty()) throw InputError("no model_L<k>.fvpy files in " + dir.string());
  }
  std::vector<Model> models;
  for (const auto& p : paths) models.push_back(open_model(p));

  GrayImage image;
  try {
    image = read_image(a.image);
  } catch (const IoError& e) {
    throw InputError(e.what());
  }
  std::map<int, GaussianPyramid> pyramids;
  for (const auto& m : models) {
    if (!pyramids.count(m.meta.levels)) pyramids.emplace(m.meta.levels, build_pyramid(image, m.meta.levels));
  }
  std::vector<Point2> out(models.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < models.size(); ++i) {
    const int t = a.iterations ? *a.iterations : 10;
    out[i] = infer(models[i], pyramids.at(models[i].meta.levels), t).position;
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::printf("%s %.2f %.2f\n", landmark_label(models[i]).c_str(), out[i].x, out[i].y);
  }
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::string sides = "256,512,1024,2048,4096";
  int calls = 100;
  std::string preset{kPresetTiny};
  std::uint64_t seed = 0;
  std::string json;
};

int cmd_bench(const BenchArgs& a) {
  std::vector<int> sides;
  for (const auto& s : split_list(a.sides)) sides.push_back(std::stoi(s));
  if (sides.empty()) throw ValueError("--sides is empty");
  const auto report = run_scaling_bench(sides, a.calls, a.preset, a.seed);
  std::fputs(scaling_report_table(report).c_str(), stdout);
  if (!a.json.empty()) write_text(a.json, scaling_report_json(report) + "\n");
  int status = 0;
  for (const auto& r : report.rows) {
    if (r.error) {
      status = kExitFailure;
    } else if (r.glimpse_pixels != static_cast<std::size_t>(num_levels(r.side, r.side)) * kPatchSize * kPatchSize) {
      std::fprintf(stderr, "error: side %d sampled %zu pixels, expected N*4096\n", r.side, r.glimpse_pixels);
      status = kExitFailure;
    }
  }
  return status;
}

// ---- synth ----

int cmd_synth(const SyntheticConfig& config, const std::string& out) {
  const auto ds = gen_synthetic(config);
  write_dataset(ds, out);
  std::printf("wrote %d images (%dx%d, %d landmark%s, %d train) to %s\n", config.count, config.side, config.side,
              config.landmarks, config.landmarks == 1 ? "" : "s", config.train_count, out.c_str());
  return 0;
}

int threads_from_env() {
  if (const char* env = std::getenv("FVPY_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foveated pyramid landmark regression"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: FVPY_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one model per selected landmark");
  train_cmd->add_option("--data", ta.data, "Dataset root")->required();
  train_cmd->add_option("--landmark", ta.landmarks, "Index, comma list, or 'all'");
  train_cmd->add_option("--out", ta.out, "Output directory for models and logs");
  train_cmd->add_option("--config", ta.config_file, "JSON training config (flags take precedence)");
  train_cmd->add_option("--split", ta.split, "Split to train on (default: 'train' if defined, else all)");
  train_cmd->add_option("--gt-mode", ta.gt_mode, "average, junior or senior");
  train_cmd->add_option("--preset", ta.preset, "CNN preset: tiny or resnet34-trunc");
  train_cmd->add_option("--epochs", ta.epochs, "Epochs at the first and second learning rate, e.g. 20,20");
  train_cmd->add_option("--lr", ta.learning_rates, "Learning rates, e.g. 1e-4,1e-5");
  train_cmd->add_option("--batch", ta.batch_size, "Images per batch");
  train_cmd->add_option("--iterations", ta.iterations, "Refinement iterations per batch");
  train_cmd->add_option("--levels", ta.levels, "Pyramid levels (default: from image size)");
  train_cmd->add_option("--output-scale", ta.output_scale, "Offset multiplier (default: mean label std)");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Epochs between checkpoints (0: none)");
  train_cmd->add_option("--seed", ta.seed, "RNG seed");
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained models on a labelled split");
  eval_cmd->add_option("--data", ea.data, "Dataset root")->required();
  eval_cmd->add_option("--models", ea.models, "Directory holding model_L<k>.fvpy");
  eval_cmd->add_option("--landmark", ea.landmarks, "Index, comma list, or 'all' (every model found)");
  eval_cmd->add_option("--split", ea.split, "Split to evaluate (default: 'test' if defined, else all)");
  eval_cmd->add_option("--gt-mode", ea.gt_mode, "average, junior or senior");
  eval_cmd->add_option("--iterations", ea.iterations, "Inference iterations");
  eval_cmd->add_option("--compare", ea.compare, "Also report MRE after this many iterations (0: off)");
  eval_cmd->add_option("--out", ea.out, "Write report.json and report.txt here");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Locate landmarks in one image");
  infer_cmd->add_option("image", ia.image, "Image file (PNG or BMP)")->required();
  infer_cmd->add_option("--model", ia.model_files, "Model file (repeatable)");
  infer_cmd->add_option("--models", ia.models, "Directory of model_L<k>.fvpy (default: models)");
  infer_cmd->add_option("--iterations", ia.iterations, "Inference iterations (default 10)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Per-iteration cost against image side length");
  bench_cmd->add_option("--sides", ba.sides, "Comma-separated side lengths");
  bench_cmd->add_option("--calls", ba.calls, "Refinement calls timed per side");
  bench_cmd->add_option("--preset", ba.preset, "CNN preset");
  bench_cmd->add_option("--seed", ba.seed, "Model and focal-point seed");
  bench_cmd->add_option("--json", ba.json, "Write the report as JSON");

  SyntheticConfig sc;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "Output dataset root")->required();
  synth_cmd->add_option("--side", sc.side, "Image side in pixels");
  synth_cmd->add_option("--count", sc.count, "Number of images");
  synth_cmd->add_option("--train-count", sc.train_count, "Images in the 'train' split; the rest form 'test'");
  synth_cmd->add_option("--landmarks", sc.landmarks, "Landmarks per image");
  synth_cmd->add_option("--noise", sc.noise, "Gaussian noise sigma");
  synth_cmd->add_option("--distractors", sc.distractors, "Crosses without a glow");
  synth_cmd->add_option("--cue", sc.cue_strength, "Glow amplitude");
  synth_cmd->add_option("--seed", sc.seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  if (threads == 0) threads = threads_from_env();
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*infer_cmd) return cmd_infer(ia);
    if (*bench_cmd) return cmd_bench(ba);
    if (*synth_cmd) return cmd_synth(sc, synth_out);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
