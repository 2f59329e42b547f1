#include "fvpy/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fvpy/error.hpp"

namespace fvpy {

namespace {

std::string image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", index);
  return buf;
}

std::filesystem::path find_image(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".png", ".bmp", ".PNG", ".BMP"}) {
    auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return {};
}

bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp";
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_int(const std::string& text, long& out) {
  const auto t = trim(text);
  if (t.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stol(t, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == t.size();
}

DatasetMetadata read_metadata(const std::filesystem::path& root) {
  DatasetMetadata meta;
  const auto path = root / "metadata.json";
  if (!std::filesystem::exists(path)) {
    meta.landmark_names = isbi_landmark_names();
    meta.width = kIsbiWidth;
    meta.height = kIsbiHeight;
    return meta;
  }
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    meta.px_per_mm = j.value("px_per_mm", 10.0);
    meta.width = j.value("width", 0);
    meta.height = j.value("height", 0);
    meta.landmark_names = j.value("landmark_names", isbi_landmark_names());
    if (j.contains("splits")) meta.splits = j.at("splits").get<std::map<std::string, std::vector<int>>>();
  } catch (const std::exception& e) {
    throw ParseError(path.string(), 0, std::string("bad metadata: ") + e.what());
  }
  if (!(meta.px_per_mm > 0.0)) throw ParseError(path.string(), 0, "px_per_mm must be positive");
  if (meta.landmark_names.empty()) throw ParseError(path.string(), 0, "no landmark names");
  return meta;
}

void render_cross(GrayImage& img, Point2 c, double half_length, double amplitude) {
  // Union of a horizontal and a vertical 1-px bar, area-antialiased.
  auto overlap = [](double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); };
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x - half_length)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(c.x + half_length)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y - half_length)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(c.y + half_length)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double h = overlap(x, x + 1, c.x - half_length, c.x + half_length) * overlap(y, y + 1, c.y - 0.5, c.y + 0.5);
      const double v = overlap(x, x + 1, c.x - 0.5, c.x + 0.5) * overlap(y, y + 1, c.y - half_length, c.y + half_length);
      const double both = overlap(x, x + 1, c.x - 0.5, c.x + 0.5) * overlap(y, y + 1, c.y - 0.5, c.y + 0.5);
      img.at(x, y) += static_cast<float>(amplitude * (h + v - both));
    }
  }
}

constexpr double kCrossHalfLength = 2.5;
constexpr double kCrossAmplitude = 0.35;
constexpr double kBackground = 0.05;

}  // namespace

const std::vector<std::string>& isbi_landmark_names() {
  static const std::vector<std::string> names{
      "Sella",          "Nasion",           "Orbitale",          "Porion",
      "Subspinale",     "Supramentale",     "Pogonion",          "Menton",
      "Gnathion",       "Gonion",           "Incision inferius", "Incision superius",
      "Upper lip",      "Lower lip",        "Subnasale",         "Soft tissue pogonion",
      "Posterior nasal spine", "Anterior nasal spine", "Articulare"};
  return names;
}

GroundTruthMode parse_ground_truth_mode(std::string_view name) {
  if (name == "average") return GroundTruthMode::Average;
  if (name == "junior") return GroundTruthMode::Junior;
  if (name == "senior") return GroundTruthMode::Senior;
  throw ValueError("unknown ground-truth mode '" + std::string(name) + "' (average, junior, senior)");
}

GrayImage AnnotatedImage::load() const {
  if (pixels) return *pixels;
  return read_image(path);
}

std::vector<AnnotatedImage> Dataset::split(const std::string& name) const {
  auto it = meta.splits.find(name);
  if (it == meta.splits.end()) throw ValueError("dataset defines no split named '" + name + "'");
  std::vector<AnnotatedImage> out;
  for (int index : it->second) {
    auto found = std::find_if(images.begin(), images.end(), [&](const AnnotatedImage& im) { return im.index == index; });
    if (found == images.end()) throw ValueError("split '" + name + "' names missing image " + std::to_string(index));
    out.push_back(*found);
  }
  return out;
}

std::vector<Point2> read_annotation_file(const std::filesystem::path& path, int landmarks) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open annotation file");
  std::vector<Point2> points;
  std::string line;
  int number = 0;
  while (static_cast<int>(points.size()) < landmarks && std::getline(in, line)) {
    ++number;
    const auto comma = line.find(',');
    long x = 0;
    long y = 0;
    if (comma == std::string::npos || !parse_int(line.substr(0, comma), x) || !parse_int(line.substr(comma + 1), y)) {
      throw ParseError(path.string(), number, "expected \"x,y\" integers, got \"" + trim(line) + "\"");
    }
    points.push_back({static_cast<double>(x), static_cast<double>(y)});
  }
  if (static_cast<int>(points.size()) < landmarks) {
    throw ParseError(path.string(), number,
                     "expected " + std::to_string(landmarks) + " landmark lines, found " + std::to_string(points.size()));
  }
  return points;
}

Dataset load_dataset(const std::filesystem::path& root, GroundTruthMode mode) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  const auto image_dir = root / "images";
  if (!std::filesystem::is_directory(image_dir)) throw IoError("missing images/ directory under " + root.string());
  Dataset ds;
  ds.meta = read_metadata(root);
  const int landmarks = ds.landmark_count();

  std::set<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      if (!ids.insert(entry.path().stem().string()).second) {
        throw IoError("duplicate image id " + entry.path().stem().string() + " in " + image_dir.string());
      }
    }
  }
  if (ids.empty()) throw IoError("no images found in " + image_dir.string());

  ds.images.resize(ids.size());
  std::vector<std::string> id_list(ids.begin(), ids.end());
  for (std::size_t k = 0; k < id_list.size(); ++k) {
    const auto& id = id_list[k];
    long index = 0;
    if (!parse_int(id, index) || index < 1) throw IoError("image name " + id + " is not a positive index");
    auto& im = ds.images[k];
    im.index = static_cast<int>(index);
    im.id = id;
    im.path = find_image(image_dir, id);
    std::tie(im.width, im.height) = read_image_size(im.path);
    const auto junior = root / "annotations" / "junior" / (id + ".txt");
    const auto senior = root / "annotations" / "senior" / (id + ".txt");
    const bool has_junior = std::filesystem::exists(junior);
    const bool has_senior = std::filesystem::exists(senior);
    if (!has_junior && !has_senior) throw IoError("no annotation file for image " + id);
    if (has_junior) im.junior = read_annotation_file(junior, landmarks);
    if (has_senior) im.senior = read_annotation_file(senior, landmarks);
    if (mode == GroundTruthMode::Junior && !has_junior) throw IoError("missing junior annotation for image " + id);
    if (mode == GroundTruthMode::Senior && !has_senior) throw IoError("missing senior annotation for image " + id);
    if (mode == GroundTruthMode::Junior || (mode == GroundTruthMode::Average && !has_senior)) {
      im.truth = im.junior;
    } else if (mode == GroundTruthMode::Senior || !has_junior) {
      im.truth = im.senior;
    } else {
      im.truth.resize(im.junior.size());
      for (std::size_t i = 0; i < im.truth.size(); ++i) im.truth[i] = 0.5 * (im.junior[i] + im.senior[i]);
    }
    if (ds.meta.width > 0 && ds.meta.height > 0 && (im.width != ds.meta.width || im.height != ds.meta.height)) {
      std::cerr << "warning: " << im.path.string() << " is " << im.width << "x" << im.height << ", metadata says "
                << ds.meta.width << "x" << ds.meta.height << '\n';
    }
  }
  std::sort(ds.images.begin(), ds.images.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  for (std::size_t k = 1; k < ds.images.size(); ++k) {
    if (ds.images[k].index == ds.images[k - 1].index) {
      throw IoError("images " + ds.images[k - 1].id + " and " + ds.images[k].id + " share an index");
    }
  }
  return ds;
}

std::vector<AnnotatedImage> load_isbi(const std::filesystem::path& root, GroundTruthMode mode) {
  auto ds = load_dataset(root, mode);
  if (ds.landmark_count() != kIsbiLandmarkCount) {
    throw ValueError("corpus metadata declares " + std::to_string(ds.landmark_count()) + " landmarks, expected 19");
  }
  return std::move(ds.images);
}

ChallengeSplit split_challenge(const std::vector<AnnotatedImage>& corpus) {
  if (corpus.size() != static_cast<std::size_t>(kIsbiCorpusSize)) {
    throw ValueError("split_challenge: expected 400 images, got " + std::to_string(corpus.size()));
  }
  ChallengeSplit s;
  for (const auto& im : corpus) {
    if (im.index >= 1 && im.index <= 150) s.train.push_back(im);
    else if (im.index <= 300) s.test1.push_back(im);
    else if (im.index <= 400) s.test2.push_back(im);
  }
  if (s.train.size() != 150 || s.test1.size() != 150 || s.test2.size() != 100) {
    throw ValueError("split_challenge: image indices are not 1..400");
  }
  return s;
}

std::vector<Fold> kfold(const std::vector<AnnotatedImage>& corpus, int k, std::uint64_t seed) {
  if (k < 2 || corpus.empty() || corpus.size() % static_cast<std::size_t>(k) != 0) {
    throw ValueError("kfold: k=" + std::to_string(k) + " does not divide " + std::to_string(corpus.size()) + " images");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t fold_size = corpus.size() / static_cast<std::size_t>(k);
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& target = i / fold_size == f ? folds[f].test : folds[f].train;
      target.push_back(corpus[order[i]]);
    }
  }
  return folds;
}

Dataset gen_synthetic(const SyntheticConfig& config) {
  if (config.side < 128) throw ValueError("gen_synthetic: side must be at least 128");
  if (config.count < 1 || config.landmarks < 1) throw ValueError("gen_synthetic: count and landmarks must be positive");
  if (config.train_count < 0 || config.train_count > config.count) throw ValueError("gen_synthetic: bad train_count");
  if (config.noise < 0.0 || config.distractors < 0 || config.cue_strength < 0.0) {
    throw ValueError("gen_synthetic: noise, distractors and cue strength must be non-negative");
  }
  Dataset ds;
  ds.meta.px_per_mm = 10.0;
  ds.meta.width = config.side;
  ds.meta.height = config.side;
  for (int l = 0; l < config.landmarks; ++l) ds.meta.landmark_names.push_back("L" + std::to_string(l + 1));
  for (int i = 1; i <= config.count; ++i) ds.meta.splits[i <= config.train_count ? "train" : "test"].push_back(i);
  ds.images.resize(static_cast<std::size_t>(config.count));

  const int side = config.side;
  const double sigma = side / 8.0;
  const int lo = static_cast<int>(std::ceil(0.2 * side));
  const int hi = static_cast<int>(std::floor(0.8 * side));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<int> pos(lo, hi);
    std::vector<Point2> marks;
    for (int l = 0; l < config.landmarks; ++l) marks.push_back({static_cast<double>(pos(rng)), static_cast<double>(pos(rng))});
    std::uniform_real_distribution<double> anywhere(8.0, side - 8.0);
    std::vector<Point2> distractors;
    for (int d = 0; d < config.distractors; ++d) distractors.push_back({anywhere(rng), anywhere(rng)});

    auto img = std::make_shared<GrayImage>(side, side, static_cast<float>(kBackground));
    for (const auto& m : marks) {
      for (int y = 0; y < side; ++y) {
        const double dy = y + 0.5 - m.y;
        for (int x = 0; x < side; ++x) {
          const double dx = x + 0.5 - m.x;
          img->at(x, y) += static_cast<float>(config.cue_strength * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
        }
      }
      render_cross(*img, m, kCrossHalfLength, kCrossAmplitude);
    }
    for (const auto& d : distractors) render_cross(*img, d, kCrossHalfLength, kCrossAmplitude);
    if (config.noise > 0.0) {
      std::normal_distribution<double> noise(0.0, config.noise);
      for (auto& v : img->pixels) v += static_cast<float>(noise(rng));
    }
    quantize_8bit(*img);

    auto& im = ds.images[static_cast<std::size_t>(i)];
    im.index = i + 1;
    im.id = image_id(i + 1);
    im.width = side;
    im.height = side;
    im.pixels = std::move(img);
    im.junior = marks;
    im.senior = marks;
    im.truth = marks;
  }
  return ds;
}

std::string dataset_metadata_json(const DatasetMetadata& meta) {
  nlohmann::json j{{"px_per_mm", meta.px_per_mm},
                   {"width", meta.width},
                   {"height", meta.height},
                   {"landmark_names", meta.landmark_names}};
  if (!meta.splits.empty()) j["splits"] = meta.splits;
  return j.dump(2);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "annotations" / "junior");
  std::filesystem::create_directories(root / "annotations" / "senior");
  auto write_points = [](const std::filesystem::path& path, const std::vector<Point2>& points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& p : points) out << std::lround(p.x) << ',' << std::lround(p.y) << '\n';
  };
  for (const auto& im : dataset.images) {
    write_png(root / "images" / (im.id + ".png"), im.load());
    write_points(root / "annotations" / "junior" / (im.id + ".txt"), im.junior);
    write_points(root / "annotations" / "senior" / (im.id + ".txt"), im.senior);
  }
  std::ofstream meta(root / "metadata.json");
  if (!meta) throw IoError("cannot write " + (root / "metadata.json").string());
  meta << dataset_metadata_json(dataset.meta) << '\n';
}

}  // namespace fvpy
