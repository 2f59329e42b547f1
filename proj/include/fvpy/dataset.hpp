#pragma once

// Cephalometric-style landmark datasets: the two-annotator on-disk layout,
// challenge and k-fold splits, and seeded synthetic sets written in the
// same layout.
//
//   root/images/001.png (or .bmp)
//   root/annotations/junior/001.txt   one "x,y" line per landmark
//   root/annotations/senior/001.txt
//   root/metadata.json                px_per_mm, dims, landmark names, splits

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fvpy/geometry.hpp"
#include "fvpy/image.hpp"

namespace fvpy {

inline constexpr int kIsbiLandmarkCount = 19;
inline constexpr int kIsbiCorpusSize = 400;
inline constexpr int kIsbiWidth = 1935;
inline constexpr int kIsbiHeight = 2400;

const std::vector<std::string>& isbi_landmark_names();

enum class GroundTruthMode { Average, Junior, Senior };
GroundTruthMode parse_ground_truth_mode(std::string_view name);

struct AnnotatedImage {
  int index = 0;  // 1-based position in the corpus
  std::string id;
  std::filesystem::path path;               // empty for in-memory images
  std::shared_ptr<const GrayImage> pixels;  // set for in-memory images
  int width = 0;
  int height = 0;
  std::vector<Point2> junior;
  std::vector<Point2> senior;
  std::vector<Point2> truth;

  // Decodes from disk each call unless the pixels are held in memory.
  GrayImage load() const;
};

struct DatasetMetadata {
  double px_per_mm = 10.0;
  int width = 0;
  int height = 0;
  std::vector<std::string> landmark_names;
  // Optional named splits of 1-based image indices.
  std::map<std::string, std::vector<int>> splits;
};

struct Dataset {
  DatasetMetadata meta;
  std::vector<AnnotatedImage> images;

  int landmark_count() const { return static_cast<int>(meta.landmark_names.size()); }
  // Images listed under `name` in the metadata splits; throws ValueError if
  // the split is not defined.
  std::vector<AnnotatedImage> split(const std::string& name) const;
};

// Loads any dataset in the layout above. The landmark count comes from
// metadata.json when present, else 19. Image files are not decoded; their
// size is read from the header and checked against the metadata dims
// (a mismatch is reported on stderr, not thrown).
Dataset load_dataset(const std::filesystem::path& root, GroundTruthMode mode);

// The 400-image corpus with 19 landmarks per file.
std::vector<AnnotatedImage> load_isbi(const std::filesystem::path& root, GroundTruthMode mode);

// Parses one annotation file: exactly `landmarks` "x,y" integer lines, extra
// trailing lines ignored.
std::vector<Point2> read_annotation_file(const std::filesystem::path& path, int landmarks);

struct ChallengeSplit {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> test1;
  std::vector<AnnotatedImage> test2;
};

// Indices 1-150 train, 151-300 test 1, 301-400 test 2.
ChallengeSplit split_challenge(const std::vector<AnnotatedImage>& corpus);

struct Fold {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> test;
};

// Seeded shuffle, then k contiguous test folds; each fold trains on the rest.
std::vector<Fold> kfold(const std::vector<AnnotatedImage>& corpus, int k, std::uint64_t seed);

struct SyntheticConfig {
  int side = 1024;
  int count = 96;
  int train_count = 64;  // first train_count images form the "train" split
  int landmarks = 1;
  double noise = 0.02;
  int distractors = 3;
  double cue_strength = 0.6;
  std::uint64_t seed = 0;
};

// Each image: a broad radial glow centered on every landmark, a thin 5-px
// cross at the landmark itself, distractor crosses without glow, and
// Gaussian noise; quantized to 8 bits so a disk round trip is exact.
// Landmarks are uniform in the central 60% of the image.
Dataset gen_synthetic(const SyntheticConfig& config);

// Writes images as PNG plus annotations and metadata.json. Annotation files
// hold rounded integer coordinates, matching the corpus format.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

std::string dataset_metadata_json(const DatasetMetadata& meta);

}  // namespace fvpy
