#pragma once

// CNN presets shared across pyramid levels, the offset-regressing MLP, and
// the parameter container with its on-disk format.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fvpy/geometry.hpp"
#include "fvpy/tensor.hpp"

namespace fvpy {

inline constexpr std::string_view kPresetTiny = "tiny";
inline constexpr std::string_view kPresetResnet = "resnet34-trunc";
inline constexpr int kMlpHidden1 = 512;
inline constexpr int kMlpHidden2 = 128;

struct CnnArchitecture {
  std::string preset;
  std::vector<std::string> layers;
  int channels = 0;
  int height = 0;
  int width = 0;
};

// Throws ValueError for an unknown preset name.
CnnArchitecture cnn_architecture(std::string_view preset);

struct ModelMetadata {
  std::string preset{kPresetTiny};
  int levels = 1;
  int channels = 0;
  int landmark = 0;
  std::string landmark_name;
  std::uint64_t config_hash = 0;
  // The MLP's last layer is multiplied by this before the offset is used,
  // so the raw output lives in units of the label spread.
  double output_scale = 1.0;
  Point2 label_mean;
  Point2 label_std;

  int feature_width() const { return levels * channels * 3; }
};

template <typename T>
class BasicModel {
 public:
  ModelMetadata meta;
  std::vector<std::string> names;
  std::vector<BasicTensor<T>> tensors;

  const BasicTensor<T>& param(std::string_view name) const;
  bool has_param(std::string_view name) const;
  std::int64_t parameter_count() const;

  // Deep copy converted to another element type (fresh leaves with the
  // same requires_grad flags).
  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out;
    out.meta = meta;
    out.names = names;
    for (const auto& t : tensors) {
      auto d = t.data();
      out.tensors.push_back(BasicTensor<U>::from_data(t.shape(), std::vector<U>(d.begin(), d.end()), t.requires_grad()));
    }
    return out;
  }

  BasicModel clone() const { return cast<T>(); }
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

// Gaussian matrix orthogonalized by QR with the sign of R's diagonal folded
// back in. Rows are orthonormal when rows <= cols, columns otherwise.
std::vector<double> orthogonal_init(int rows, int cols, std::mt19937_64& rng);

// Fresh parameters: Kaiming fan-in normal CNN weights, orthogonal MLP
// weights, zero biases, unit batch-norm scales.
Model create_model(std::string_view preset, int levels, std::uint64_t seed);

// patches [P,1,64,64] (or [1,64,64]) -> [P,C,8,8] (or [C,8,8]).
template <typename T>
BasicTensor<T> cnn_forward(const BasicModel<T>& model, const BasicTensor<T>& patches);

// features [D] or [B,D] -> offset [2] or [B,2] in full-resolution pixels
// (output_scale applied).
template <typename T>
BasicTensor<T> mlp_forward(const BasicModel<T>& model, const BasicTensor<T>& features);

// Glimpse stacks [B*N,1,64,64], image-major, -> spatialized features [B,N*C*3].
template <typename T>
BasicTensor<T> glimpse_features(const BasicModel<T>& model, const BasicTensor<T>& patches, std::int64_t batch);

// Binary model file plus `<path>.json` carrying the metadata for tooling.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::string metadata_to_json(const ModelMetadata& meta);

}  // namespace fvpy
