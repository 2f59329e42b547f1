#include "fvpy/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fvpy/error.hpp"
#include "fvpy/ops.hpp"
#include "fvpy/pyramid.hpp"
#include "fvpy/spatialize.hpp"

namespace fvpy {

namespace {

struct BlockStage {
  int blocks;
  int channels;
  int stride;
};

// layer1..layer3 of a ResNet-34; layer4 is dropped.
constexpr BlockStage kResnetStages[] = {{3, 64, 1}, {4, 128, 2}, {6, 256, 2}};

struct ParamBuilder {
  std::mt19937_64& rng;
  Model& model;
  bool initialize = true;

  void add(std::string name, Shape shape, std::vector<float> values) {
    model.names.push_back(std::move(name));
    model.tensors.push_back(Tensor::from_data(std::move(shape), std::move(values), true));
  }

  void conv(const std::string& name, int out, int in, int k, bool bias) {
    const double stddev = std::sqrt(2.0 / (in * k * k));
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<float> w(static_cast<std::size_t>(out) * in * k * k);
    if (initialize) {
      for (auto& v : w) v = static_cast<float>(dist(rng));
    }
    add(name + ".weight", {out, in, k, k}, std::move(w));
    if (bias) add(name + ".bias", {out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f));
  }

  void bn(const std::string& name, int channels) {
    add(name + ".weight", {channels}, std::vector<float>(static_cast<std::size_t>(channels), 1.0f));
    add(name + ".bias", {channels}, std::vector<float>(static_cast<std::size_t>(channels), 0.0f));
  }

  void linear(const std::string& name, int out, int in) {
    std::vector<float> w(static_cast<std::size_t>(out) * in);
    if (initialize) {
      auto q = orthogonal_init(out, in, rng);
      std::copy(q.begin(), q.end(), w.begin());
    }
    add(name + ".weight", {out, in}, std::move(w));
    add(name + ".bias", {out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f));
  }
};

template <typename T>
BasicTensor<T> conv_bn(const BasicModel<T>& m, const BasicTensor<T>& x, const std::string& conv, const std::string& bn,
                       int stride, int padding) {
  return ops::batch_norm(ops::conv2d(x, m.param(conv + ".weight"), BasicTensor<T>(), stride, padding),
                         m.param(bn + ".weight"), m.param(bn + ".bias"));
}

template <typename T>
BasicTensor<T> resnet_forward(const BasicModel<T>& m, BasicTensor<T> x) {
  x = ops::relu(conv_bn(m, x, "conv1", "bn1", 1, 3));
  x = ops::maxpool2d(x, 3, 2, 1);
  int layer = 1;
  for (const auto& stage : kResnetStages) {
    for (int b = 0; b < stage.blocks; ++b) {
      const std::string prefix = "layer" + std::to_string(layer) + "." + std::to_string(b);
      const int stride = b == 0 ? stage.stride : 1;
      auto y = ops::relu(conv_bn(m, x, prefix + ".conv1", prefix + ".bn1", stride, 1));
      y = conv_bn(m, y, prefix + ".conv2", prefix + ".bn2", 1, 1);
      auto shortcut = m.has_param(prefix + ".downsample.0.weight")
                          ? conv_bn(m, x, prefix + ".downsample.0", prefix + ".downsample.1", stride, 0)
                          : x;
      x = ops::relu(ops::add(y, shortcut));
    }
    ++layer;
  }
  return x;
}

template <typename T>
BasicTensor<T> tiny_forward(const BasicModel<T>& m, BasicTensor<T> x) {
  for (const char* name : {"conv1", "conv2", "conv3"}) {
    const std::string n(name);
    x = ops::maxpool2d(ops::relu(ops::conv2d(x, m.param(n + ".weight"), m.param(n + ".bias"), 1, 1)), 2, 2);
  }
  return x;
}

// Little-endian primitive IO.
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ModelFormatError(ModelFormatError::Kind::Truncated,
                             path_ + ": file ends inside " + std::string(what));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'F', 'V', 'P', 'Y'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

nlohmann::json metadata_json(const ModelMetadata& meta) {
  return {{"preset", meta.preset},
          {"levels", meta.levels},
          {"channels", meta.channels},
          {"landmark", meta.landmark},
          {"landmark_name", meta.landmark_name},
          {"config_hash", meta.config_hash},
          {"output_scale", meta.output_scale},
          {"label_mean", {meta.label_mean.x, meta.label_mean.y}},
          {"label_std", {meta.label_std.x, meta.label_std.y}},
          {"patch_size", kPatchSize}};
}

ModelMetadata metadata_from_json(const nlohmann::json& j) {
  ModelMetadata meta;
  meta.preset = j.at("preset").get<std::string>();
  meta.levels = j.at("levels").get<int>();
  meta.channels = j.at("channels").get<int>();
  meta.landmark = j.at("landmark").get<int>();
  meta.landmark_name = j.at("landmark_name").get<std::string>();
  meta.config_hash = j.at("config_hash").get<std::uint64_t>();
  meta.output_scale = j.at("output_scale").get<double>();
  meta.label_mean = {j.at("label_mean").at(0).get<double>(), j.at("label_mean").at(1).get<double>()};
  meta.label_std = {j.at("label_std").at(0).get<double>(), j.at("label_std").at(1).get<double>()};
  if (j.at("patch_size").get<int>() != kPatchSize) throw ValueError("patch size differs");
  return meta;
}

}  // namespace

CnnArchitecture cnn_architecture(std::string_view preset) {
  CnnArchitecture a;
  a.preset = std::string(preset);
  a.height = 8;
  a.width = 8;
  if (preset == kPresetTiny) {
    a.channels = 32;
    a.layers = {"conv3x3 1->32 pad1", "relu", "maxpool2", "conv3x3 32->32 pad1", "relu", "maxpool2",
                "conv3x3 32->32 pad1", "relu", "maxpool2"};
  } else if (preset == kPresetResnet) {
    a.channels = 256;
    a.layers = {"conv7x7 1->64 stride1 pad3", "batchnorm", "relu", "maxpool3x3 stride2 pad1"};
    int in = 64;
    int layer = 1;
    for (const auto& s : kResnetStages) {
      for (int b = 0; b < s.blocks; ++b) {
        a.layers.push_back("layer" + std::to_string(layer) + "." + std::to_string(b) + " basic block " +
                           std::to_string(b == 0 ? in : s.channels) + "->" + std::to_string(s.channels) +
                           (b == 0 && s.stride != 1 ? " stride2" : ""));
      }
      in = s.channels;
      ++layer;
    }
  } else {
    throw ValueError("unknown CNN preset '" + std::string(preset) + "'");
  }
  return a;
}

template <typename T>
const BasicTensor<T>& BasicModel<T>::param(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw ValueError("model has no parameter '" + std::string(name) + "'");
}

template <typename T>
bool BasicModel<T>::has_param(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

template <typename T>
std::int64_t BasicModel<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

std::vector<double> orthogonal_init(int rows, int cols, std::mt19937_64& rng) {
  if (rows < 1 || cols < 1) throw ValueError("orthogonal_init: dimensions must be positive");
  const int tall = std::max(rows, cols);
  const int thin = std::min(rows, cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(tall, thin);
  for (int j = 0; j < thin; ++j)
    for (int i = 0; i < tall; ++i) a(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(thin, thin).triangularView<Eigen::Upper>();
  for (int j = 0; j < thin; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  // q is tall x thin with orthonormal columns.
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) w[static_cast<std::size_t>(i) * cols + j] = rows >= cols ? q(i, j) : q(j, i);
  return w;
}

namespace {

Model build_model(std::string_view preset, int levels, std::uint64_t seed, bool initialize) {
  if (levels < 1) throw ValueError("create_model: need at least one level");
  const auto arch = cnn_architecture(preset);
  Model m;
  m.meta.preset = arch.preset;
  m.meta.levels = levels;
  m.meta.channels = arch.channels;
  std::mt19937_64 rng(seed);
  ParamBuilder b{rng, m, initialize};
  if (preset == kPresetTiny) {
    b.conv("conv1", 32, 1, 3, true);
    b.conv("conv2", 32, 32, 3, true);
    b.conv("conv3", 32, 32, 3, true);
  } else {
    b.conv("conv1", 64, 1, 7, false);
    b.bn("bn1", 64);
    int in = 64;
    int layer = 1;
    for (const auto& s : kResnetStages) {
      for (int k = 0; k < s.blocks; ++k) {
        const std::string prefix = "layer" + std::to_string(layer) + "." + std::to_string(k);
        const int block_in = k == 0 ? in : s.channels;
        b.conv(prefix + ".conv1", s.channels, block_in, 3, false);
        b.bn(prefix + ".bn1", s.channels);
        b.conv(prefix + ".conv2", s.channels, s.channels, 3, false);
        b.bn(prefix + ".bn2", s.channels);
        if (k == 0 && (s.stride != 1 || block_in != s.channels)) {
          b.conv(prefix + ".downsample.0", s.channels, block_in, 1, false);
          b.bn(prefix + ".downsample.1", s.channels);
        }
      }
      in = s.channels;
      ++layer;
    }
  }
  b.linear("fc1", kMlpHidden1, m.meta.feature_width());
  b.linear("fc2", kMlpHidden2, kMlpHidden1);
  b.linear("fc3", 2, kMlpHidden2);
  return m;
}

}  // namespace

Model create_model(std::string_view preset, int levels, std::uint64_t seed) {
  return build_model(preset, levels, seed, true);
}

template <typename T>
BasicTensor<T> cnn_forward(const BasicModel<T>& model, const BasicTensor<T>& patches) {
  const bool single = patches.rank() == 3;
  if ((patches.rank() != 3 && patches.rank() != 4) || patches.dim(-3) != 1 || patches.dim(-2) != kPatchSize ||
      patches.dim(-1) != kPatchSize) {
    throw ShapeError("cnn_forward: expected [P,1,64,64] patches, got " + shape_to_string(patches.shape()));
  }
  auto x = single ? ops::reshape(patches, {1, 1, kPatchSize, kPatchSize}) : patches;
  auto y = model.meta.preset == kPresetTiny ? tiny_forward(model, x) : resnet_forward(model, x);
  if (single) y = ops::reshape(y, Shape(y.shape().begin() + 1, y.shape().end()));
  return y;
}

template <typename T>
BasicTensor<T> mlp_forward(const BasicModel<T>& model, const BasicTensor<T>& features) {
  const auto width = model.meta.feature_width();
  if ((features.rank() != 1 && features.rank() != 2) || features.dim(-1) != width) {
    throw ShapeError("mlp_forward: expected feature width " + std::to_string(width) + ", got " +
                     shape_to_string(features.shape()));
  }
  const bool single = features.rank() == 1;
  auto x = single ? ops::reshape(features, {1, width}) : features;
  x = ops::relu(ops::linear(x, model.param("fc1.weight"), model.param("fc1.bias")));
  x = ops::relu(ops::linear(x, model.param("fc2.weight"), model.param("fc2.bias")));
  x = ops::linear(x, model.param("fc3.weight"), model.param("fc3.bias"));
  if (model.meta.output_scale != 1.0) {
    const auto rows = static_cast<std::size_t>(x.dim(0));
    const T k = static_cast<T>(model.meta.output_scale);
    std::vector<T> scale(rows * 4, T(0));
    for (std::size_t b = 0; b < rows; ++b) scale[b * 4] = scale[b * 4 + 3] = k;
    x = ops::row_affine(x, scale, std::vector<T>(rows * 2, T(0)));
  }
  return single ? ops::reshape(x, {2}) : x;
}

template <typename T>
BasicTensor<T> glimpse_features(const BasicModel<T>& model, const BasicTensor<T>& patches, std::int64_t batch) {
  if (patches.rank() != 4 || batch < 1 || patches.dim(0) != batch * model.meta.levels) {
    throw ShapeError("glimpse_features: expected [" + std::to_string(batch) + "*" + std::to_string(model.meta.levels) +
                     ",1,64,64], got " + shape_to_string(patches.shape()));
  }
  auto features = spatialize(cnn_forward(model, patches));
  return ops::reshape(features, {batch, model.meta.feature_width()});
}

std::string metadata_to_json(const ModelMetadata& meta) { return metadata_json(meta).dump(2); }

void save_model(const Model& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string meta = metadata_json(model.meta).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u32(out, static_cast<std::uint32_t>(model.tensors.size()));
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    const auto& name = model.names[i];
    const auto& t = model.tensors[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IoError("failed writing model file " + path.string());
  out.close();

  auto sidecar = metadata_json(model.meta);
  sidecar["format_version"] = kFormatVersion;
  sidecar["parameter_count"] = model.parameter_count();
  auto& tensors = sidecar["tensors"];
  tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    tensors.push_back({{"name", model.names[i]}, {"shape", model.tensors[i].shape()}});
  }
  std::ofstream side(path.string() + ".json");
  if (!side) throw IoError("cannot write model sidecar for " + path.string());
  side << sidecar.dump(2) << '\n';
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  Reader r(std::move(bytes), where);

  if (r.remaining() < 4 || r.str(4, "magic") != std::string_view(kMagic, 4)) {
    throw ModelFormatError(ModelFormatError::Kind::BadMagic, where + ": not a model file (bad magic)");
  }
  const auto version = r.u32("version");
  if (version != kFormatVersion) {
    throw ModelFormatError(ModelFormatError::Kind::VersionMismatch,
                           where + ": format version " + std::to_string(version) + ", expected " +
                               std::to_string(kFormatVersion));
  }
  const auto meta_len = r.u32("metadata length");
  if (meta_len > (1u << 20)) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": metadata too large");
  Model m;
  try {
    m.meta = metadata_from_json(nlohmann::json::parse(r.str(meta_len, "metadata")));
    (void)cnn_architecture(m.meta.preset);
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": bad metadata: " + e.what());
  }
  const auto count = r.u32("tensor count");
  if (count > 100000) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": absurd tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.u32("tensor name length");
    if (name_len == 0 || name_len > 4096) {
      throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": bad tensor name length");
    }
    auto name = r.str(name_len, "tensor name");
    const auto rank = r.u32("tensor rank");
    if (rank > kMaxRank) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": bad rank for " + name);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.u64("tensor dims");
      if (dim > (1ull << 32)) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": bad dim for " + name);
      numel *= dim;
      if (numel > (1ull << 34)) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": tensor too large");
      shape.push_back(static_cast<std::int64_t>(dim));
    }
    r.need(numel * 4, "tensor payload");
    std::vector<float> values(numel);
    for (auto& v : values) v = std::bit_cast<float>(r.u32("tensor payload"));
    m.names.push_back(std::move(name));
    m.tensors.push_back(Tensor::from_data(std::move(shape), std::move(values), true));
  }
  if (!r.done()) throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": trailing bytes after tensors");

  // The tensor list must be exactly what the declared preset expects.
  if (m.meta.levels < 1 || m.meta.channels != cnn_architecture(m.meta.preset).channels) {
    throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": inconsistent metadata");
  }
  const auto expected = build_model(m.meta.preset, m.meta.levels, 0, false);
  if (expected.names != m.names) {
    throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": tensor list does not match preset");
  }
  for (std::size_t i = 0; i < m.tensors.size(); ++i) {
    if (expected.tensors[i].shape() != m.tensors[i].shape()) {
      throw ModelFormatError(ModelFormatError::Kind::CorruptHeader, where + ": shape mismatch for " + m.names[i]);
    }
  }
  return m;
}

template class BasicModel<float>;
template class BasicModel<double>;
template BasicTensor<float> cnn_forward(const BasicModel<float>&, const BasicTensor<float>&);
template BasicTensor<double> cnn_forward(const BasicModel<double>&, const BasicTensor<double>&);
template BasicTensor<float> mlp_forward(const BasicModel<float>&, const BasicTensor<float>&);
template BasicTensor<double> mlp_forward(const BasicModel<double>&, const BasicTensor<double>&);
template BasicTensor<float> glimpse_features(const BasicModel<float>&, const BasicTensor<float>&, std::int64_t);
template BasicTensor<double> glimpse_features(const BasicModel<double>&, const BasicTensor<double>&, std::int64_t);

}  // namespace fvpy
