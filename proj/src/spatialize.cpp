#include "fvpy/spatialize.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <memory>

#include "fvpy/error.hpp"

namespace fvpy {

template <typename T>
BasicTensor<T> spatialize(const BasicTensor<T>& activations, double temperature) {
  if (activations.rank() < 3) {
    throw ShapeError("spatialize: expected [...,C,H,W], got " + shape_to_string(activations.shape()));
  }
  if (!(temperature > 0.0)) throw ValueError("spatialize: temperature must be positive");
  const std::int64_t h = activations.dim(-2);
  const std::int64_t w = activations.dim(-1);
  const std::int64_t map = h * w;
  if (map == 0) throw ShapeError("spatialize: empty activation map");
  const std::int64_t maps = activations.numel() / map;

  std::vector<double> gx(static_cast<std::size_t>(w));
  std::vector<double> gy(static_cast<std::size_t>(h));
  for (std::int64_t x = 0; x < w; ++x) gx[x] = grid_coordinate(x, w);
  for (std::int64_t y = 0; y < h; ++y) gy[y] = grid_coordinate(y, h);

  auto a = activations.data();
  auto probs = std::make_shared<std::vector<double>>(a.size());
  std::vector<T> out(static_cast<std::size_t>(maps * 3));
#pragma omp parallel for schedule(static) if (maps > 256)
  for (std::int64_t m = 0; m < maps; ++m) {
    const T* src = a.data() + m * map;
    double* p = probs->data() + m * map;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < map; ++i) peak = std::max(peak, static_cast<double>(src[i]) / temperature);
    double total = 0.0;
    for (std::int64_t i = 0; i < map; ++i) total += (p[i] = std::exp(src[i] / temperature - peak));
    double fx = 0.0;
    double fy = 0.0;
    double fa = 0.0;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t i = y * w + x;
        p[i] /= total;
        fx += p[i] * gx[x];
        fy += p[i] * gy[y];
        fa += p[i] * src[i];
      }
    }
    out[m * 3 + 0] = static_cast<T>(fx);
    out[m * 3 + 1] = static_cast<T>(fy);
    out[m * 3 + 2] = static_cast<T>(fa);
  }

  Shape shape(activations.shape().begin(), activations.shape().end() - 2);
  shape.push_back(3);
  auto features = std::make_shared<std::vector<T>>(out);
  return make_result<T>(std::move(shape), std::move(out), {activations},
                        [activations, probs, features, gx, gy, h, w, maps, temperature](std::span<const T> grad) {
                          // d f_x / d a_j = p_j (g_j - f_x) / tau
                          // d f_a / d a_j = p_j + p_j (a_j - f_a) / tau
                          auto a = activations.data();
                          auto da = activations.grad_buffer();
                          const std::int64_t map = h * w;
                          for (std::int64_t m = 0; m < maps; ++m) {
                            const double* p = probs->data() + m * map;
                            const double fx = (*features)[m * 3 + 0];
                            const double fy = (*features)[m * 3 + 1];
                            const double fa = (*features)[m * 3 + 2];
                            const double g0 = grad[m * 3 + 0];
                            const double g1 = grad[m * 3 + 1];
                            const double g2 = grad[m * 3 + 2];
                            for (std::int64_t y = 0; y < h; ++y) {
                              for (std::int64_t x = 0; x < w; ++x) {
                                const std::int64_t i = y * w + x;
                                const double d = g0 * (gx[x] - fx) + g1 * (gy[y] - fy) + g2 * (a[m * map + i] - fa);
                                da[m * map + i] += static_cast<T>(p[i] * (d / temperature + g2));
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> flatten_and_concat(const std::vector<BasicTensor<T>>& levels) {
  if (levels.empty()) throw ShapeError("flatten_and_concat: no levels");
  const Shape& first = levels.front().shape();
  for (const auto& l : levels) {
    if (l.rank() != 2 || l.dim(1) != 3) {
      throw ShapeError("flatten_and_concat: level features must be [C,3], got " + shape_to_string(l.shape()));
    }
    if (l.shape() != first) {
      throw ShapeError("flatten_and_concat: channel count differs across levels (" + shape_to_string(first) +
                       " vs " + shape_to_string(l.shape()) + ")");
    }
  }
  std::vector<T> out;
  out.reserve(levels.size() * static_cast<std::size_t>(levels.front().numel()));
  for (const auto& l : levels) out.insert(out.end(), l.data().begin(), l.data().end());
  const auto n = static_cast<std::int64_t>(out.size());
  return make_result<T>(Shape{n}, std::move(out), levels, [levels](std::span<const T> grad) {
    std::size_t offset = 0;
    for (const auto& l : levels) {
      if (l.requires_grad()) {
        auto d = l.grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[offset + i];
      }
      offset += static_cast<std::size_t>(l.numel());
    }
  });
}

void dump_spatialize_csv(const std::filesystem::path& dir, const Tensor& activations, double temperature) {
  if (activations.rank() != 3) throw ShapeError("dump_spatialize_csv: expected [C,H,W]");
  std::filesystem::create_directories(dir);
  const auto c = activations.dim(0);
  const auto h = activations.dim(1);
  const auto w = activations.dim(2);
  NoGradGuard no_grad;
  auto features = spatialize(activations, temperature);

  std::ofstream heat(dir / "heatmaps.csv");
  std::ofstream feat(dir / "features.csv");
  if (!heat || !feat) throw IoError("cannot write spatialize dump into " + dir.string());
  heat.precision(9);
  feat.precision(9);
  heat << "channel,y,x,activation,probability\n";
  feat << "channel,f_x,f_y,f_a\n";
  auto a = activations.data();
  for (std::int64_t k = 0; k < c; ++k) {
    const float* src = a.data() + k * h * w;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < h * w; ++i) peak = std::max(peak, src[i] / temperature);
    double total = 0.0;
    for (std::int64_t i = 0; i < h * w; ++i) total += std::exp(src[i] / temperature - peak);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = src[y * w + x];
        heat << k << ',' << y << ',' << x << ',' << v << ',' << std::exp(v / temperature - peak) / total << '\n';
      }
    }
    feat << k << ',' << features.data()[k * 3] << ',' << features.data()[k * 3 + 1] << ','
         << features.data()[k * 3 + 2] << '\n';
  }
}

template BasicTensor<float> spatialize(const BasicTensor<float>&, double);
template BasicTensor<double> spatialize(const BasicTensor<double>&, double);
template BasicTensor<float> flatten_and_concat(const std::vector<BasicTensor<float>>&);
template BasicTensor<double> flatten_and_concat(const std::vector<BasicTensor<double>>&);

}  // namespace fvpy
