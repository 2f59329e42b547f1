#include "fvpy/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "fvpy/kernels.hpp"

namespace fvpy {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

// Views a [C,H,W] or [B,C,H,W] tensor as [B,C,H,W].
struct Image4 {
  std::int64_t b, c, h, w;
  bool batched;
};

template <typename T>
Image4 as_image4(const BasicTensor<T>& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  shape_fail(op, "expected [C,H,W] or [B,C,H,W] input, got " + shape_to_string(t.shape()));
}

Shape image_shape(const Image4& v, std::int64_t c, std::int64_t h, std::int64_t w) {
  return v.batched ? Shape{v.b, c, h, w} : Shape{c, h, w};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      int stride, int padding) {
  const Image4 v = as_image4(input, "conv2d");
  if (kernel.rank() != 4) shape_fail("conv2d", "kernel must be [C_out,C_in,kH,kW], got " + shape_to_string(kernel.shape()));
  if (kernel.dim(1) != v.c) {
    shape_fail("conv2d", "kernel expects " + std::to_string(kernel.dim(1)) + " input channels but input " +
                             shape_to_string(input.shape()) + " has " + std::to_string(v.c));
  }
  if (stride < 1) shape_fail("conv2d", "stride must be positive");
  if (padding < 0) shape_fail("conv2d", "padding must be non-negative");
  kernels::ConvGeometry g{v.b, v.c, v.h, v.w, kernel.dim(0), kernel.dim(2), kernel.dim(3), stride, padding};
  if (g.kernel_h > v.h + 2 * padding || g.kernel_w > v.w + 2 * padding) {
    shape_fail("conv2d", "kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                             shape_to_string(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    shape_fail("conv2d", "bias must be [" + std::to_string(g.out_channels) + "], got " + shape_to_string(bias.shape()));
  }

  const bool record = grad_enabled() &&
                      (input.requires_grad() || kernel.requires_grad() || (bias.defined() && bias.requires_grad()));
  auto columns = std::make_shared<std::vector<T>>(record ? static_cast<std::size_t>(g.batch * g.patch_size() * g.out_pixels()) : 0);
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_pixels()));
  kernels::conv2d_forward<T>(g, input.data(), kernel.data(), bias.defined() ? bias.data() : std::span<const T>{}, out,
                             *columns);

  std::vector<BasicTensor<T>> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(image_shape(v, g.out_channels, g.out_height(), g.out_width()), std::move(out), inputs,
                        [g, input, kernel, bias, columns](std::span<const T> grad) {
                          kernels::conv2d_backward<T>(
                              g, grad, kernel.data(), *columns,
                              input.requires_grad() ? input.grad_buffer() : std::span<T>{},
                              kernel.requires_grad() ? kernel.grad_buffer() : std::span<T>{},
                              bias.defined() && bias.requires_grad() ? bias.grad_buffer() : std::span<T>{});
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (weight.rank() != 2) shape_fail("linear", "weight must be [D_out,D_in], got " + shape_to_string(weight.shape()));
  const std::int64_t dout = weight.dim(0);
  const std::int64_t din = weight.dim(1);
  if (input.rank() < 1 || input.rank() > 2 || input.dim(-1) != din) {
    shape_fail("linear", "input " + shape_to_string(input.shape()) + " does not match weight " +
                             shape_to_string(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != dout) {
    shape_fail("linear", "bias must be [" + std::to_string(dout) + "], got " + shape_to_string(bias.shape()));
  }
  const std::int64_t rows = input.rank() == 2 ? input.dim(0) : 1;
  using CMap = Eigen::Map<const RowMatrix<T>>;
  using Map = Eigen::Map<RowMatrix<T>>;

  std::vector<T> out(static_cast<std::size_t>(rows * dout));
  {
    Map y(out.data(), rows, dout);
    y.noalias() = CMap(input.data().data(), rows, din) * CMap(weight.data().data(), dout, din).transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), dout);
  }
  Shape shape = input.rank() == 2 ? Shape{rows, dout} : Shape{dout};
  return make_result<T>(std::move(shape), std::move(out), {input, weight, bias},
                        [input, weight, bias, rows, din, dout](std::span<const T> grad) {
                          CMap dy(grad.data(), rows, dout);
                          if (input.requires_grad()) {
                            Map(input.grad_buffer().data(), rows, din).noalias() +=
                                dy * CMap(weight.data().data(), dout, din);
                          }
                          if (weight.requires_grad()) {
                            Map(weight.grad_buffer().data(), dout, din).noalias() +=
                                dy.transpose() * CMap(input.data().data(), rows, din);
                          }
                          if (bias.requires_grad()) {
                            auto db = bias.grad_buffer();
                            for (std::int64_t j = 0; j < dout; ++j) {
                              double acc = 0.0;
                              for (std::int64_t i = 0; i < rows; ++i) acc += dy(i, j);
                              db[j] += static_cast<T>(acc);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  auto src = input.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] > T(0) ? src[i] : T(0);
  return make_result<T>(input.shape(), std::move(out), {input}, [input](std::span<const T> grad) {
    auto x = input.data();
    auto dx = input.grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) dx[i] += grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> softmax_flat(const BasicTensor<T>& input) {
  if (input.rank() < 2) shape_fail("softmax_flat", "expected [...,H,W], got " + shape_to_string(input.shape()));
  const std::int64_t map = input.dim(-2) * input.dim(-1);
  const std::int64_t maps = map == 0 ? 0 : input.numel() / map;
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::int64_t m = 0; m < maps; ++m) {
    const T* src = x.data() + m * map;
    T* dst = out.data() + m * map;
    bool finite = true;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < map; ++i) {
      finite = finite && std::isfinite(src[i]);
      peak = std::max(peak, static_cast<double>(src[i]));
    }
    if (!finite) {
      std::fill(dst, dst + map, std::numeric_limits<T>::quiet_NaN());
      continue;
    }
    double total = 0.0;
    std::vector<double> e(static_cast<std::size_t>(map));
    for (std::int64_t i = 0; i < map; ++i) total += (e[i] = std::exp(static_cast<double>(src[i]) - peak));
    for (std::int64_t i = 0; i < map; ++i) dst[i] = static_cast<T>(e[i] / total);
  }
  auto result = make_result<T>(input.shape(), out, {input}, nullptr);
  if (result.requires_grad()) {
    // Backward needs the output probabilities; capture them by value.
    auto probs = std::make_shared<std::vector<T>>(std::move(out));
    result.node()->backward = [input, probs, map, maps](std::span<const T> grad) {
      auto dx = input.grad_buffer();
      for (std::int64_t m = 0; m < maps; ++m) {
        const T* p = probs->data() + m * map;
        const T* g = grad.data() + m * map;
        double dot = 0.0;
        for (std::int64_t i = 0; i < map; ++i) dot += static_cast<double>(p[i]) * g[i];
        for (std::int64_t i = 0; i < map; ++i) dx[m * map + i] += static_cast<T>(p[i] * (g[i] - dot));
      }
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    shape_fail("l1_loss", "pred " + shape_to_string(pred.shape()) + " vs target " + shape_to_string(target.shape()));
  }
  if (pred.rank() != 1 && pred.rank() != 2) shape_fail("l1_loss", "expected [D] or [B,D]");
  const double rows = pred.rank() == 2 ? static_cast<double>(pred.dim(0)) : 1.0;
  auto p = pred.data();
  auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - t[i]);
  return make_result<T>(Shape{1}, {static_cast<T>(acc / rows)}, {pred, target},
                        [pred, target, rows](std::span<const T> grad) {
                          auto p = pred.data();
                          auto t = target.data();
                          const T scale = static_cast<T>(grad[0] / rows);
                          auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                          if (pred.requires_grad()) {
                            auto dp = pred.grad_buffer();
                            for (std::size_t i = 0; i < p.size(); ++i) dp[i] += scale * sign(p[i] - t[i]);
                          }
                          if (target.requires_grad()) {
                            auto dt = target.grad_buffer();
                            for (std::size_t i = 0; i < p.size(); ++i) dt[i] -= scale * sign(p[i] - t[i]);
                          }
                        });
}

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, int kernel, int stride, int padding) {
  const Image4 v = as_image4(input, "maxpool2d");
  if (kernel < 1 || stride < 1 || padding < 0 || kernel > v.h + 2 * padding || kernel > v.w + 2 * padding) {
    shape_fail("maxpool2d", "invalid window for input " + shape_to_string(input.shape()));
  }
  const std::int64_t oh = (v.h + 2 * padding - kernel) / stride + 1;
  const std::int64_t ow = (v.w + 2 * padding - kernel) / stride + 1;
  auto x = input.data();
  std::vector<T> out(static_cast<std::size_t>(v.b * v.c * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const bool tiled = kernel == 2 && stride == 2 && padding == 0;
#pragma omp parallel for schedule(static)
  for (std::int64_t plane = 0; plane < v.b * v.c; ++plane) {
    const T* src = x.data() + plane * v.h * v.w;
    if (tiled) {
      // Non-overlapping 2x2 windows, all in bounds; same tie order as below.
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const T* r0 = src + 2 * oy * v.w;
        const T* r1 = r0 + v.w;
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const std::int64_t x0 = 2 * ox;
          std::int64_t at = x0;
          T best = r0[x0];
          if (r0[x0 + 1] > best) best = r0[at = x0 + 1];
          if (r1[x0] > best) {
            best = r1[x0];
            at = v.w + x0;
          }
          if (r1[x0 + 1] > best) {
            best = r1[x0 + 1];
            at = v.w + x0 + 1;
          }
          const std::int64_t o = (plane * oh + oy) * ow + ox;
          out[o] = best;
          (*argmax)[o] = plane * v.h * v.w + 2 * oy * v.w + at;
        }
      }
      continue;
    }
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_at = -1;
        for (int ki = 0; ki < kernel; ++ki) {
          const std::int64_t iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= v.h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const std::int64_t ix = ox * stride - padding + kj;
            if (ix < 0 || ix >= v.w) continue;
            const T val = src[iy * v.w + ix];
            if (best_at < 0 || val > best) {
              best = val;
              best_at = iy * v.w + ix;
            }
          }
        }
        const std::int64_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = plane * v.h * v.w + best_at;
      }
    }
  }
  return make_result<T>(image_shape(v, v.c, oh, ow), std::move(out), {input}, [input, argmax](std::span<const T> grad) {
    auto dx = input.grad_buffer();
    for (std::size_t o = 0; o < grad.size(); ++o) dx[(*argmax)[o]] += grad[o];
  });
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps) {
  const Image4 v = as_image4(input, "batch_norm");
  if (gamma.rank() != 1 || gamma.dim(0) != v.c || beta.shape() != gamma.shape()) {
    shape_fail("batch_norm", "gamma/beta must be [" + std::to_string(v.c) + "]");
  }
  const std::int64_t hw = v.h * v.w;
  const double count = static_cast<double>(v.b * hw);
  auto x = input.data();
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(v.c));
  std::vector<T> out(x.size());
  for (std::int64_t c = 0; c < v.c; ++c) {
    double mean = 0.0;
    for (std::int64_t b = 0; b < v.b; ++b)
      for (std::int64_t i = 0; i < hw; ++i) mean += x[(b * v.c + c) * hw + i];
    mean /= count;
    double var = 0.0;
    for (std::int64_t b = 0; b < v.b; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = x[(b * v.c + c) * hw + i] - mean;
        var += d * d;
      }
    var /= count;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    for (std::int64_t b = 0; b < v.b; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::int64_t k = (b * v.c + c) * hw + i;
        (*normalized)[k] = (x[k] - mean) * is;
        out[k] = static_cast<T>(gamma.data()[c] * (*normalized)[k] + beta.data()[c]);
      }
  }
  return make_result<T>(input.shape(), std::move(out), {input, gamma, beta},
                        [input, gamma, beta, normalized, inv_std, v, hw, count](std::span<const T> grad) {
                          for (std::int64_t c = 0; c < v.c; ++c) {
                            double sum_dy = 0.0;
                            double sum_dy_xhat = 0.0;
                            for (std::int64_t b = 0; b < v.b; ++b)
                              for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t k = (b * v.c + c) * hw + i;
                                sum_dy += grad[k];
                                sum_dy_xhat += grad[k] * (*normalized)[k];
                              }
                            if (gamma.requires_grad()) gamma.grad_buffer()[c] += static_cast<T>(sum_dy_xhat);
                            if (beta.requires_grad()) beta.grad_buffer()[c] += static_cast<T>(sum_dy);
                            if (input.requires_grad()) {
                              auto dx = input.grad_buffer();
                              const double scale = gamma.data()[c] * (*inv_std)[c];
                              for (std::int64_t b = 0; b < v.b; ++b)
                                for (std::int64_t i = 0; i < hw; ++i) {
                                  const std::int64_t k = (b * v.c + c) * hw + i;
                                  dx[k] += static_cast<T>(
                                      scale * (grad[k] - sum_dy / count - (*normalized)[k] * sum_dy_xhat / count));
                                }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_fail("add", shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> grad) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto d = t->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    shape_fail("reshape", "cannot view " + shape_to_string(input.shape()) + " as " + shape_to_string(shape));
  }
  return make_result<T>(std::move(shape), input.to_vector(), {input}, [input](std::span<const T> grad) {
    auto d = input.grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[i];
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  std::vector<T> out;
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  const auto n = static_cast<std::int64_t>(out.size());
  return make_result<T>(Shape{n}, std::move(out), parts, [parts](std::span<const T> grad) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        auto d = p.grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[offset + i];
      }
      offset += static_cast<std::size_t>(p.numel());
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input) {
  double acc = 0.0;
  for (T v : input.data()) acc += v;
  return make_result<T>(Shape{1}, {static_cast<T>(acc)}, {input}, [input](std::span<const T> grad) {
    auto d = input.grad_buffer();
    for (auto& v : d) v += grad[0];
  });
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& input, const std::vector<T>& weights) {
  if (static_cast<std::int64_t>(weights.size()) != input.numel()) {
    shape_fail("weighted_sum", "weights length " + std::to_string(weights.size()) + " vs input " +
                                   shape_to_string(input.shape()));
  }
  double acc = 0.0;
  auto x = input.data();
  for (std::size_t i = 0; i < weights.size(); ++i) acc += static_cast<double>(x[i]) * weights[i];
  return make_result<T>(Shape{1}, {static_cast<T>(acc)}, {input}, [input, weights](std::span<const T> grad) {
    auto d = input.grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[0] * weights[i];
  });
}

template <typename T>
BasicTensor<T> row_affine(const BasicTensor<T>& input, const std::vector<T>& matrices, const std::vector<T>& offsets) {
  if (input.rank() != 2) shape_fail("row_affine", "expected [B,D], got " + shape_to_string(input.shape()));
  const std::int64_t rows = input.dim(0);
  const std::int64_t d = input.dim(1);
  if (static_cast<std::int64_t>(matrices.size()) != rows * d * d || static_cast<std::int64_t>(offsets.size()) != rows * d) {
    shape_fail("row_affine", "matrices/offsets do not match input " + shape_to_string(input.shape()));
  }
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::int64_t b = 0; b < rows; ++b) {
    const T* m = matrices.data() + b * d * d;
    for (std::int64_t i = 0; i < d; ++i) {
      double acc = offsets[b * d + i];
      for (std::int64_t j = 0; j < d; ++j) acc += static_cast<double>(m[i * d + j]) * x[b * d + j];
      out[b * d + i] = static_cast<T>(acc);
    }
  }
  return make_result<T>(input.shape(), std::move(out), {input}, [input, matrices, rows, d](std::span<const T> grad) {
    auto dx = input.grad_buffer();
    for (std::int64_t b = 0; b < rows; ++b) {
      const T* m = matrices.data() + b * d * d;
      for (std::int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < d; ++i) acc += static_cast<double>(m[i * d + j]) * grad[b * d + i];
        dx[b * d + j] += static_cast<T>(acc);
      }
    }
  });
}

#define FVPY_INSTANTIATE_OPS(T)                                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int); \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> softmax_flat(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&, int, int, int);                                     \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, double); \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                               \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&);                                          \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> weighted_sum(const BasicTensor<T>&, const std::vector<T>&);                         \
  template BasicTensor<T> row_affine(const BasicTensor<T>&, const std::vector<T>&, const std::vector<T>&);

FVPY_INSTANTIATE_OPS(float)
FVPY_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace fvpy
