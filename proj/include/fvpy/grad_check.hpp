#pragma once

// Central finite-difference check of reverse-mode gradients.
//
// The function under test is a generic callable that maps a list of input
// tensors to a single-element tensor and can be instantiated for both float
// and double. The analytic gradient comes from the requested precision; the
// finite-difference oracle is always evaluated in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "fvpy/tensor.hpp"

namespace fvpy {

enum class Precision { F32, F64 };

struct GradCheckOptions {
  Precision precision = Precision::F32;
  double step = 1e-3;
  // Coordinates checked per input; 0 checks every coordinate, otherwise a
  // seeded random subset of this size.
  std::size_t coords_per_input = 0;
  std::uint64_t seed = 0;
  // Components far smaller than the largest checked component are judged
  // against this fraction of it instead of their own magnitude.
  double relative_floor = 1e-2;
  // When positive, each coordinate is also differenced with half the step.
  // If the two estimates disagree by more than this (relative, same floor)
  // the stencil straddles a kink such as a ReLU or max-pool switch, and the
  // coordinate is counted as non-smooth instead of being compared.
  double smoothness_tolerance = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool finite = true;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
};

struct GradPoint {
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;
};

namespace detail {

template <typename T>
std::vector<BasicTensor<T>> make_inputs(const GradPoint& point, bool requires_grad) {
  std::vector<BasicTensor<T>> out;
  for (std::size_t k = 0; k < point.shapes.size(); ++k) {
    out.push_back(BasicTensor<T>::from_data(point.shapes[k],
                                            std::vector<T>(point.values[k].begin(), point.values[k].end()),
                                            requires_grad));
  }
  return out;
}

template <typename F>
double eval_f64(F& f, const GradPoint& point) {
  NoGradGuard guard;
  return static_cast<double>(f(make_inputs<double>(point, false)).item());
}

template <typename T, typename F>
std::vector<std::vector<double>> analytic_grads(F& f, const GradPoint& point) {
  auto inputs = make_inputs<T>(point, true);
  auto out = f(inputs);
  out.backward();
  std::vector<std::vector<double>> grads;
  for (auto& in : inputs) {
    auto g = in.grad();
    if (g.empty()) {
      grads.emplace_back(static_cast<std::size_t>(in.numel()), 0.0);
    } else {
      grads.emplace_back(g.begin(), g.end());
    }
  }
  return grads;
}

}  // namespace detail

template <typename F>
GradCheckResult grad_check(F&& f, const GradPoint& point, const GradCheckOptions& options = {}) {
  auto analytic = options.precision == Precision::F32 ? detail::analytic_grads<float>(f, point)
                                                      : detail::analytic_grads<double>(f, point);

  std::mt19937_64 rng(options.seed);
  GradPoint probe = point;
  std::vector<double> a;
  std::vector<double> fd;
  std::vector<double> fd_half;
  const bool smooth_check = options.smoothness_tolerance > 0.0;
  auto central = [&](std::size_t k, std::size_t i, double h) {
    const double x0 = point.values[k][i];
    probe.values[k][i] = x0 + h;
    const double up = detail::eval_f64(f, probe);
    probe.values[k][i] = x0 - h;
    const double down = detail::eval_f64(f, probe);
    probe.values[k][i] = x0;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t k = 0; k < point.values.size(); ++k) {
    std::vector<std::size_t> coords(point.values[k].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.coords_per_input > 0 && options.coords_per_input < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_input);
    }
    for (std::size_t i : coords) {
      fd.push_back(central(k, i, options.step));
      if (smooth_check) fd_half.push_back(central(k, i, options.step / 2.0));
      a.push_back(analytic[k][i]);
    }
  }

  GradCheckResult result;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(fd[i])) result.finite = false;
    scale = std::max({scale, std::abs(a[i]), std::abs(fd[i])});
  }
  if (!result.finite) {
    result.checked = a.size();
    result.max_rel_error = std::numeric_limits<double>::infinity();
    return result;
  }
  const double floor = std::max(scale * options.relative_floor, 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(fd[i]), floor});
    if (smooth_check && std::abs(fd[i] - fd_half[i]) / denom > options.smoothness_tolerance) {
      ++result.nonsmooth;
      continue;
    }
    ++result.checked;
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a[i] - fd[i]) / denom);
  }
  return result;
}

}  // namespace fvpy
