#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fvpy/error.hpp"
#include "fvpy/tensor.hpp"

namespace fvpy {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient. A parameter without a gradient is treated as having gradient 0.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw ValueError("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      state.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ValueError("adam_step: optimizer state tracks a different parameter list");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    auto g = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != w.size()) throw ValueError("adam_step: moment buffer shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps));
    }
  }
}

}  // namespace fvpy
