#pragma once

#include "covae/diff/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace covae::diff {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(std::span<const Tensor> params, double lr) {
    AdamState s;
    s.learning_rate = lr;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.size(), 0.0);
      s.second_moment.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update using the gradients currently held by
// `params`. Throws before touching any parameter if a gradient is not finite.
inline void adam_step(AdamState& state, std::span<Tensor> params) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != state.first_moment[k].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " changed shape");
    }
    for (double g : params[k].grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in parameter " + std::to_string(k));
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = params[k].grad();
    auto w = params[k].mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

inline void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace covae::diff
