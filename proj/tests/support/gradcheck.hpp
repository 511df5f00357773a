#pragma once

// Central finite-difference gradient checking for scalar functions of
// covae::diff tensors.

#include "covae/diff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace covae::testing {

using diff::Tensor;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "param[k] entry i: analytic vs numeric"
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps the measure
// meaningful for entries whose true gradient is (close to) zero.
inline double rel_error(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// f builds a fresh graph from the current parameter values and returns a
// scalar. Analytic gradients come from one backward pass; numeric ones from
// central differences with step h on every parameter entry.
inline GradCheckResult grad_check(std::vector<Tensor>& params, const std::function<Tensor()>& f, double h = 1e-5,
                                  double floor = 1e-4) {
  for (auto& p : params) p.zero_grad();
  const Tensor loss = f();
  diff::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = std::vector<double>(params[k].data().begin(), params[k].data().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x0 = values[i];
      values[i] = x0 + h;
      params[k].assign(values);
      const double up = f().item();
      values[i] = x0 - h;
      params[k].assign(values);
      const double down = f().item();
      values[i] = x0;
      params[k].assign(values);
      const double numeric = (up - down) / (2.0 * h);
      const double e = rel_error(analytic[k][i], numeric, floor);
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = "param[" + std::to_string(k) + "] entry " + std::to_string(i) + ": analytic " +
                  std::to_string(analytic[k][i]) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return r;
}

inline std::vector<double> uniform_values(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor random_param(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
  return Tensor::parameter(r, c, uniform_values(rng, r * c, lo, hi));
}

inline Tensor random_const(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
  return Tensor::constant(r, c, uniform_values(rng, r * c, lo, hi));
}

// Scalar probe sum(W o y) with fixed random weights so every output entry of
// the op under test contributes to the checked gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return diff::reduce_sum(diff::mul(y, random_const(rng, y.rows(), y.cols(), -1.0, 1.0)));
}

}  // namespace covae::testing
