#pragma once

// Kernel Stein estimators of the score and of the diagonal of its Jacobian
// (the Hessian diagonal of log density), differentiable w.r.t. the samples.

#include "covae/diff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::stein {

using diff::Tensor;

enum class BandwidthRule { median, fixed };

// How the squared-score correction of the Hessian diagonal is reduced.
//   elementwise: -(G o G), an n x d matrix (default)
//   row_norm:    -diag(G G^T), the per-sample squared norm broadcast over d
enum class ScoreSquareForm { elementwise, row_norm };

struct SteinConfig {
  double ridge = 0.01;
  BandwidthRule bandwidth = BandwidthRule::median;
  double fixed_bandwidth = 1.0;
  std::size_t min_batch = 16;
  int max_ridge_retries = 3;
  ScoreSquareForm square_form = ScoreSquareForm::elementwise;

  void validate() const {
    if (!(ridge > 0.0)) throw std::invalid_argument("stein: ridge must be positive");
    if (bandwidth == BandwidthRule::fixed && !(fixed_bandwidth > 0.0)) {
      throw std::invalid_argument("stein: fixed bandwidth must be positive");
    }
  }
};

class DegenerateBatch : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Median of the pairwise Euclidean distances over i < j.
inline double median_bandwidth(const diff::RowMatrix& z) {
  const auto n = z.rows();
  if (n < 2) throw std::invalid_argument("median_bandwidth: need at least 2 samples");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dist.push_back((z.row(i) - z.row(j)).norm());
  const std::size_t m = dist.size();
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (m % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), mid));
  if (!(med > 0.0)) throw DegenerateBatch("degenerate batch: median pairwise distance is zero");
  return med;
}

inline double median_bandwidth(const Tensor& z) { return median_bandwidth(diff::RowMatrix(z.matrix())); }

inline double rbf(double sq_dist, double s) { return std::exp(-sq_dist / (2.0 * s * s)); }

// K_ab = exp(-|z_a - z_b|^2 / (2 s^2)) as a single graph node. With
// W = (dK + dK^T) o K the reverse pass is dZ = -(rowsum(W) o Z - W Z) / s^2.
inline Tensor rbf_kernel(const Tensor& z, double s) {
  using diff::RowMatrix;
  const auto zm = z.matrix();
  const auto n = zm.rows();
  const Eigen::VectorXd sq = zm.rowwise().squaredNorm();
  RowMatrix k = -2.0 * zm * zm.transpose();
  k.colwise() += sq;
  k.rowwise() += sq.transpose();
  const double g = -1.0 / (2.0 * s * s);
  k = (k.array().max(0.0) * g).exp().matrix();
  for (Eigen::Index i = 0; i < n; ++i) k(i, i) = 1.0;
  std::vector<double> out(k.data(), k.data() + k.size());
  return Tensor::make_result(static_cast<std::size_t>(n), static_cast<std::size_t>(n), std::move(out), "rbf_kernel",
                             {z}, [s](diff::detail::Node& self) {
                               auto& p = self.inputs[0];
                               const auto n = static_cast<Eigen::Index>(self.rows);
                               diff::ConstMatrixMap dk(self.grad.data(), n, n);
                               diff::ConstMatrixMap kv(self.value.data(), n, n);
                               diff::ConstMatrixMap zv(p->value.data(), p->rows, p->cols);
                               const RowMatrix w = ((dk + dk.transpose()).array() * kv.array()).matrix();
                               const Eigen::VectorXd rs = w.rowwise().sum();
                               diff::MatrixMap gz(diff::detail::grad_of(p).data(), p->rows, p->cols);
                               gz.noalias() -= (rs.asDiagonal() * zv - w * zv) / (s * s);
                             });
}

struct SteinTerms {
  Tensor kernel;       // n x n
  Tensor grad;         // n x d, G
  Tensor kernel_solve; // n x d, (K + eta I)^{-1} <nabla^2_diag, K>
  double bandwidth = 0.0;
  double ridge_used = 0.0;
};

namespace detail {

inline double resolve_bandwidth(const Tensor& z, const SteinConfig& cfg) {
  return cfg.bandwidth == BandwidthRule::fixed ? cfg.fixed_bandwidth : median_bandwidth(z);
}

inline void check_batch(const Tensor& z, const SteinConfig& cfg) {
  cfg.validate();
  if (z.rows() < std::max<std::size_t>(cfg.min_batch, 2)) {
    throw std::invalid_argument("stein: batch of " + std::to_string(z.rows()) +
                                " rows is below the minimum of " + std::to_string(cfg.min_batch));
  }
  if (z.cols() == 0) throw std::invalid_argument("stein: no columns");
}

// Factorizes K + eta I, escalating eta x10 on failure.
inline Tensor solve_with_retries(const Tensor& k, const Tensor& rhs, const SteinConfig& cfg, double& ridge) {
  ridge = cfg.ridge;
  for (int attempt = 0;; ++attempt) {
    try {
      const Tensor reg = diff::add_diagonal(k, ridge);
      return diff::cholesky_solve(reg, rhs);
    } catch (const NotPositiveDefinite&) {
      if (attempt >= cfg.max_ridge_retries) {
        throw NotPositiveDefinite("stein: kernel matrix not positive definite after " +
                                  std::to_string(cfg.max_ridge_retries) + " ridge escalations");
      }
      ridge *= 10.0;
    }
  }
}

}  // namespace detail

// Score estimate and kernel Hessian term sharing one factorization.
//
// With the RBF kernel, sum_b dK(z_a, z_b)/dz_b = K_a (z_a - z_b) / s^2 summed
// over b, giving the estimator G = -(K + eta I)^{-1} <nabla, K>.
inline SteinTerms stein_terms(const Tensor& z, const SteinConfig& cfg) {
  using namespace diff;
  detail::check_batch(z, cfg);
  const std::size_t d = z.cols();
  SteinTerms out;
  out.bandwidth = detail::resolve_bandwidth(z, cfg);
  const double s2 = out.bandwidth * out.bandwidth;
  out.kernel = rbf_kernel(z, out.bandwidth);
  const Tensor row_k = reduce_sum(out.kernel, 1);  // n x 1
  const Tensor kz = matmul(out.kernel, z);         // n x d
  const Tensor z2 = square(z);
  const Tensor nabla_k = scale(sub(mul(row_k, z), kz), 1.0 / s2);
  const Tensor nabla2_k = sub(scale(add(sub(mul(row_k, z2), scale(mul(z, kz), 2.0)), matmul(out.kernel, z2)),
                                    1.0 / (s2 * s2)),
                              scale(row_k, 1.0 / s2));
  const Tensor solved =
      detail::solve_with_retries(out.kernel, concat({nabla_k, nabla2_k}, 1), cfg, out.ridge_used);
  out.grad = neg(slice_cols(solved, 0, d));
  out.kernel_solve = slice_cols(solved, d, 2 * d);
  return out;
}

inline Tensor stein_grad(const Tensor& z, const SteinConfig& cfg = {}) { return stein_terms(z, cfg).grad; }

struct HessianDiagEstimate {
  Tensor H;      // n x d per-sample Hessian diagonal
  Tensor H_var;  // 1 x d variance over samples
};

inline HessianDiagEstimate stein_hess_diag(const Tensor& z, const SteinConfig& cfg = {}) {
  using namespace diff;
  const SteinTerms t = stein_terms(z, cfg);
  Tensor sq;
  if (cfg.square_form == ScoreSquareForm::elementwise) {
    sq = square(t.grad);
  } else {
    sq = mul(reduce_sum(square(t.grad), 1), Tensor::full(1, z.cols(), 1.0));
  }
  HessianDiagEstimate est;
  est.H = sub(t.kernel_solve, sq);
  est.H_var = variance(est.H, 0, true);
  return est;
}

// Hessian-diagonal variances of raw data (no graph).
inline std::vector<double> hessian_variance(const diff::RowMatrix& z, const SteinConfig& cfg = {}) {
  const auto est = stein_hess_diag(Tensor::from_matrix(z), cfg);
  const auto v = est.H_var.data();
  return {v.begin(), v.end()};
}

}  // namespace covae::stein
