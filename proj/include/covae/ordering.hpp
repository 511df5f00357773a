#pragma once

// Causal-ordering loss on latent batches, leaf-first order discovery and
// order-constrained adjacency estimation.

#include "covae/diff/tensor.hpp"
#include "covae/scm.hpp"
#include "covae/stein.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::ordering {

using diff::RowMatrix;
using diff::Tensor;

// bce: binary cross-entropy of the suffix softmax against one-hot(0), summed
//      over the suffix entries.
// ce:  softmax cross-entropy, -log p[0].
enum class LossForm { bce, ce };

struct OrderLossConfig {
  stein::SteinConfig stein;
  LossForm form = LossForm::bce;
  double alpha = 1.0;
};

// Loss contribution of one vector of suffix variances (1 x m, m >= 2).
inline Tensor suffix_loss(const Tensor& variances, LossForm form) {
  using namespace diff;
  const std::size_t m = variances.cols();
  const Tensor logits = neg(log(variances));
  const Tensor logp = log_softmax(logits, 1);
  Tensor loss = neg(slice_cols(logp, 0, 1));
  if (form == LossForm::ce) return loss;
  // log(1 - p_k) = logsumexp_{j != k} l_j - logsumexp_j l_j, for k >= 1.
  std::vector<double> mask((m - 1) * m, 0.0);
  for (std::size_t k = 1; k < m; ++k) mask[(k - 1) * m + k] = -1e300;
  const Tensor rows = add(matmul(Tensor::full(m - 1, 1, 1.0), logits), Tensor::constant(m - 1, m, std::move(mask)));
  const Tensor log_rest = logsumexp(rows, 1);                       // (m-1) x 1
  const Tensor log_one_minus = sub(transpose(log_rest), logsumexp(logits, 1));  // 1 x (m-1)
  return sub(loss, reduce_sum(log_one_minus));
}

// Sum over suffixes z[:, i:], i = 0..d-2, of the suffix loss on the
// Hessian-diagonal variances. Exactly zero for d = 1.
inline Tensor order_loss(const Tensor& z, const OrderLossConfig& cfg = {}) {
  const std::size_t d = z.cols();
  if (d <= 1) return Tensor::scalar(0.0);
  Tensor total;
  for (std::size_t i = 0; i + 1 < d; ++i) {
    const Tensor suffix = diff::slice_cols(z, i, d);
    const auto est = stein::stein_hess_diag(suffix, cfg.stein);
    const Tensor term = suffix_loss(est.H_var, cfg.form);
    total = total.defined() ? diff::add(total, term) : term;
  }
  return total;
}

struct DiscoveryConfig {
  stein::SteinConfig stein;
  // Rows beyond this cap are ignored (data rows are exchangeable).
  std::size_t max_rows = 1000;
  // Per-column z-scoring before estimation.
  bool standardize = false;
};

inline RowMatrix take_rows(const RowMatrix& z, std::size_t max_rows) {
  if (max_rows == 0 || static_cast<std::size_t>(z.rows()) <= max_rows) return z;
  return z.topRows(static_cast<Eigen::Index>(max_rows));
}

inline RowMatrix standardize_columns(const RowMatrix& z) {
  RowMatrix out = z;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double mean = z.col(c).mean();
    const double var = (z.col(c).array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(z.rows() - 1));
    const double sd = std::sqrt(var);
    out.col(c) = (z.col(c).array() - mean) / (sd > 0.0 ? sd : 1.0);
  }
  return out;
}

// Repeatedly removes the column of smallest Hessian-diagonal variance.
// Returns column indices, leaf first; ties go to the lowest index.
inline std::vector<std::size_t> discover_order(const RowMatrix& data, const DiscoveryConfig& cfg = {}) {
  RowMatrix z = take_rows(data, cfg.max_rows);
  if (cfg.standardize) z = standardize_columns(z);
  std::vector<std::size_t> remaining(static_cast<std::size_t>(z.cols()));
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::size_t> order;
  while (remaining.size() > 1) {
    RowMatrix sub(z.rows(), static_cast<Eigen::Index>(remaining.size()));
    for (std::size_t k = 0; k < remaining.size(); ++k)
      sub.col(static_cast<Eigen::Index>(k)) = z.col(static_cast<Eigen::Index>(remaining[k]));
    const auto v = stein::hessian_variance(sub, cfg.stein);
    const auto leaf = static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
    order.push_back(remaining[leaf]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(leaf));
  }
  if (!remaining.empty()) order.push_back(remaining.front());
  return order;
}

struct AdjacencyConfig {
  double prune_threshold = 0.05;
  double train_fraction = 0.8;
  // Kernel ridge penalty per training sample: (K + ridge * n_train * I).
  double ridge = 1e-3;
  std::size_t max_rows = 1000;
};

struct DiscoveredGraph {
  std::vector<std::size_t> order;  // leaf first
  scm::Adjacency adjacency;        // d x d, [i*d+j] = edge i -> j
  double prune_threshold = 0.0;
  std::size_t d = 0;

  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * d + j] != 0; }
};

namespace detail {

// Validation MSE of kernel ridge regression of `target` on `inputs`. An empty
// input set predicts the training mean.
inline double krr_validation_mse(const RowMatrix& inputs, const Eigen::VectorXd& target, Eigen::Index n_train,
                                 double ridge) {
  const Eigen::Index n = target.size();
  const Eigen::Index n_val = n - n_train;
  const double mean = target.head(n_train).mean();
  if (inputs.cols() == 0) return (target.tail(n_val).array() - mean).square().mean();
  const RowMatrix tr = inputs.topRows(n_train);
  const RowMatrix va = inputs.bottomRows(n_val);
  double s = stein::median_bandwidth(tr);
  auto sqdist = [](const RowMatrix& a, const RowMatrix& b) {
    const Eigen::VectorXd an = a.rowwise().squaredNorm();
    const Eigen::VectorXd bn = b.rowwise().squaredNorm();
    RowMatrix d2 = (-2.0 * a * b.transpose()).eval();
    d2.colwise() += an;
    d2.rowwise() += bn.transpose();
    return d2;
  };
  const double g = -1.0 / (2.0 * s * s);
  RowMatrix k = (sqdist(tr, tr).array() * g).exp().matrix();
  k.diagonal().array() += ridge * static_cast<double>(n_train);
  const Eigen::VectorXd y = target.head(n_train).array() - mean;
  const Eigen::VectorXd coef = k.llt().solve(y);
  const RowMatrix kv = (sqdist(va, tr).array() * g).exp().matrix();
  const Eigen::VectorXd pred = (kv * coef).array() + mean;
  return (pred - target.tail(n_val)).array().square().mean();
}

}  // namespace detail

// For each node, regress it on every node later in the leaf-first order and
// keep parent p iff dropping p raises validation MSE by more than the
// relative threshold. Columns are z-scored first.
inline DiscoveredGraph estimate_adjacency(const RowMatrix& data, const std::vector<std::size_t>& order,
                                          const AdjacencyConfig& cfg = {}) {
  const std::size_t d = static_cast<std::size_t>(data.cols());
  {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i || sorted.size() != d) throw std::invalid_argument("estimate_adjacency: order is not a permutation");
  }
  DiscoveredGraph g;
  g.order = order;
  g.d = d;
  g.prune_threshold = cfg.prune_threshold;
  g.adjacency.assign(d * d, 0);
  if (d <= 1) return g;
  const RowMatrix z = standardize_columns(take_rows(data, cfg.max_rows));
  const auto n = z.rows();
  const auto n_train = static_cast<Eigen::Index>(std::floor(cfg.train_fraction * static_cast<double>(n)));
  if (n_train < 2 || n - n_train < 1) throw std::invalid_argument("estimate_adjacency: not enough rows");
  auto gather = [&](const std::vector<std::size_t>& cols) {
    RowMatrix m(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = z.col(static_cast<Eigen::Index>(cols[k]));
    return m;
  };
  for (std::size_t pos = 0; pos + 1 < d; ++pos) {
    const std::size_t v = order[pos];
    const std::vector<std::size_t> cand(order.begin() + static_cast<std::ptrdiff_t>(pos) + 1, order.end());
    const Eigen::VectorXd y = z.col(static_cast<Eigen::Index>(v));
    const double full = detail::krr_validation_mse(gather(cand), y, n_train, cfg.ridge);
    for (std::size_t k = 0; k < cand.size(); ++k) {
      std::vector<std::size_t> reduced = cand;
      reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(k));
      const double without = detail::krr_validation_mse(gather(reduced), y, n_train, cfg.ridge);
      if ((without - full) / std::max(full, 1e-300) > cfg.prune_threshold) g.adjacency[cand[k] * d + v] = 1;
    }
  }
  return g;
}

}  // namespace covae::ordering
