#pragma once

// Identifiability metrics: MCC-G / MCC-SG / MCC-R, COD, MIC, RRO and a
// block-diagonal linear-map probe.

#include "covae/diff/tensor.hpp"
#include "covae/rng.hpp"
#include "covae/scm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::metrics {

using diff::RowMatrix;

// Maximum-weight perfect matching of rows to columns of a square matrix
// (Hungarian algorithm with potentials, O(n^3)). Returns col_for_row.
inline std::vector<std::size_t> max_weight_assignment(const RowMatrix& w) {
  const auto n = static_cast<std::size_t>(w.rows());
  if (w.cols() != w.rows()) throw std::invalid_argument("assignment: matrix must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // Minimize cost = -w; 1-based arrays as in the classical formulation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -w(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_for_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_for_row[p[j] - 1] = j - 1;
  return col_for_row;
}

// |Pearson| between every column of a and every column of b. Constant
// columns correlate as 0.
inline RowMatrix abs_correlation(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("correlation: row counts differ");
  if (a.rows() < 3) throw std::invalid_argument("correlation: need at least 3 rows");
  auto centred = [](const RowMatrix& m) {
    RowMatrix c = m.rowwise() - m.colwise().mean();
    Eigen::VectorXd norms = c.colwise().norm();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (norms(j) > 0.0 && norms(j) > 1e-12 * std::sqrt(static_cast<double>(m.rows())) * m.col(j).cwiseAbs().maxCoeff()) {
        c.col(j) /= norms(j);
      } else {
        c.col(j).setZero();
      }
    }
    return c;
  };
  RowMatrix out = (centred(a).transpose() * centred(b)).cwiseAbs();
  return out.cwiseMin(1.0);
}

inline double matched_mean(const RowMatrix& corr) {
  const auto match = max_weight_assignment(corr);
  double s = 0.0;
  for (std::size_t r = 0; r < match.size(); ++r) s += corr(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(match[r]));
  return match.empty() ? 0.0 : s / static_cast<double>(match.size());
}

inline double mcc_g(const RowMatrix& z_hat, const RowMatrix& z) {
  if (z_hat.cols() != z.cols()) {
    throw std::invalid_argument("mcc_g: column counts differ (" + std::to_string(z_hat.cols()) + " vs " +
                                std::to_string(z.cols()) + ")");
  }
  return matched_mean(abs_correlation(z_hat, z));
}

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

// Calls f(subset) for every k-subset of {0..n-1} in lexicographic order.
template <class F>
void for_each_subset(std::size_t n, std::size_t k, F f) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  if (k > n) return;
  while (true) {
    f(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

inline std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  std::vector<std::size_t> s(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(s.begin(), s.end());
  return s;
}

// Subsets of size k out of n: all of them when C(n, k) <= cap, otherwise cap
// seeded uniform draws.
template <class F>
bool visit_subsets(std::size_t n, std::size_t k, std::size_t cap, std::uint64_t seed, const char* stream, F f) {
  if (binomial(n, k) <= static_cast<double>(cap)) {
    for_each_subset(n, k, f);
    return true;
  }
  Rng rng = make_stream(seed, stream);
  for (std::size_t t = 0; t < cap; ++t) f(random_subset(n, k, rng));
  return false;
}

struct SubsetResult {
  double value = 0.0;
  std::vector<std::size_t> best_subset;
  bool exhaustive = true;
  std::size_t evaluated = 0;
};

inline SubsetResult mcc_sg_detail(const RowMatrix& z_hat, const RowMatrix& z, std::size_t cap = 2000,
                                  std::uint64_t seed = 0) {
  const auto dh = static_cast<std::size_t>(z_hat.cols());
  const auto d = static_cast<std::size_t>(z.cols());
  if (dh < d) throw std::invalid_argument("mcc_sg: estimate has fewer columns than ground truth");
  const RowMatrix corr = abs_correlation(z_hat, z);  // dh x d
  SubsetResult r;
  r.value = -1.0;
  r.exhaustive = visit_subsets(dh, d, cap, seed, "mcc-sg", [&](const std::vector<std::size_t>& s) {
    RowMatrix sub(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) sub.row(static_cast<Eigen::Index>(i)) = corr.row(static_cast<Eigen::Index>(s[i]));
    const double v = matched_mean(sub);
    ++r.evaluated;
    if (v > r.value) {
      r.value = v;
      r.best_subset = s;
    }
  });
  return r;
}

inline double mcc_sg(const RowMatrix& z_hat, const RowMatrix& z, std::size_t cap = 2000, std::uint64_t seed = 0) {
  return mcc_sg_detail(z_hat, z, cap, seed).value;
}

// Mean MCC-G of runs 1..K-1 against run 0.
inline double mcc_r(const std::vector<RowMatrix>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("mcc_r: need at least two runs");
  double s = 0.0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    if (runs[k].rows() != runs[0].rows() || runs[k].cols() != runs[0].cols()) {
      throw std::invalid_argument("mcc_r: run " + std::to_string(k) + " has a different shape");
    }
    s += mcc_g(runs[k], runs[0]);
  }
  return s / static_cast<double>(runs.size() - 1);
}

// Number of edges i -> j with j > i (violations of the leaf-first order).
inline std::size_t cod(const scm::Adjacency& a, std::size_t d) {
  if (a.size() != d * d) throw std::invalid_argument("cod: adjacency size mismatch");
  std::size_t c = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (a[i * d + i]) throw std::invalid_argument("cod: nonzero diagonal entry at node " + std::to_string(i));
    for (std::size_t j = i + 1; j < d; ++j) c += a[i * d + j] ? 1 : 0;
  }
  return c;
}

inline constexpr double kRankTolerance = 1e-8;

// Number of singular values above kRankTolerance times the largest.
inline std::size_t numerical_rank(const RowMatrix& m) {
  if (m.size() == 0) return 0;
  const Eigen::VectorXd sv = Eigen::JacobiSVD<RowMatrix>(m).singularValues();
  if (!(sv(0) > 0.0)) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv(i) > kRankTolerance * sv(0) ? 1 : 0;
  return r;
}

struct MicResult {
  double value = 1.0;
  std::vector<double> per_layer;
  std::vector<bool> exhaustive;
};

// Weights are oriented output x input (rows >= columns). Each layer scores
// the mean rank ratio over square row-subsets of size `columns`; MIC is the
// minimum layer score.
inline MicResult mic_detail(const std::vector<RowMatrix>& weights, std::size_t cap = 200, std::uint64_t seed = 0) {
  MicResult r;
  if (weights.empty()) return r;
  r.value = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& w = weights[l];
    const auto rows = static_cast<std::size_t>(w.rows());
    const auto cols = static_cast<std::size_t>(w.cols());
    if (rows < cols) throw std::invalid_argument("mic: layer " + std::to_string(l) + " has fewer rows than columns");
    double sum = 0.0;
    std::size_t count = 0;
    const bool exhaustive =
        visit_subsets(rows, cols, cap, seed + l, "mic", [&](const std::vector<std::size_t>& s) {
          RowMatrix sub(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(cols));
          for (std::size_t i = 0; i < cols; ++i) sub.row(static_cast<Eigen::Index>(i)) = w.row(static_cast<Eigen::Index>(s[i]));
          sum += static_cast<double>(numerical_rank(sub)) / static_cast<double>(cols);
          ++count;
        });
    const double score = count ? sum / static_cast<double>(count) : 1.0;
    r.per_layer.push_back(score);
    r.exhaustive.push_back(exhaustive);
    r.value = std::min(r.value, score);
  }
  return r;
}

inline double mic(const std::vector<RowMatrix>& weights, std::size_t cap = 200, std::uint64_t seed = 0) {
  return mic_detail(weights, cap, seed).value;
}

inline double rro(const std::vector<RowMatrix>& weights) {
  if (weights.empty()) return 1.0;
  double s = 0.0;
  for (const auto& w : weights) {
    const auto m = std::min(w.rows(), w.cols());
    s += m ? static_cast<double>(numerical_rank(w)) / static_cast<double>(m) : 1.0;
  }
  return s / static_cast<double>(weights.size());
}

struct LinearMapFit {
  RowMatrix M;                // d x d, z_hat ~ z M + c
  Eigen::RowVectorXd intercept;
  double block_score = 0.0;   // |M| mass on the permitted blocks / total mass
  bool regularized = false;
  std::vector<std::size_t> block_of;  // block id per column
};

// Blocks from the leaf-first levels of a graph over stored columns.
inline std::vector<std::size_t> level_blocks(const scm::Adjacency& adj, std::size_t d) {
  std::vector<std::size_t> block(d, 0);
  const auto levels = scm::leaf_levels(adj, d);
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t v : levels[l]) block[v] = l;
  return block;
}

inline LinearMapFit linear_map_fit(const RowMatrix& z_hat, const RowMatrix& z, const std::vector<std::size_t>& block_of) {
  if (z_hat.rows() != z.rows() || z_hat.cols() != z.cols()) throw std::invalid_argument("linear_map_fit: shapes differ");
  const auto d = z.cols();
  if (block_of.size() != static_cast<std::size_t>(d)) throw std::invalid_argument("linear_map_fit: block partition size mismatch");
  LinearMapFit f;
  f.block_of = block_of;
  const Eigen::RowVectorXd mz = z.colwise().mean();
  const Eigen::RowVectorXd mh = z_hat.colwise().mean();
  const RowMatrix zc = z.rowwise() - mz;
  const RowMatrix hc = z_hat.rowwise() - mh;
  RowMatrix gram = zc.transpose() * zc;
  if (numerical_rank(zc) < static_cast<std::size_t>(d)) {
    gram.diagonal().array() += 1e-6;
    f.regularized = true;
  }
  f.M = gram.ldlt().solve(zc.transpose() * hc);
  f.intercept = mh - mz * f.M;
  double on = 0.0, total = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const double a = std::abs(f.M(i, j));
      total += a;
      if (block_of[static_cast<std::size_t>(i)] == block_of[static_cast<std::size_t>(j)]) on += a;
    }
  f.block_score = total > 0.0 ? on / total : 0.0;
  return f;
}

}  // namespace covae::metrics
