#pragma once

// Latent additive-noise structural causal models pushed through an injective
// mixing network: DAG sampling, ancestral sampling, Syn-k and attribute-level
// MorphoMNIST generators.

#include "covae/diff/tensor.hpp"
#include "covae/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::scm {

using diff::RowMatrix;

// Adjacency is row-major d x d with adjacency[i*d + j] != 0 meaning i -> j.
using Adjacency = std::vector<std::uint8_t>;

// Groups nodes by repeatedly peeling off every current leaf (ascending id
// within a level). Throws if the graph has a cycle.
inline std::vector<std::vector<std::size_t>> leaf_levels(const Adjacency& adj, std::size_t d) {
  if (adj.size() != d * d) throw std::invalid_argument("adjacency size does not match d");
  std::vector<std::size_t> out_degree(d, 0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out_degree[i] += adj[i * d + j] ? 1 : 0;
  std::vector<bool> removed(d, false);
  std::vector<std::vector<std::size_t>> levels;
  std::size_t placed = 0;
  while (placed < d) {
    std::vector<std::size_t> level;
    for (std::size_t i = 0; i < d; ++i)
      if (!removed[i] && out_degree[i] == 0) level.push_back(i);
    if (level.empty()) throw std::invalid_argument("graph contains a cycle");
    for (std::size_t v : level) {
      removed[v] = true;
      for (std::size_t p = 0; p < d; ++p)
        if (adj[p * d + v]) --out_degree[p];
    }
    placed += level.size();
    levels.push_back(std::move(level));
  }
  return levels;
}

inline std::vector<std::size_t> leaf_first_order(const Adjacency& adj, std::size_t d) {
  std::vector<std::size_t> order;
  for (const auto& level : leaf_levels(adj, d)) order.insert(order.end(), level.begin(), level.end());
  return order;
}

struct Dag {
  std::size_t d = 0;
  Adjacency adjacency;
  std::vector<std::size_t> leaf_first_order;

  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * d + j] != 0; }

  std::vector<std::size_t> parents(std::size_t j) const {
    std::vector<std::size_t> ps;
    for (std::size_t i = 0; i < d; ++i)
      if (edge(i, j)) ps.push_back(i);
    return ps;
  }

  std::size_t edge_count() const {
    return static_cast<std::size_t>(std::count_if(adjacency.begin(), adjacency.end(),
                                                  [](std::uint8_t v) { return v != 0; }));
  }

  static Dag from_adjacency(std::size_t d, Adjacency adj) {
    for (std::size_t i = 0; i < d; ++i)
      if (adj[i * d + i]) throw std::invalid_argument("self-loop on node " + std::to_string(i));
    Dag g;
    g.d = d;
    g.adjacency = std::move(adj);
    g.leaf_first_order = covae::scm::leaf_first_order(g.adjacency, d);
    return g;
  }
};

// Uniformly samples min(e, d(d-1)/2) edges from the strict lower triangle of
// a random node permutation.
inline Dag random_dag(std::size_t d, std::size_t e, Rng& rng) {
  if (d == 0) throw std::invalid_argument("random_dag: d must be at least 1");
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t a = 1; a < d; ++a)
    for (std::size_t b = 0; b < a; ++b) slots.emplace_back(a, b);
  e = std::min(e, slots.size());
  // partial Fisher-Yates
  for (std::size_t k = 0; k < e; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, slots.size() - 1);
    std::swap(slots[k], slots[pick(rng)]);
  }
  Adjacency adj(d * d, 0);
  for (std::size_t k = 0; k < e; ++k) adj[perm[slots[k].first] * d + perm[slots[k].second]] = 1;
  return Dag::from_adjacency(d, std::move(adj));
}

enum class NoiseKind { gaussian, gamma, uniform };
enum class GammaConvention { shape_rate, shape_scale };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  // gaussian: (std, unused); gamma: (shape, rate-or-scale); uniform: (low, high)
  double a = 1.0;
  double b = 0.0;
  GammaConvention gamma_convention = GammaConvention::shape_rate;

  static NoiseSpec gaussian(double std) {
    if (!(std > 0.0)) throw std::invalid_argument("gaussian noise std must be positive");
    return {NoiseKind::gaussian, std, 0.0};
  }
  static NoiseSpec gamma(double shape, double second, GammaConvention c = GammaConvention::shape_rate) {
    if (!(shape > 0.0) || !(second > 0.0)) throw std::invalid_argument("gamma parameters must be positive");
    return {NoiseKind::gamma, shape, second, c};
  }
  static NoiseSpec uniform(double low, double high) {
    if (!(high > low)) throw std::invalid_argument("uniform noise needs high > low");
    return {NoiseKind::uniform, low, high};
  }

  double gamma_scale() const { return gamma_convention == GammaConvention::shape_rate ? 1.0 / b : b; }

  double mean() const {
    switch (kind) {
      case NoiseKind::gaussian: return 0.0;
      case NoiseKind::gamma: return a * gamma_scale();
      case NoiseKind::uniform: return 0.5 * (a + b);
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case NoiseKind::gaussian: return std::normal_distribution<double>(0.0, a)(rng);
      case NoiseKind::gamma: return std::gamma_distribution<double>(a, gamma_scale())(rng);
      case NoiseKind::uniform: return std::uniform_real_distribution<double>(a, b)(rng);
    }
    return 0.0;
  }

  std::string describe() const {
    switch (kind) {
      case NoiseKind::gaussian: return "gaussian(std=" + std::to_string(a) + ")";
      case NoiseKind::gamma:
        return "gamma(shape=" + std::to_string(a) +
               (gamma_convention == GammaConvention::shape_rate ? ", rate=" : ", scale=") +
               std::to_string(b) + ")";
      case NoiseKind::uniform: return "uniform(" + std::to_string(a) + ", " + std::to_string(b) + ")";
    }
    return "";
  }
};

enum class MechanismKind { zero, linear, tanh_linear, sigmoid_linear };

inline const char* to_string(MechanismKind k) {
  switch (k) {
    case MechanismKind::zero: return "zero";
    case MechanismKind::linear: return "linear";
    case MechanismKind::tanh_linear: return "tanh_linear";
    case MechanismKind::sigmoid_linear: return "sigmoid_linear";
  }
  return "?";
}

// Contribution of one parent: linear*z + tanh_coef*tanh(z)
//   + sigmoid_coef * sigmoid(sigmoid_slope*z + sigmoid_shift).
struct ParentTerm {
  std::size_t parent = 0;
  double linear = 0.0;
  double tanh_coef = 0.0;
  double sigmoid_coef = 0.0;
  double sigmoid_slope = 1.0;
  double sigmoid_shift = 0.0;

  double operator()(double z) const {
    double v = linear * z + tanh_coef * std::tanh(z);
    if (sigmoid_coef != 0.0) v += sigmoid_coef / (1.0 + std::exp(-(sigmoid_slope * z + sigmoid_shift)));
    return v;
  }
};

struct Mechanism {
  MechanismKind kind = MechanismKind::zero;
  double bias = 0.0;
  std::vector<ParentTerm> terms;

  // `node_values` is indexed by node id.
  double operator()(const double* node_values) const {
    double v = bias;
    for (const auto& t : terms) v += t(node_values[t.parent]);
    return v;
  }
};

struct MixingSpec {
  std::vector<std::size_t> dims;
  std::vector<RowMatrix> weights;  // weights[l] is dims[l+1] x dims[l]
  double slope = 0.2;
  double noise_std = 0.01;

  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }

  // Rows of Z map to rows of the result; LeakyReLU after every layer but the
  // last. No observation noise.
  RowMatrix apply(const RowMatrix& Z) const {
    RowMatrix h = Z;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = (h * weights[l].transpose()).eval();
      if (l + 1 < weights.size()) h = h.unaryExpr([this](double x) { return x > 0.0 ? x : slope * x; });
    }
    return h;
  }
};

// ceil-interpolated widths from `in` to `out` over `layers` linear maps.
inline std::vector<std::size_t> interpolate_dims(std::size_t in, std::size_t out, std::size_t layers) {
  std::vector<std::size_t> dims{in};
  for (std::size_t l = 1; l < layers; ++l) {
    const double t = static_cast<double>(l) / static_cast<double>(layers);
    dims.push_back(static_cast<std::size_t>(
        std::ceil(static_cast<double>(in) + (static_cast<double>(out) - static_cast<double>(in)) * t - 1e-9)));
  }
  dims.push_back(out);
  return dims;
}

inline double smallest_singular_value(const RowMatrix& w) {
  Eigen::JacobiSVD<RowMatrix> svd(w);
  return svd.singularValues().minCoeff();
}

// Random injective mixing: non-decreasing widths, Gaussian weights resampled
// until each has smallest singular value above 1e-6.
inline MixingSpec random_mixing(std::size_t d, std::size_t o, std::size_t layers, Rng& rng,
                                double slope = 0.2, double noise_std = 0.01) {
  if (o < d) throw std::invalid_argument("mixing output dimension must be >= latent dimension");
  if (layers == 0) throw std::invalid_argument("mixing needs at least one layer");
  MixingSpec m;
  m.dims = interpolate_dims(d, o, layers);
  m.slope = slope;
  m.noise_std = noise_std;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    const auto rows = static_cast<Eigen::Index>(m.dims[l + 1]);
    const auto cols = static_cast<Eigen::Index>(m.dims[l]);
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    RowMatrix w(rows, cols);
    do {
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = s * normal(rng);
    } while (smallest_singular_value(w) <= 1e-6);
    m.weights.push_back(std::move(w));
  }
  return m;
}

struct ScmSpec {
  Dag dag;
  std::vector<Mechanism> mechanisms;
  std::vector<NoiseSpec> noise;
  MixingSpec mixing;
  std::vector<std::string> node_names;
  std::vector<std::string> flags;  // conventions/substitutions recorded in the manifest
};

struct Dataset {
  RowMatrix Z;  // n x d, columns in leaf-first order
  RowMatrix X;  // n x o
  ScmSpec spec;
  std::uint64_t seed = 0;
  std::string name;

  std::size_t n() const { return static_cast<std::size_t>(Z.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(Z.cols()); }
  std::size_t o() const { return static_cast<std::size_t>(X.cols()); }

  // Ground-truth adjacency in stored column indexing.
  Adjacency stored_adjacency() const {
    const auto& g = spec.dag;
    const auto& ord = g.leaf_first_order;
    Adjacency a(g.d * g.d, 0);
    for (std::size_t r = 0; r < g.d; ++r)
      for (std::size_t c = 0; c < g.d; ++c) a[r * g.d + c] = g.adjacency[ord[r] * g.d + ord[c]];
    return a;
  }

  std::vector<std::string> stored_names() const {
    std::vector<std::string> names;
    for (std::size_t v : spec.dag.leaf_first_order) names.push_back(spec.node_names[v]);
    return names;
  }
};

// Ancestral sampling in topological order, then mixing and observation noise.
// Z columns are permuted to leaf-first order before mixing and storage.
inline Dataset sample_scm(const ScmSpec& spec, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_scm: n must be at least 1");
  const std::size_t d = spec.dag.d;
  if (spec.mechanisms.size() != d || spec.noise.size() != d) {
    throw std::invalid_argument("sample_scm: mechanisms/noise do not match node count");
  }
  if (spec.mixing.input_dim() != d) throw std::invalid_argument("sample_scm: mixing input dim != d");
  std::vector<std::size_t> topo(spec.dag.leaf_first_order.rbegin(), spec.dag.leaf_first_order.rend());
  RowMatrix raw(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t v : topo) {
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = raw.data() + r * d;
      const double z = spec.mechanisms[v](row) + spec.noise[v].sample(rng);
      if (!std::isfinite(z)) throw NumericalError("sample_scm: non-finite sample at node " + std::to_string(v));
      raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(v)) = z;
    }
  }
  Dataset ds;
  ds.spec = spec;
  ds.Z.resize(raw.rows(), raw.cols());
  for (std::size_t c = 0; c < d; ++c)
    ds.Z.col(static_cast<Eigen::Index>(c)) = raw.col(static_cast<Eigen::Index>(spec.dag.leaf_first_order[c]));
  ds.X = spec.mixing.apply(ds.Z);
  if (spec.mixing.noise_std > 0.0) {
    std::normal_distribution<double> eps(0.0, spec.mixing.noise_std);
    for (Eigen::Index i = 0; i < ds.X.size(); ++i) ds.X.data()[i] += eps(rng);
  }
  if (!ds.X.allFinite()) throw NumericalError("sample_scm: non-finite observation");
  return ds;
}

// Injective per-parent mechanisms a*z + b*tanh(z), |a| in [0.5, 2], |b| < |a|.
inline Mechanism random_mechanism(const std::vector<std::size_t>& parents, Rng& rng) {
  Mechanism m;
  if (parents.empty()) return m;
  m.kind = MechanismKind::tanh_linear;
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  std::uniform_real_distribution<double> ratio(0.5, 0.95);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t p : parents) {
    ParentTerm t;
    t.parent = p;
    t.linear = (coin(rng) ? 1.0 : -1.0) * mag(rng);
    t.tanh_coef = (coin(rng) ? 1.0 : -1.0) * std::abs(t.linear) * ratio(rng);
    m.terms.push_back(t);
  }
  return m;
}

inline std::vector<std::string> default_node_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < d; ++i) names.push_back("z" + std::to_string(i));
  return names;
}

inline constexpr std::size_t kDefaultSamples = 2000;
inline constexpr std::size_t kMixingLayers = 2;

// Structure (graph, mechanisms, noise scales, mixing) for Syn-k.
inline ScmSpec make_syn_spec(std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("make_syn: k must be at least 1");
  Rng rng = make_stream(seed, "structure");
  ScmSpec spec;
  spec.dag = random_dag(k, k, rng);
  std::uniform_real_distribution<double> sigma(0.4, 0.8);
  for (std::size_t v = 0; v < k; ++v) {
    spec.mechanisms.push_back(random_mechanism(spec.dag.parents(v), rng));
    spec.noise.push_back(NoiseSpec::gaussian(sigma(rng)));
  }
  spec.mixing = random_mixing(k, 2 * k, kMixingLayers, rng);
  spec.node_names = default_node_names(k);
  return spec;
}

inline Dataset make_syn(std::size_t k, std::size_t n, std::uint64_t seed) {
  ScmSpec spec = make_syn_spec(k, seed);
  Rng rng = make_stream(seed, "data");
  Dataset ds = sample_scm(spec, n, rng);
  ds.seed = seed;
  ds.name = "syn-" + std::to_string(k);
  return ds;
}

enum class MorphoVariant { TI, IT, TS, TSWI };

inline const char* to_string(MorphoVariant v) {
  switch (v) {
    case MorphoVariant::TI: return "TI";
    case MorphoVariant::IT: return "IT";
    case MorphoVariant::TS: return "TS";
    case MorphoVariant::TSWI: return "TSWI";
  }
  return "?";
}

inline MorphoVariant parse_morpho_variant(const std::string& s) {
  if (s == "TI") return MorphoVariant::TI;
  if (s == "IT") return MorphoVariant::IT;
  if (s == "TS") return MorphoVariant::TS;
  if (s == "TSWI") return MorphoVariant::TSWI;
  throw std::invalid_argument("unknown morpho variant '" + s + "' (expected TI, IT, TS or TSWI)");
}

inline ParentTerm sigmoid_term(std::size_t parent, double coef, double slope, double shift) {
  ParentTerm t;
  t.parent = parent;
  t.sigmoid_coef = coef;
  t.sigmoid_slope = slope;
  t.sigmoid_shift = shift;
  return t;
}

inline ParentTerm linear_term(std::size_t parent, double coef) {
  ParentTerm t;
  t.parent = parent;
  t.linear = coef;
  return t;
}

// Attribute-level structural equations of the MorphoMNIST variants. Normal
// second parameters are standard deviations.
inline ScmSpec make_morpho_spec(MorphoVariant variant, GammaConvention gamma = GammaConvention::shape_rate) {
  ScmSpec spec;
  auto node = [](MechanismKind kind, double bias, std::vector<ParentTerm> terms) {
    Mechanism m;
    m.kind = kind;
    m.bias = bias;
    m.terms = std::move(terms);
    return m;
  };
  const std::string gamma_flag = gamma == GammaConvention::shape_rate ? "gamma parameters read as (shape, rate)"
                                                                      : "gamma parameters read as (shape, scale)";
  std::size_t d = 0;
  Adjacency adj;
  switch (variant) {
    case MorphoVariant::TI: {
      d = 2;  // t, i
      adj = {0, 1, 0, 0};
      spec.node_names = {"thickness", "intensity"};
      spec.mechanisms = {node(MechanismKind::zero, 0.5, {}),
                         node(MechanismKind::sigmoid_linear, 64.0, {sigmoid_term(0, 191.0, 2.0, 5.0)})};
      spec.noise = {NoiseSpec::gamma(10.0, 5.0, gamma), NoiseSpec::gaussian(1.0)};
      spec.flags = {gamma_flag, "intensity mechanism printed as sigmoid(2w+5); w aliased to thickness"};
      break;
    }
    case MorphoVariant::IT: {
      d = 2;  // i, t
      adj = {0, 1, 0, 0};
      spec.node_names = {"intensity", "thickness"};
      spec.mechanisms = {node(MechanismKind::zero, 0.0, {}),
                         node(MechanismKind::sigmoid_linear, 3.0, {sigmoid_term(0, 1.0, 1.0 / 255.0, 0.0)})};
      spec.noise = {NoiseSpec::uniform(60.0, 255.0), NoiseSpec::gaussian(0.5)};
      break;
    }
    case MorphoVariant::TS: {
      d = 2;  // t, s
      adj = {0, 1, 0, 0};
      spec.node_names = {"thickness", "slant"};
      spec.mechanisms = {node(MechanismKind::zero, 0.0, {}),
                         node(MechanismKind::sigmoid_linear, 10.0, {sigmoid_term(0, 5.0, 2.0, -5.0)})};
      spec.noise = {NoiseSpec::gamma(1.0, 5.0, gamma), NoiseSpec::gaussian(0.5)};
      spec.flags = {gamma_flag, "thickness noise printed as Gamma(0, 5); degenerate shape replaced by 1"};
      break;
    }
    case MorphoVariant::TSWI: {
      d = 4;  // t, s, w, i
      adj = {0, 1, 1, 0,   //
             0, 0, 1, 0,   //
             0, 0, 0, 1,   //
             0, 0, 0, 0};
      spec.node_names = {"thickness", "slant", "width", "intensity"};
      spec.mechanisms = {
          node(MechanismKind::zero, 0.0, {}),
          node(MechanismKind::linear, 10.0, {linear_term(0, 20.0)}),
          node(MechanismKind::sigmoid_linear, 10.0, {sigmoid_term(0, 15.0, 0.5, 0.0), linear_term(1, -0.25)}),
          node(MechanismKind::sigmoid_linear, 64.0, {sigmoid_term(2, 191.0, 1.0 / 25.0, 0.0)})};
      spec.noise = {NoiseSpec::gamma(1.0, 5.0, gamma), NoiseSpec::gaussian(5.0), NoiseSpec::gaussian(1.0),
                    NoiseSpec::gaussian(1.0)};
      spec.flags = {gamma_flag, "thickness noise printed as Gamma(0, 5); degenerate shape replaced by 1"};
      break;
    }
  }
  spec.dag = Dag::from_adjacency(d, std::move(adj));
  spec.flags.push_back("normal second parameter read as standard deviation");
  spec.flags.push_back("observations from a fixed synthetic injective mixing, not rendered digits");
  // The same mixing for every seed.
  Rng mix_rng = make_stream(0x6d6f7270686fULL, std::string("mixing-") + to_string(variant));
  spec.mixing = random_mixing(d, 2 * d, kMixingLayers, mix_rng);
  return spec;
}

inline Dataset make_morpho(MorphoVariant variant, std::size_t n, std::uint64_t seed,
                           GammaConvention gamma = GammaConvention::shape_rate) {
  ScmSpec spec = make_morpho_spec(variant, gamma);
  Rng rng = make_stream(seed, "data");
  Dataset ds = sample_scm(spec, n, rng);
  ds.seed = seed;
  ds.name = std::string("morpho-") + to_string(variant);
  return ds;
}

}  // namespace covae::scm
