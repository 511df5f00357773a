#include "covae/dataset_io.hpp"
#include "covae/metrics.hpp"
#include "covae/scm.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace covae;
namespace fs = std::filesystem;

namespace {

// Independent cycle check: Kahn's algorithm over the raw adjacency.
bool acyclic(const scm::Adjacency& adj, std::size_t d) {
  std::vector<std::size_t> indeg(d, 0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) indeg[j] += adj[i * d + j] ? 1 : 0;
  std::vector<std::size_t> ready;
  for (std::size_t j = 0; j < d; ++j)
    if (!indeg[j]) ready.push_back(j);
  std::size_t seen = 0;
  while (!ready.empty()) {
    const auto v = ready.back();
    ready.pop_back();
    ++seen;
    for (std::size_t j = 0; j < d; ++j)
      if (adj[v * d + j] && --indeg[j] == 0) ready.push_back(j);
  }
  return seen == d;
}

// Kolmogorov-Smirnov two-sided test against N(0, 1), asymptotic p-value.
double ks_normal_pvalue(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double dmax = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 0.5 * std::erfc(-x[i] / std::sqrt(2.0));
    dmax = std::max({dmax, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * dmax;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

scm::ScmSpec root_only_spec() {
  scm::ScmSpec spec;
  spec.dag = scm::Dag::from_adjacency(1, {0});
  spec.mechanisms = {scm::Mechanism{}};
  spec.noise = {scm::NoiseSpec::gaussian(1.0)};
  Rng rng(1);
  spec.mixing = scm::random_mixing(1, 2, 2, rng);
  spec.node_names = {"z0"};
  return spec;
}

}  // namespace

TEST(RandomDag, SingleNode) {
  Rng rng(0);
  const auto g = scm::random_dag(1, 0, rng);
  EXPECT_EQ(g.d, 1u);
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(g.leaf_first_order, std::vector<std::size_t>{0});
}

TEST(RandomDag, TwoNodesChildFirst) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const auto g = scm::random_dag(2, 1, rng);
    ASSERT_EQ(g.edge_count(), 1u);
    const std::size_t parent = g.edge(0, 1) ? 0 : 1;
    EXPECT_EQ(g.leaf_first_order, (std::vector<std::size_t>{1 - parent, parent}));
  }
}

TEST(RandomDag, AcyclicOverManyResamples) {
  Rng rng(15);
  for (int t = 0; t < 1000; ++t) {
    const auto g = scm::random_dag(15, 15, rng);
    ASSERT_TRUE(acyclic(g.adjacency, 15));
    ASSERT_EQ(g.edge_count(), 15u);
  }
}

TEST(RandomDag, EdgeCountIsCapped) {
  Rng rng(2);
  EXPECT_EQ(scm::random_dag(4, 100, rng).edge_count(), 6u);
}

TEST(LeafLevels, RejectsCycles) {
  EXPECT_THROW(scm::leaf_levels({0, 1, 1, 0}, 2), std::invalid_argument);
  EXPECT_THROW(scm::Dag::from_adjacency(2, {1, 0, 0, 0}), std::invalid_argument);
}

TEST(LeafLevels, TiesBrokenByNodeId) {
  // 2 -> 0, 2 -> 1: both 0 and 1 are leaves.
  EXPECT_EQ(scm::leaf_first_order({0, 0, 0, 0, 0, 0, 1, 1, 0}, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SampleScm, RootGaussianIsStandardNormal) {
  Rng rng(3);
  const auto ds = scm::sample_scm(root_only_spec(), 2000, rng);
  std::vector<double> col(ds.Z.data(), ds.Z.data() + ds.Z.size());
  EXPECT_GT(ks_normal_pvalue(col), 0.01);
}

TEST(SampleScm, DeterministicChainCorrelation) {
  scm::ScmSpec spec;
  spec.dag = scm::Dag::from_adjacency(2, {0, 1, 0, 0});
  scm::Mechanism m;
  m.kind = scm::MechanismKind::linear;
  m.terms = {scm::linear_term(0, 2.0)};
  spec.mechanisms = {scm::Mechanism{}, m};
  spec.noise = {scm::NoiseSpec::gaussian(1.0), scm::NoiseSpec::gaussian(1e-9)};
  Rng mix(4);
  spec.mixing = scm::random_mixing(2, 4, 2, mix);
  spec.node_names = scm::default_node_names(2);
  Rng rng(5);
  const auto ds = scm::sample_scm(spec, 500, rng);
  ASSERT_EQ(ds.spec.dag.leaf_first_order, (std::vector<std::size_t>{1, 0}));
  const auto c = metrics::abs_correlation(ds.Z.col(0), ds.Z.col(1));
  EXPECT_GT(c(0, 0), 1.0 - 1e-9);
  // Stored column 0 is the child.
  EXPECT_NEAR(ds.Z(0, 0), 2.0 * ds.Z(0, 1), 1e-6);
}

TEST(MakeSyn, Shapes) {
  const auto s2 = scm::make_syn(2, 2000, 0);
  EXPECT_EQ(s2.Z.rows(), 2000);
  EXPECT_EQ(s2.Z.cols(), 2);
  EXPECT_EQ(s2.X.cols(), 4);
  const auto s15 = scm::make_syn(15, 50, 0);
  EXPECT_EQ(s15.d(), 15u);
  EXPECT_EQ(s15.o(), 30u);
  EXPECT_EQ(s15.spec.dag.edge_count(), 15u);
}

TEST(MakeSyn, SameSeedIsBitIdentical) {
  const auto a = scm::make_syn(5, 300, 42);
  const auto b = scm::make_syn(5, 300, 42);
  EXPECT_TRUE(a.Z == b.Z);
  EXPECT_TRUE(a.X == b.X);
  EXPECT_EQ(a.stored_adjacency(), b.stored_adjacency());
  const auto c = scm::make_syn(5, 300, 43);
  EXPECT_FALSE(a.X == c.X);
}

TEST(MakeSyn, LeafFirstContract) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t k = 2 + seed % 14;
    const auto spec = scm::make_syn_spec(k, seed);
    scm::Dataset ds;
    ds.spec = spec;
    const auto a = ds.stored_adjacency();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (a[i * k + j]) ASSERT_LT(j, i) << "edge " << i << "->" << j << " seed " << seed;
  }
}

TEST(MakeSyn, MechanismsAreInjectivePerParent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = scm::make_syn_spec(8, seed);
    for (const auto& m : spec.mechanisms)
      for (const auto& t : m.terms) {
        EXPECT_GE(std::abs(t.linear), 0.5);
        EXPECT_LE(std::abs(t.linear), 2.0);
        EXPECT_LT(std::abs(t.tanh_coef), std::abs(t.linear));
      }
  }
}

TEST(Mixing, InjectiveOnRandomPairs) {
  Rng rng(9);
  const auto mix = scm::random_mixing(3, 6, 2, rng);
  std::normal_distribution<double> n(0.0, 1.5);
  int checked = 0;
  while (checked < 1000) {
    diff::RowMatrix z(2, 3);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    if ((z.row(0) - z.row(1)).norm() <= 1e-3) continue;
    const auto x = mix.apply(z);
    ASSERT_GT((x.row(0) - x.row(1)).norm(), 0.0);
    ++checked;
  }
}

TEST(Mixing, WidthsAreNonDecreasing) {
  EXPECT_EQ(scm::interpolate_dims(2, 4, 3), (std::vector<std::size_t>{2, 3, 4, 4}));
  EXPECT_EQ(scm::interpolate_dims(15, 30, 2), (std::vector<std::size_t>{15, 23, 30}));
  Rng rng(0);
  EXPECT_THROW(scm::random_mixing(4, 3, 2, rng), std::invalid_argument);
}

TEST(Morpho, TswiStructure) {
  const auto ds = scm::make_morpho(scm::MorphoVariant::TSWI, 100, 0);
  EXPECT_EQ(ds.d(), 4u);
  EXPECT_EQ(ds.stored_names(), (std::vector<std::string>{"intensity", "width", "slant", "thickness"}));
}

TEST(Morpho, TiThicknessMean) {
  const auto ds = scm::make_morpho(scm::MorphoVariant::TI, 10000, 1);
  const auto names = ds.stored_names();
  const auto t = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "thickness") - names.begin());
  const Eigen::VectorXd col = ds.Z.col(t);
  const double mean = col.mean();
  const double sd = std::sqrt((col.array() - mean).square().sum() / (col.size() - 1));
  // shape 10, rate 5: mean 2, plus the 0.5 offset.
  EXPECT_LT(std::abs(mean - 2.5), 3.0 * sd / std::sqrt(static_cast<double>(col.size())));
}

TEST(Morpho, ShapeScaleConventionIsSelectable) {
  const auto ds = scm::make_morpho(scm::MorphoVariant::TI, 4000, 1, scm::GammaConvention::shape_scale);
  const auto names = ds.stored_names();
  const auto t = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "thickness") - names.begin());
  EXPECT_NEAR(ds.Z.col(t).mean(), 50.5, 1.0);
}

TEST(Morpho, ItIntensitySupport) {
  const auto ds = scm::make_morpho(scm::MorphoVariant::IT, 2000, 2);
  const auto names = ds.stored_names();
  const auto i = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "intensity") - names.begin());
  EXPECT_GE(ds.Z.col(i).minCoeff(), 60.0);
  EXPECT_LE(ds.Z.col(i).maxCoeff(), 255.0);
}

TEST(Morpho, SubstitutionsAreFlagged) {
  const auto j = io::manifest_json(scm::make_morpho(scm::MorphoVariant::TS, 10, 0));
  const auto flags = j.at("noise_conventions").dump();
  EXPECT_NE(flags.find("degenerate shape replaced by 1"), std::string::npos);
  const auto ti = io::manifest_json(scm::make_morpho(scm::MorphoVariant::TI, 10, 0)).at("noise_conventions").dump();
  EXPECT_NE(ti.find("aliased"), std::string::npos);
}

TEST(NoiseSpec, RejectsInvalidParameters) {
  EXPECT_THROW(scm::NoiseSpec::gaussian(0.0), std::invalid_argument);
  EXPECT_THROW(scm::NoiseSpec::gamma(0.0, 5.0), std::invalid_argument);
  EXPECT_THROW(scm::NoiseSpec::uniform(1.0, 1.0), std::invalid_argument);
}

TEST(DatasetIo, RoundTripIsExact) {
  const auto ds = scm::make_syn(3, 64, 11);
  const fs::path dir = fs::temp_directory_path() / "covae_io_roundtrip";
  fs::remove_all(dir);
  io::save_dataset(ds, dir);
  const auto back = io::load_dataset(dir);
  EXPECT_TRUE(back.Z == ds.Z);
  EXPECT_TRUE(back.X == ds.X);
  EXPECT_EQ(back.adjacency, ds.stored_adjacency());
  EXPECT_EQ(back.name, "syn-3");
  const std::string csv = io::read_text_file(dir / "data.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "z_0,z_1,z_2,x_0,x_1,x_2,x_3,x_4,x_5");
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  // Saving again reproduces the same bytes.
  io::save_dataset(ds, dir / "again");
  EXPECT_EQ(csv, io::read_text_file(dir / "again" / "data.csv"));
  EXPECT_EQ(io::read_text_file(dir / "manifest.json"), io::read_text_file(dir / "again" / "manifest.json"));
  fs::remove_all(dir);
}

TEST(DatasetIo, MissingDirectoryThrows) {
  EXPECT_THROW(io::load_dataset("/nonexistent/covae"), io::IoError);
}

TEST(DatasetIo, ParseDoubleRejectsGarbage) {
  EXPECT_EQ(io::parse_double(" 1.5 "), 1.5);
  EXPECT_THROW(io::parse_double("1.5x"), io::IoError);
}
