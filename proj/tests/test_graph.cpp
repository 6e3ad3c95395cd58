#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mfunet/femgen.hpp"
#include "mfunet/graph.hpp"

using namespace mfunet;

namespace {

GraphSample beam_graph(std::uint64_t seed, std::size_t target = 200) {
  const auto spec = sample_spec(seed);
  const auto mesh = mesh_beam(spec, {.target_nodes = target});
  return mesh_to_graph(mesh, solve_elasticity(mesh, Material{}, spec), spec, 0);
}

}  // namespace

TEST(MeshToGraph, FeatureWidths) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto g = beam_graph(s);
    EXPECT_EQ(g.node_attrs.cols, 11u);
    EXPECT_EQ(g.edge_attrs.cols, 3u);
    EXPECT_EQ(g.targets.cols, 2u);
    EXPECT_EQ(g.coords.rows, g.n_nodes());
  }
}

TEST(MeshToGraph, SingleTriangleHasSixDirectedEdges) {
  TriMesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}};
  m.triangles = {{0, 1, 2}};
  m.tags = {NodeTag::Fixed, NodeTag::Loaded, NodeTag::Fixed};
  m.load_nodes = {1};
  BeamSpec spec;
  spec.load_direction = {0.0, -1.0};
  FemSolution sol;
  sol.displacement.assign(3, Vec2{});
  const auto g = mesh_to_graph(m, sol, spec, 0);
  EXPECT_EQ(g.n_edges(), 6u);
  std::set<std::pair<int, int>> pairs;
  for (std::size_t e = 0; e < g.n_edges(); ++e) pairs.emplace(g.edge_index(e, 0), g.edge_index(e, 1));
  EXPECT_EQ(pairs.size(), 6u);
}

TEST(MeshToGraph, EdgeInvariants) {
  const auto g = beam_graph(3);
  std::set<std::pair<int, int>> pairs;
  for (std::size_t e = 0; e < g.n_edges(); ++e) {
    const int r = g.edge_index(e, 0), s = g.edge_index(e, 1);
    ASSERT_NE(r, s);
    ASSERT_GE(r, 0);
    ASSERT_LT(static_cast<std::size_t>(r), g.n_nodes());
    EXPECT_TRUE(pairs.emplace(r, s).second) << "duplicate directed edge";
    EXPECT_NEAR(g.edge_attrs(e, 2), std::hypot(g.edge_attrs(e, 0), g.edge_attrs(e, 1)), 1e-12);
  }
  // reverse edges: offsets negate, lengths agree
  std::map<std::pair<int, int>, std::size_t> at;
  for (std::size_t e = 0; e < g.n_edges(); ++e) at[{g.edge_index(e, 0), g.edge_index(e, 1)}] = e;
  for (const auto& [key, e] : at) {
    auto it = at.find({key.second, key.first});
    ASSERT_NE(it, at.end());
    const std::size_t r = it->second;
    EXPECT_EQ(g.edge_attrs(e, 0), -g.edge_attrs(r, 0));
    EXPECT_EQ(g.edge_attrs(e, 1), -g.edge_attrs(r, 1));
    EXPECT_EQ(g.edge_attrs(e, 2), g.edge_attrs(r, 2));
  }
}

TEST(MeshToGraph, NodeFeatureEncoding) {
  const auto spec = sample_spec(11);
  const auto mesh = mesh_beam(spec, {.target_nodes = 100});
  const auto g = mesh_to_graph(mesh, solve_elasticity(mesh, Material{}, spec), spec, 2);
  EXPECT_EQ(g.level, 2);
  double load_share = 0.0;
  namespace nf = node_feature;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    const auto row = g.node_attrs.row(i);
    EXPECT_EQ(row[nf::x], mesh.nodes[i].x);
    EXPECT_EQ(row[nf::type_interior] + row[nf::type_fixed] + row[nf::type_free_boundary], 1.0);
    EXPECT_EQ(row[nf::kind_point] + row[nf::kind_distributed], 1.0);
    EXPECT_EQ(row[nf::load_dir_x], spec.load_direction.x);
    EXPECT_EQ(row[nf::type_fixed] == 1.0, mesh.tags[i] == NodeTag::Fixed);
    if (row[nf::load_magnitude] > 0.0) {
      EXPECT_EQ(row[nf::loaded], 1.0);
    }
    load_share += row[nf::load_magnitude];
  }
  EXPECT_NEAR(load_share, 1.0, 1e-12);
}

TEST(MeshToGraph, RejectsMisalignedSolution) {
  const auto spec = sample_spec(1);
  const auto mesh = mesh_beam(spec, {.target_nodes = 50});
  FemSolution sol;
  sol.displacement.resize(mesh.size() - 1);
  EXPECT_THROW(mesh_to_graph(mesh, sol, spec, 0), ShapeError);
}

TEST(MeshToGraph, ConnectedWhenMeshIs) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_TRUE(is_connected(beam_graph(s, 50)));
}

TEST(Normalizer, TrainingStatisticsAreStandardized) {
  std::vector<GraphSample> train;
  for (std::uint64_t s = 0; s < 8; ++s) train.push_back(beam_graph(s, 100));
  std::vector<const GraphSample*> ptrs;
  for (const auto& g : train) ptrs.push_back(&g);
  const auto stats = fit_normalizer(ptrs);

  const std::size_t cols = train[0].node_attrs.cols;
  std::vector<double> mean(cols, 0.0), sq(cols, 0.0);
  std::size_t rows = 0;
  for (const auto& g : train) {
    const auto n = stats.normalize(g);
    rows += n.node_attrs.rows;
    for (std::size_t r = 0; r < n.node_attrs.rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        mean[c] += n.node_attrs(r, c);
        sq[c] += n.node_attrs(r, c) * n.node_attrs(r, c);
      }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (stats.node.passthrough[c]) continue;
    const double m = mean[c] / static_cast<double>(rows);
    const double sd = std::sqrt(sq[c] / static_cast<double>(rows) - m * m);
    EXPECT_LT(std::abs(m), 1e-8) << "column " << c;
    EXPECT_NEAR(sd, 1.0, 1e-8) << "column " << c;
  }
}

TEST(Normalizer, CategoricalColumnsPassThrough) {
  const auto g = beam_graph(4, 100);
  const GraphSample* p = &g;
  const auto stats = fit_normalizer(std::span(&p, 1));
  const auto n = stats.normalize(g);
  for (auto c : g.categorical_node_columns)
    for (std::size_t r = 0; r < g.n_nodes(); ++r) EXPECT_EQ(n.node_attrs(r, c), g.node_attrs(r, c));
}

TEST(Normalizer, ConstantFeatureClampsStd) {
  auto g = beam_graph(4, 50);
  // a single spec makes the load direction columns constant
  const GraphSample* p = &g;
  const auto stats = fit_normalizer(std::span(&p, 1));
  EXPECT_EQ(stats.node.std[node_feature::load_dir_x], NormalizationStats::min_std);
  EXPECT_TRUE(stats.node.passthrough[node_feature::load_dir_x]);
  const auto n = stats.normalize(g);
  for (std::size_t r = 0; r < g.n_nodes(); ++r)
    EXPECT_EQ(n.node_attrs(r, node_feature::load_dir_x), g.node_attrs(r, node_feature::load_dir_x));
}

TEST(Normalizer, RoundTrip) {
  const auto a = beam_graph(1, 100), b = beam_graph(2, 100);
  const GraphSample* ptrs[] = {&a, &b};
  const auto stats = fit_normalizer(ptrs);
  auto t = stats.normalize(b).targets;
  stats.denormalize_targets(t);
  for (std::size_t i = 0; i < t.data.size(); ++i) EXPECT_NEAR(t.data[i], b.targets.data[i], 1e-10 * std::max(1.0, std::abs(b.targets.data[i])));
  auto x = stats.normalize(b).node_attrs;
  stats.node.invert(x);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(x.data[i], b.node_attrs.data[i], 1e-10);
}

TEST(Normalizer, EmptyInputThrows) {
  EXPECT_THROW(fit_normalizer(std::span<const GraphSample* const>{}), ShapeError);
}
