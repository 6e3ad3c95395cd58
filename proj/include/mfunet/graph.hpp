#pragma once

// Mesh -> graph conversion, feature layout, and z-score normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfunet/error.hpp"
#include "mfunet/femgen.hpp"

namespace mfunet {

/// Row-major 2D array used for graph features and index tables.
template <class T>
struct Array2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Array2() = default;
  Array2(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Array2&, const Array2&) = default;
};

/// Node feature layout of the beam problem, in column order.
namespace node_feature {
inline constexpr std::size_t x = 0;
inline constexpr std::size_t y = 1;
inline constexpr std::size_t type_interior = 2;
inline constexpr std::size_t type_fixed = 3;
inline constexpr std::size_t type_free_boundary = 4;
inline constexpr std::size_t loaded = 5;
inline constexpr std::size_t load_dir_x = 6;
inline constexpr std::size_t load_dir_y = 7;
inline constexpr std::size_t kind_point = 8;
inline constexpr std::size_t kind_distributed = 9;
inline constexpr std::size_t load_magnitude = 10;
inline constexpr std::size_t count = 11;
}  // namespace node_feature

/// One mesh as a graph. Edges are directed pairs (receiver, sender); every
/// mesh edge appears in both directions. Edge features are the sender-minus-
/// receiver coordinate offsets followed by their Euclidean length.
struct GraphSample {
  std::size_t dim = 2;
  Array2<double> coords;      // [n x dim]
  Array2<double> node_attrs;  // [n x d_n]
  Array2<int> edge_index;     // [E x 2] (receiver, sender)
  Array2<double> edge_attrs;  // [E x (dim + 1)]
  Array2<double> targets;     // [n x d_out]
  /// Columns of node_attrs that are categorical and exempt from z-scoring.
  std::vector<std::size_t> categorical_node_columns;
  int level = 0;  // 0 = highest resolution

  std::size_t n_nodes() const { return node_attrs.rows; }
  std::size_t n_edges() const { return edge_index.rows; }

  std::vector<int> receivers() const {
    std::vector<int> r(n_edges());
    for (std::size_t e = 0; e < r.size(); ++e) r[e] = edge_index(e, 0);
    return r;
  }
  std::vector<int> senders() const {
    std::vector<int> s(n_edges());
    for (std::size_t e = 0; e < s.size(); ++e) s[e] = edge_index(e, 1);
    return s;
  }
};

/// Unique undirected edges of a cell complex, sorted, as (a < b) pairs.
template <class Cells>
std::vector<std::pair<int, int>> unique_edges(const Cells& cells) {
  std::set<std::pair<int, int>> seen;
  for (const auto& cell : cells) {
    const std::size_t k = std::size(cell);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        int i = cell[a], j = cell[b];
        if (i == j) continue;
        seen.emplace(std::min(i, j), std::max(i, j));
      }
  }
  return {seen.begin(), seen.end()};
}

/// Directed edge table and edge features from coordinates and undirected
/// edges. Fills edge_index and edge_attrs of `g` (coords must be set).
inline void build_edges(GraphSample& g, const std::vector<std::pair<int, int>>& undirected) {
  const std::size_t dim = g.dim;
  g.edge_index = Array2<int>(2 * undirected.size(), 2);
  g.edge_attrs = Array2<double>(2 * undirected.size(), dim + 1);
  std::size_t e = 0;
  for (const auto& [a, b] : undirected) {
    for (const auto [recv, send] : {std::pair{a, b}, std::pair{b, a}}) {
      g.edge_index(e, 0) = recv;
      g.edge_index(e, 1) = send;
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double off = g.coords(static_cast<std::size_t>(send), d) -
                           g.coords(static_cast<std::size_t>(recv), d);
        g.edge_attrs(e, d) = off;
        sq += off * off;
      }
      g.edge_attrs(e, dim) = std::sqrt(sq);
      ++e;
    }
  }
}

/// Builds the 11-feature beam graph: coordinates, node-type one-hot
/// {interior, fixed, free boundary}, loaded flag, load direction, load-kind
/// one-hot, and the node's share of the total load.
inline GraphSample mesh_to_graph(const TriMesh& mesh, const FemSolution& sol, const BeamSpec& spec,
                                 int level) {
  const std::size_t n = mesh.size();
  if (sol.displacement.size() != n || mesh.tags.size() != n)
    throw ShapeError("mesh_to_graph: solution/tag arrays not aligned with mesh nodes");
  namespace nf = node_feature;
  GraphSample g;
  g.dim = 2;
  g.level = level;
  g.coords = Array2<double>(n, 2);
  g.node_attrs = Array2<double>(n, nf::count, 0.0);
  g.targets = Array2<double>(n, 2);
  g.categorical_node_columns = {nf::type_interior,    nf::type_fixed, nf::type_free_boundary,
                                nf::loaded,           nf::kind_point, nf::kind_distributed};

  const auto forces = beam_nodal_forces(mesh, spec);
  for (std::size_t i = 0; i < n; ++i) {
    g.coords(i, 0) = mesh.nodes[i].x;
    g.coords(i, 1) = mesh.nodes[i].y;
    auto row = g.node_attrs.row(i);
    row[nf::x] = mesh.nodes[i].x;
    row[nf::y] = mesh.nodes[i].y;
    switch (mesh.tags[i]) {
      case NodeTag::Interior: row[nf::type_interior] = 1.0; break;
      case NodeTag::Fixed: row[nf::type_fixed] = 1.0; break;
      case NodeTag::FreeBoundary:
      case NodeTag::Loaded: row[nf::type_free_boundary] = 1.0; break;
    }
    const double fmag = std::hypot(forces[2 * i], forces[2 * i + 1]);
    row[nf::loaded] = (mesh.tags[i] == NodeTag::Loaded || fmag > 0.0) ? 1.0 : 0.0;
    row[nf::load_dir_x] = spec.load_direction.x;
    row[nf::load_dir_y] = spec.load_direction.y;
    row[spec.load_kind == LoadKind::Point ? nf::kind_point : nf::kind_distributed] = 1.0;
    row[nf::load_magnitude] = fmag / spec.load_total;
    g.targets(i, 0) = sol.displacement[i].x;
    g.targets(i, 1) = sol.displacement[i].y;
  }
  build_edges(g, unique_edges(mesh.triangles));
  return g;
}

/// True when every node is reachable from node 0 along edges.
inline bool is_connected(const GraphSample& g) {
  const std::size_t n = g.n_nodes();
  if (n == 0) return true;
  std::vector<std::vector<int>> adj(n);
  for (std::size_t e = 0; e < g.n_edges(); ++e) adj[g.edge_index(e, 0)].push_back(g.edge_index(e, 1));
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
  }
  return count == n;
}

// ---------------------------------------------------------------------------
// Normalization

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<char> passthrough;  // categorical columns left untouched

  void apply(Array2<double>& a) const {
    for (std::size_t r = 0; r < a.rows; ++r)
      for (std::size_t c = 0; c < a.cols; ++c)
        if (!passthrough[c]) a(r, c) = (a(r, c) - mean[c]) / std[c];
  }
  void invert(Array2<double>& a) const {
    for (std::size_t r = 0; r < a.rows; ++r)
      for (std::size_t c = 0; c < a.cols; ++c)
        if (!passthrough[c]) a(r, c) = a(r, c) * std[c] + mean[c];
  }
};

struct NormalizationStats {
  static constexpr double min_std = 1e-12;
  FeatureStats node;
  FeatureStats edge;
  FeatureStats target;

  GraphSample normalize(const GraphSample& g) const {
    GraphSample out = g;
    node.apply(out.node_attrs);
    edge.apply(out.edge_attrs);
    target.apply(out.targets);
    return out;
  }
  void denormalize_targets(Array2<double>& t) const { target.invert(t); }
};

namespace detail {

inline FeatureStats fit_columns(const std::vector<const Array2<double>*>& arrays,
                                const std::vector<std::size_t>& categorical) {
  const std::size_t cols = arrays.front()->cols;
  FeatureStats s;
  s.mean.assign(cols, 0.0);
  s.std.assign(cols, 1.0);
  s.passthrough.assign(cols, 0);
  for (auto c : categorical)
    if (c < cols) s.passthrough[c] = 1;
  std::size_t count = 0;
  for (const auto* a : arrays) {
    if (a->cols != cols) throw ShapeError("fit_normalizer: feature widths differ across samples");
    count += a->rows;
    for (std::size_t r = 0; r < a->rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) s.mean[c] += (*a)(r, c);
  }
  if (count == 0) throw ShapeError("fit_normalizer: no rows");
  for (auto& m : s.mean) m /= static_cast<double>(count);
  std::vector<double> var(cols, 0.0);
  std::vector<char> constant(cols, 1);
  const double* first = arrays.front()->data.data();
  for (const auto* a : arrays)
    for (std::size_t r = 0; r < a->rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = (*a)(r, c) - s.mean[c];
        var[c] += d * d;
        if ((*a)(r, c) != first[c]) constant[c] = 0;
      }
  for (std::size_t c = 0; c < cols; ++c) {
    s.std[c] = std::max(std::sqrt(var[c] / static_cast<double>(count)), NormalizationStats::min_std);
    if (s.passthrough[c]) {
      s.mean[c] = 0.0;
      s.std[c] = 1.0;
    } else if (constant[c]) {
      // rounding in the mean would be blown up by the clamped std
      s.passthrough[c] = 1;
      s.mean[c] = 0.0;
      s.std[c] = NormalizationStats::min_std;
    }
  }
  return s;
}

}  // namespace detail

/// Z-score statistics over all rows of the given (training) graphs.
inline NormalizationStats fit_normalizer(std::span<const GraphSample* const> train) {
  if (train.empty()) throw ShapeError("fit_normalizer: empty training set");
  std::vector<const Array2<double>*> nodes, edges, targets;
  for (const auto* g : train) {
    nodes.push_back(&g->node_attrs);
    edges.push_back(&g->edge_attrs);
    targets.push_back(&g->targets);
  }
  NormalizationStats st;
  st.node = detail::fit_columns(nodes, train.front()->categorical_node_columns);
  st.edge = detail::fit_columns(edges, {});
  st.target = detail::fit_columns(targets, {});
  return st;
}

}  // namespace mfunet
