#pragma once

// Small random graphs and multi-level samples for model tests.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mfunet/crosslevel.hpp"
#include "mfunet/gnn.hpp"
#include "mfunet/graph.hpp"

namespace mfunet::testing {

/// n random nodes in the unit square, a chain plus `extra` random chords,
/// random node attributes of width d_node and random targets.
inline GraphSample random_graph(std::size_t n, std::size_t d_node, std::mt19937_64& rng,
                                std::size_t extra = 2, int level = 0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GraphSample g;
  g.level = level;
  g.coords = Array2<double>(n, 2);
  for (auto& v : g.coords.data) v = 0.5 * (u(rng) + 1.0);
  g.node_attrs = Array2<double>(n, d_node);
  for (auto& v : g.node_attrs.data) v = u(rng);
  g.targets = Array2<double>(n, 2);
  for (auto& v : g.targets.data) v = u(rng);
  std::vector<std::pair<int, int>> und;
  for (std::size_t i = 0; i + 1 < n; ++i) und.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
  if (n > 2) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    for (std::size_t t = 0; t < extra; ++t) {
      int a = pick(rng), b = pick(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (b == a + 1) continue;
      bool dup = false;
      for (auto [x, y] : und) dup = dup || (x == a && y == b);
      if (!dup) und.emplace_back(a, b);
    }
  }
  build_edges(g, und);
  return g;
}

/// Levels finest first with the given node counts and k-NN maps.
inline MultiFidelitySample random_sample(const std::vector<std::size_t>& counts, std::size_t d_node,
                                         std::mt19937_64& rng, std::size_t k = 2) {
  MultiFidelitySample s;
  s.id = "toy";
  for (std::size_t l = 0; l < counts.size(); ++l)
    s.levels.push_back(random_graph(counts[l], d_node, rng, 2, static_cast<int>(l)));
  build_maps(s, k);
  return s;
}

/// A tiny config: every width `w`, `blocks` GN blocks split at `c`.
inline ModelConfig tiny_config(std::size_t w, std::size_t blocks, std::size_t c, std::size_t n_levels,
                               std::size_t d_node = 3) {
  ModelConfig m;
  m.d_node_in = d_node;
  m.d_edge_in = 3;
  m.hidden = w;
  m.latent = w;
  m.block_hidden = w;
  m.n_gn_blocks = blocks;
  m.coupling_block_index = c;
  m.n_levels = n_levels;
  m.init_seed = 7;
  return m;
}

}  // namespace mfunet::testing
