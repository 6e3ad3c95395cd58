#pragma once

// k-nearest-neighbor maps between adjacent fidelity levels and the coupling
// operators that move node latents along them.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfunet/error.hpp"
#include "mfunet/graph.hpp"
#include "mfunet/tensor.hpp"

namespace mfunet {

/// For each coarse node, the k nearest fine nodes by Euclidean distance,
/// nearest first, ties broken by the lower fine index.
struct KnnMap {
  std::size_t k = 0;
  std::size_t n_coarse = 0;
  std::size_t n_fine = 0;
  std::vector<int> index;        // [n_coarse * k]
  std::vector<double> distance;  // [n_coarse * k]

  std::span<const int> neighbors(std::size_t c) const { return {index.data() + c * k, k}; }

  friend bool operator==(const KnnMap&, const KnnMap&) = default;
};

/// Exact k-NN of every coarse point among the fine points. Points are rows of
/// [n x dim] coordinate arrays. Candidates are ordered by squared distance,
/// then index.
inline KnnMap build_knn_map(const Array2<double>& coarse, const Array2<double>& fine, std::size_t k) {
  if (k == 0) throw ShapeError("build_knn_map: k must be positive");
  if (k > fine.rows)
    throw ShapeError("build_knn_map: k = " + std::to_string(k) + " exceeds fine node count " +
                     std::to_string(fine.rows));
  if (coarse.cols != fine.cols) throw ShapeError("build_knn_map: coordinate dimensions differ");
  const std::size_t dim = coarse.cols;
  KnnMap map;
  map.k = k;
  map.n_coarse = coarse.rows;
  map.n_fine = fine.rows;
  map.index.resize(coarse.rows * k);
  map.distance.resize(coarse.rows * k);

  std::vector<std::pair<double, int>> cand(fine.rows);
  for (std::size_t c = 0; c < coarse.rows; ++c) {
    for (std::size_t f = 0; f < fine.rows; ++f) {
      double d2 = 0.0;
      for (std::size_t a = 0; a < dim; ++a) {
        const double diff = fine(f, a) - coarse(c, a);
        d2 += diff * diff;
      }
      cand[f] = {d2, static_cast<int>(f)};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) {
      map.index[c * k + j] = cand[j].second;
      map.distance[c * k + j] = std::sqrt(cand[j].first);
    }
  }
  return map;
}

/// How a fine node reached by several coarse nodes combines them.
enum class UpsampleReduce { Sum, Mean };

namespace detail {

inline void check_map(const KnnMap& map, std::size_t n_coarse, std::size_t n_fine, const char* op) {
  if (map.n_coarse != n_coarse || map.n_fine != n_fine)
    throw ShapeError(std::string(op) + ": map is for " + std::to_string(map.n_coarse) + " -> " +
                     std::to_string(map.n_fine) + " nodes, latents have " + std::to_string(n_coarse) +
                     " -> " + std::to_string(n_fine));
  if (map.index.size() != map.n_coarse * map.k)
    throw ShapeError(std::string(op) + ": malformed map");
}

inline std::vector<int> repeat_each(std::size_t n, std::size_t k) {
  std::vector<int> out(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = static_cast<int>(i);
  return out;
}

}  // namespace detail

/// The coarse-to-fine transfer S_up(coarse): every coarse row is added into
/// each of its k mapped fine rows.
inline Tensor upsample(Tape& tape, const Tensor& coarse, const KnnMap& map,
                       UpsampleReduce reduce = UpsampleReduce::Sum) {
  detail::require_rank2(coarse, "upsample");
  detail::check_map(map, coarse.rows(), map.n_fine, "upsample");
  const auto src = detail::repeat_each(map.n_coarse, map.k);
  const Tensor rows = gather_rows(tape, coarse, src);
  return reduce == UpsampleReduce::Sum ? scatter_sum(tape, rows, map.index, map.n_fine)
                                       : scatter_mean(tape, rows, map.index, map.n_fine);
}

/// The fine-to-coarse transfer M_down(fine): each coarse row is the mean of
/// its k mapped fine rows.
inline Tensor downsample(Tape& tape, const Tensor& fine, const KnnMap& map) {
  detail::require_rank2(fine, "downsample");
  detail::check_map(map, map.n_coarse, fine.rows(), "downsample");
  const Tensor rows = gather_rows(tape, fine, map.index);
  return scatter_mean(tape, rows, detail::repeat_each(map.n_coarse, map.k), map.n_coarse);
}

/// fine + beta * S_up(coarse).
inline Tensor upsample_add(Tape& tape, const Tensor& coarse, const Tensor& fine, const KnnMap& map,
                           const Tensor& beta, UpsampleReduce reduce = UpsampleReduce::Sum) {
  detail::require_rank2(fine, "upsample_add");
  detail::check_map(map, coarse.rows(), fine.rows(), "upsample_add");
  if (coarse.cols() != fine.cols())
    throw ShapeError("upsample_add: latent widths differ (" + std::to_string(coarse.cols()) +
                     " vs " + std::to_string(fine.cols()) + ")");
  return add(tape, fine, scale(tape, upsample(tape, coarse, map, reduce), beta));
}

/// coarse + beta * M_down(fine).
inline Tensor downsample_add(Tape& tape, const Tensor& fine, const Tensor& coarse, const KnnMap& map,
                             const Tensor& beta) {
  detail::require_rank2(coarse, "downsample_add");
  detail::check_map(map, coarse.rows(), fine.rows(), "downsample_add");
  if (coarse.cols() != fine.cols())
    throw ShapeError("downsample_add: latent widths differ (" + std::to_string(coarse.cols()) +
                     " vs " + std::to_string(fine.cols()) + ")");
  return add(tape, coarse, scale(tape, downsample(tape, fine, map), beta));
}

/// Graphs of one physical problem at several resolutions, finest first
/// (levels[0] is the highest resolution). maps[l] links coarse level l+1 to
/// fine level l.
struct MultiFidelitySample {
  std::string id;
  std::vector<GraphSample> levels;
  std::vector<KnnMap> maps;

  std::size_t n_levels() const { return levels.size(); }

  void validate() const {
    if (levels.empty()) throw ShapeError("multi-fidelity sample has no levels");
    if (maps.size() + 1 != levels.size())
      throw ShapeError("multi-fidelity sample " + id + ": " + std::to_string(levels.size()) +
                       " levels need " + std::to_string(levels.size() - 1) + " k-NN maps, found " +
                       std::to_string(maps.size()));
    for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
      if (levels[l].n_nodes() <= levels[l + 1].n_nodes())
        throw ShapeError("multi-fidelity sample " + id + ": levels must be ordered finest first");
      if (maps[l].n_fine != levels[l].n_nodes() || maps[l].n_coarse != levels[l + 1].n_nodes())
        throw ShapeError("multi-fidelity sample " + id + ": k-NN map " + std::to_string(l) +
                         " does not match its levels");
    }
  }
};

/// Builds the maps of `s` from its level coordinates.
inline void build_maps(MultiFidelitySample& s, std::size_t k) {
  s.maps.clear();
  for (std::size_t l = 0; l + 1 < s.levels.size(); ++l)
    s.maps.push_back(build_knn_map(s.levels[l + 1].coords, s.levels[l].coords, k));
}

}  // namespace mfunet
