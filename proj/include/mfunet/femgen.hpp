#pragma once

// Cantilever-beam data generation: random beam specs, perturbed structured
// triangulations, and plane-strain P1 finite element solutions.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfunet/error.hpp"
#include "mfunet/random.hpp"

namespace mfunet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

enum class FixedSide : std::uint8_t { Left = 0, Right = 1 };
enum class LoadKind : std::uint8_t { Point = 0, Distributed = 1 };
enum class BeamEdge : std::uint8_t { Bottom = 0, Right = 1, Top = 2, Left = 3 };

inline const char* to_string(FixedSide s) { return s == FixedSide::Left ? "left" : "right"; }
inline const char* to_string(LoadKind k) { return k == LoadKind::Point ? "point" : "distributed"; }
inline const char* to_string(BeamEdge e) {
  switch (e) {
    case BeamEdge::Bottom: return "bottom";
    case BeamEdge::Right: return "right";
    case BeamEdge::Top: return "top";
    case BeamEdge::Left: return "left";
  }
  return "?";
}

/// One cantilever problem: an L x H rectangle [0,L]x[0,H] clamped on one
/// vertical side and loaded on one of the three free sides.
struct BeamSpec {
  double length = 10.0;
  double height = 5.0;
  FixedSide fixed_side = FixedSide::Left;
  LoadKind load_kind = LoadKind::Point;
  BeamEdge load_edge = BeamEdge::Right;
  Vec2 load_start;  // point loads: start == end
  Vec2 load_end;
  Vec2 load_direction{0.0, -1.0};
  double load_total = 1e6;
  std::uint64_t seed = 0;

  BeamEdge fixed_edge() const {
    return fixed_side == FixedSide::Left ? BeamEdge::Left : BeamEdge::Right;
  }
};

struct BeamSampling {
  double length_min = 6.0;
  double length_max = 15.0;
  double height_min = 3.0;
  double height_max = 9.0;
  double load_total = 1e6;
};

namespace detail {

inline Vec2 edge_point(const BeamSpec& s, BeamEdge e, double t) {
  switch (e) {
    case BeamEdge::Bottom: return {t * s.length, 0.0};
    case BeamEdge::Top: return {t * s.length, s.height};
    case BeamEdge::Left: return {0.0, t * s.height};
    case BeamEdge::Right: return {s.length, t * s.height};
  }
  return {};
}

}  // namespace detail

/// Draws a spec from `sampling`; a pure function of `seed`.
inline BeamSpec sample_spec(std::uint64_t seed, const BeamSampling& sampling = {}) {
  Rng rng(derive_seed(seed, 0x5bec));
  BeamSpec s;
  s.seed = seed;
  s.length = uniform(rng, sampling.length_min, sampling.length_max);
  s.height = uniform(rng, sampling.height_min, sampling.height_max);
  s.fixed_side = uniform_index(rng, 2) == 0 ? FixedSide::Left : FixedSide::Right;
  s.load_kind = uniform_index(rng, 2) == 0 ? LoadKind::Point : LoadKind::Distributed;
  const BeamEdge free_end = s.fixed_side == FixedSide::Left ? BeamEdge::Right : BeamEdge::Left;
  const BeamEdge candidates[3] = {BeamEdge::Bottom, BeamEdge::Top, free_end};
  s.load_edge = candidates[uniform_index(rng, 3)];
  if (s.load_kind == LoadKind::Point) {
    s.load_start = s.load_end = detail::edge_point(s, s.load_edge, uniform01(rng));
  } else {
    s.load_start = detail::edge_point(s, s.load_edge, 0.0);
    s.load_end = detail::edge_point(s, s.load_edge, 1.0);
  }
  constexpr double two_pi = 6.283185307179586476925;
  const double angle = two_pi * uniform01(rng);
  s.load_direction = {std::cos(angle), std::sin(angle)};
  s.load_total = sampling.load_total;
  return s;
}

// ---------------------------------------------------------------------------
// Meshing

enum class NodeTag : std::uint8_t { Interior = 0, Fixed = 1, FreeBoundary = 2, Loaded = 3 };

struct TriMesh {
  std::vector<Vec2> nodes;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
  std::vector<NodeTag> tags;
  /// Nodes carrying the external load, ordered along the loaded edge. For
  /// distributed loads this includes a fixed corner when the edge touches one.
  std::vector<int> load_nodes;
  std::size_t nx = 0;  // cells along x
  std::size_t ny = 0;  // cells along y

  std::size_t size() const { return nodes.size(); }
};

inline double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

inline double min_triangle_area(const TriMesh& m) {
  double mn = std::numeric_limits<double>::infinity();
  for (const auto& t : m.triangles)
    mn = std::min(mn, signed_area(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]));
  return mn;
}

/// Lattice nodes (i, j) -> j*(nx+1) + i; each cell split along alternating
/// diagonals. No tags beyond Interior/FreeBoundary are assigned.
inline TriMesh structured_rectangle(double length, double height, std::size_t nx, std::size_t ny) {
  if (nx < 1 || ny < 1) throw MeshError("structured_rectangle: need at least one cell per axis");
  TriMesh m;
  m.nx = nx;
  m.ny = ny;
  const std::size_t cols = nx + 1;
  m.nodes.reserve(cols * (ny + 1));
  for (std::size_t j = 0; j <= ny; ++j)
    for (std::size_t i = 0; i <= nx; ++i)
      m.nodes.push_back({length * static_cast<double>(i) / static_cast<double>(nx),
                         height * static_cast<double>(j) / static_cast<double>(ny)});
  m.tags.assign(m.nodes.size(), NodeTag::Interior);
  for (std::size_t j = 0; j <= ny; ++j)
    for (std::size_t i = 0; i <= nx; ++i)
      if (i == 0 || j == 0 || i == nx || j == ny) m.tags[j * cols + i] = NodeTag::FreeBoundary;
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const int a = static_cast<int>(j * cols + i), b = a + 1;
      const int d = static_cast<int>((j + 1) * cols + i), c = d + 1;
      if ((i + j) % 2 == 0) {
        m.triangles.push_back({a, b, c});
        m.triangles.push_back({a, c, d});
      } else {
        m.triangles.push_back({a, b, d});
        m.triangles.push_back({b, c, d});
      }
    }
  }
  return m;
}

/// Cell counts (nx, ny) whose node count (nx+1)(ny+1) is closest to
/// `target_nodes` while keeping cells as square as possible.
inline std::pair<std::size_t, std::size_t> grid_for_target(double length, double height,
                                                           std::size_t target_nodes) {
  std::size_t best_nx = 1, best_ny = 1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t ny = 1; ny + 1 <= target_nodes; ++ny) {
    for (std::size_t nx = 1; (nx + 1) * (ny + 1) <= 2 * target_nodes; ++nx) {
      const double count = static_cast<double>((nx + 1) * (ny + 1));
      const double rel = std::abs(count / static_cast<double>(target_nodes) - 1.0);
      const double aspect = std::abs(std::log((length / static_cast<double>(nx)) /
                                              (height / static_cast<double>(ny))));
      // count error dominates once it leaves the 5% band
      const double cost = (rel > 0.05 ? 10.0 * rel : 0.0) + aspect + rel;
      if (cost < best_cost) {
        best_cost = cost;
        best_nx = nx;
        best_ny = ny;
      }
    }
  }
  return {best_nx, best_ny};
}

enum class NoiseMode : std::uint8_t { Absolute = 0, RelativeToEdge = 1 };

struct MeshOptions {
  std::size_t target_nodes = 200;
  double noise_amp = 0.1;
  NoiseMode noise_mode = NoiseMode::Absolute;
  int max_retries = 32;
};

namespace detail {

inline bool on_edge(std::size_t i, std::size_t j, std::size_t nx, std::size_t ny, BeamEdge e) {
  switch (e) {
    case BeamEdge::Bottom: return j == 0;
    case BeamEdge::Top: return j == ny;
    case BeamEdge::Left: return i == 0;
    case BeamEdge::Right: return i == nx;
  }
  return false;
}

inline bool edge_is_horizontal(BeamEdge e) { return e == BeamEdge::Bottom || e == BeamEdge::Top; }

}  // namespace detail

/// Triangulates the beam near `target_nodes` nodes and perturbs it with
/// bounded uniform noise. Corners never move; fixed and loaded nodes move only
/// along their edge. The noise stream is a pure function of (spec.seed,
/// target_nodes).
inline TriMesh mesh_beam(const BeamSpec& spec, const MeshOptions& opts) {
  if (opts.target_nodes < 12) throw MeshError("mesh_beam: target_nodes must be >= 12");
  const auto [nx, ny] = grid_for_target(spec.length, spec.height, opts.target_nodes);
  TriMesh m = structured_rectangle(spec.length, spec.height, nx, ny);
  const std::size_t cols = nx + 1;
  const double hx = spec.length / static_cast<double>(nx);
  const double hy = spec.height / static_cast<double>(ny);
  const double min_edge = std::min(hx, hy);
  const double amp =
      opts.noise_mode == NoiseMode::Absolute ? opts.noise_amp : opts.noise_amp * min_edge;
  if (amp < 0.0 || amp >= 0.5 * min_edge)
    throw MeshError("mesh_beam: noise amplitude " + std::to_string(amp) +
                    " must be in [0, half the minimum edge length " + std::to_string(0.5 * min_edge) +
                    ")");

  const BeamEdge fixed = spec.fixed_edge();
  for (std::size_t j = 0; j <= ny; ++j)
    for (std::size_t i = 0; i <= nx; ++i)
      if (detail::on_edge(i, j, nx, ny, fixed)) m.tags[j * cols + i] = NodeTag::Fixed;

  // loaded nodes, ordered along the edge
  std::vector<int> edge_nodes;
  for (std::size_t j = 0; j <= ny; ++j)
    for (std::size_t i = 0; i <= nx; ++i)
      if (detail::on_edge(i, j, nx, ny, spec.load_edge)) edge_nodes.push_back(static_cast<int>(j * cols + i));
  if (spec.load_kind == LoadKind::Point) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int n : edge_nodes) {
      if (m.tags[n] == NodeTag::Fixed) continue;
      const double dx = m.nodes[n].x - spec.load_start.x, dy = m.nodes[n].y - spec.load_start.y;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    if (best < 0) throw MeshError("mesh_beam: no admissible node for the point load");
    m.load_nodes = {best};
  } else {
    m.load_nodes = edge_nodes;
  }
  for (int n : m.load_nodes)
    if (m.tags[n] != NodeTag::Fixed) m.tags[n] = NodeTag::Loaded;

  if (amp == 0.0) return m;

  const std::vector<Vec2> lattice = m.nodes;
  Rng rng(derive_seed(spec.seed, 0x4e015e, opts.target_nodes));
  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    for (std::size_t j = 0; j <= ny; ++j) {
      for (std::size_t i = 0; i <= nx; ++i) {
        const std::size_t n = j * cols + i;
        const double dx = uniform(rng, -amp, amp);
        const double dy = uniform(rng, -amp, amp);
        const bool corner = (i == 0 || i == nx) && (j == 0 || j == ny);
        Vec2 p = lattice[n];
        if (corner) {
          // corners stay put
        } else if (m.tags[n] == NodeTag::Fixed) {
          p.y += dy;  // fixed edges are vertical
        } else if (m.tags[n] == NodeTag::Loaded) {
          if (detail::edge_is_horizontal(spec.load_edge))
            p.x += dx;
          else
            p.y += dy;
        } else {
          p.x += dx;
          p.y += dy;
        }
        m.nodes[n] = p;
      }
    }
    if (min_triangle_area(m) > 0.0) return m;
  }
  throw MeshError("mesh_beam: noise inverted a triangle after " +
                  std::to_string(opts.max_retries + 1) + " attempts");
}

// ---------------------------------------------------------------------------
// Plane-strain P1 finite elements

struct Material {
  double youngs_modulus = 200e9;
  double poisson_ratio = 0.3;

  void validate() const {
    if (!(youngs_modulus > 0.0)) throw ConfigError("material: E must be > 0");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
      throw ConfigError("material: Poisson ratio must be in [0, 0.5)");
  }
};

struct FemSolution {
  std::vector<Vec2> displacement;
};

struct DirichletBc {
  int dof;  // 2*node + component
  double value;
};

namespace detail {

using Mat6 = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d plane_strain_d(const Material& mat) {
  const double e = mat.youngs_modulus, nu = mat.poisson_ratio;
  const double f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
  Eigen::Matrix3d d;
  d << 1.0 - nu, nu, 0.0,  //
      nu, 1.0 - nu, 0.0,   //
      0.0, 0.0, 0.5 - nu;
  return f * d;
}

/// Exact constant-strain triangle stiffness (unit thickness).
inline Mat6 element_stiffness(const Vec2& p1, const Vec2& p2, const Vec2& p3,
                              const Eigen::Matrix3d& d) {
  const double area = signed_area(p1, p2, p3);
  if (!(area > 0.0)) throw MeshError("element with non-positive area");
  const double b1 = p2.y - p3.y, b2 = p3.y - p1.y, b3 = p1.y - p2.y;
  const double c1 = p3.x - p2.x, c2 = p1.x - p3.x, c3 = p2.x - p1.x;
  Eigen::Matrix<double, 3, 6> bm;
  bm << b1, 0, b2, 0, b3, 0,  //
      0, c1, 0, c2, 0, c3,    //
      c1, b1, c2, b2, c3, b3;
  bm /= 2.0 * area;
  return area * bm.transpose() * d * bm;
}

template <class Fn>
void for_each_element(const TriMesh& mesh, const Material& mat, Fn&& fn) {
  const auto d = plane_strain_d(mat);
  for (const auto& t : mesh.triangles) {
    const Mat6 ke = element_stiffness(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]], d);
    const int dofs[6] = {2 * t[0], 2 * t[0] + 1, 2 * t[1], 2 * t[1] + 1, 2 * t[2], 2 * t[2] + 1};
    fn(ke, dofs);
  }
}

}  // namespace detail

/// K*u assembled element by element; at constrained dofs this minus the
/// external load gives the reaction.
inline std::vector<double> internal_forces(const TriMesh& mesh, const Material& mat,
                                           std::span<const double> u) {
  std::vector<double> f(2 * mesh.size(), 0.0);
  detail::for_each_element(mesh, mat, [&](const detail::Mat6& ke, const int* dofs) {
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) f[dofs[a]] += ke(a, b) * u[dofs[b]];
  });
  return f;
}

/// Solves K u = f with Dirichlet dofs eliminated symmetrically. Returns the
/// full 2n displacement vector.
inline std::vector<double> solve_plane_strain(const TriMesh& mesh, const Material& mat,
                                              std::span<const DirichletBc> bcs,
                                              std::span<const double> forces) {
  mat.validate();
  const std::size_t ndof = 2 * mesh.size();
  if (forces.size() != ndof) throw SolverError("force vector length does not match mesh");
  std::vector<double> u(ndof, 0.0);
  std::vector<char> constrained(ndof, 0);
  for (const auto& bc : bcs) {
    if (bc.dof < 0 || static_cast<std::size_t>(bc.dof) >= ndof)
      throw SolverError("Dirichlet dof out of range");
    constrained[bc.dof] = 1;
    u[bc.dof] = bc.value;
  }
  std::vector<int> map(ndof);  // free index, or -1 when constrained
  int n_free = 0;
  for (std::size_t i = 0; i < ndof; ++i) map[i] = constrained[i] ? -1 : n_free++;
  if (n_free == 0) return u;

  Eigen::VectorXd rhs(n_free);
  for (std::size_t i = 0; i < ndof; ++i)
    if (map[i] >= 0) rhs[map[i]] = forces[i];
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.triangles.size() * 36);
  detail::for_each_element(mesh, mat, [&](const detail::Mat6& ke, const int* dofs) {
    for (int a = 0; a < 6; ++a) {
      const int ra = map[dofs[a]];
      if (ra < 0) continue;
      for (int b = 0; b < 6; ++b) {
        const int cb = map[dofs[b]];
        if (cb >= 0)
          trip.emplace_back(ra, cb, ke(a, b));
        else
          rhs[ra] -= ke(a, b) * u[dofs[b]];
      }
    }
  });
  Eigen::SparseMatrix<double> k(n_free, n_free);
  k.setFromTriplets(trip.begin(), trip.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(k);
  if (ldlt.info() != Eigen::Success) throw SolverError("stiffness factorization failed");
  const auto dvec = ldlt.vectorD();
  const double dmax = dvec.cwiseAbs().maxCoeff();
  const double dmin = dvec.minCoeff();
  if (!(dmin > 1e-12 * dmax))
    throw SolverError("singular stiffness matrix (insufficient constraints)");
  Eigen::VectorXd x = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !x.allFinite())
    throw SolverError("stiffness solve did not produce a finite solution");
  const double res = (k * x - rhs).norm();
  if (res > 1e-8 * std::max(rhs.norm(), 1e-300))
    throw SolverError("stiffness solve is ill-conditioned (residual " + std::to_string(res) + ")");
  for (std::size_t i = 0; i < ndof; ++i)
    if (map[i] >= 0) u[i] = x[map[i]];
  return u;
}

/// External nodal forces (2n) for the beam's load on this mesh. Distributed
/// loads are lumped per boundary segment (half to each end), normalized so the
/// total equals load_total exactly up to rounding.
inline std::vector<double> beam_nodal_forces(const TriMesh& mesh, const BeamSpec& spec) {
  std::vector<double> f(2 * mesh.size(), 0.0);
  const auto& ln = mesh.load_nodes;
  if (ln.empty()) throw MeshError("mesh has no load nodes");
  if (spec.load_kind == LoadKind::Point || ln.size() == 1) {
    f[2 * ln[0]] += spec.load_total * spec.load_direction.x;
    f[2 * ln[0] + 1] += spec.load_total * spec.load_direction.y;
    return f;
  }
  std::vector<double> share(ln.size(), 0.0);
  double total_len = 0.0;
  for (std::size_t s = 0; s + 1 < ln.size(); ++s) {
    const Vec2& a = mesh.nodes[ln[s]];
    const Vec2& b = mesh.nodes[ln[s + 1]];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    share[s] += 0.5 * len;
    share[s + 1] += 0.5 * len;
    total_len += len;
  }
  for (std::size_t s = 0; s < ln.size(); ++s) {
    const double w = spec.load_total * share[s] / total_len;
    f[2 * ln[s]] += w * spec.load_direction.x;
    f[2 * ln[s] + 1] += w * spec.load_direction.y;
  }
  return f;
}

inline std::vector<DirichletBc> clamp_fixed_nodes(const TriMesh& mesh) {
  std::vector<DirichletBc> bcs;
  for (std::size_t n = 0; n < mesh.size(); ++n)
    if (mesh.tags[n] == NodeTag::Fixed) {
      bcs.push_back({static_cast<int>(2 * n), 0.0});
      bcs.push_back({static_cast<int>(2 * n + 1), 0.0});
    }
  return bcs;
}

inline FemSolution solve_elasticity(const TriMesh& mesh, const Material& mat, const BeamSpec& spec) {
  const auto bcs = clamp_fixed_nodes(mesh);
  if (bcs.size() < 4) throw SolverError("fixed edge must contain at least two nodes");
  const auto forces = beam_nodal_forces(mesh, spec);
  const auto u = solve_plane_strain(mesh, mat, bcs, forces);
  FemSolution sol;
  sol.displacement.resize(mesh.size());
  for (std::size_t n = 0; n < mesh.size(); ++n) sol.displacement[n] = {u[2 * n], u[2 * n + 1]};
  return sol;
}

}  // namespace mfunet
