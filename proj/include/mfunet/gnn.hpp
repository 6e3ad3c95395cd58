#pragma once

// Encoder / GN-block processor / decoder shared by every model variant.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfunet/crosslevel.hpp"
#include "mfunet/error.hpp"
#include "mfunet/graph.hpp"
#include "mfunet/random.hpp"
#include "mfunet/tensor.hpp"

namespace mfunet {

struct ModelConfig {
  std::size_t d_node_in = 11;
  std::size_t d_edge_in = 3;
  std::size_t hidden = 64;         // encoder / decoder hidden width
  std::size_t latent = 128;
  std::size_t block_hidden = 128;  // hidden width of the four block MLPs
  std::size_t d_out = 2;
  std::size_t n_gn_blocks = 10;
  std::size_t coupling_block_index = 5;  // blocks before the coupling junction
  std::size_t n_levels = 1;
  UpsampleReduce upsample_reduce = UpsampleReduce::Sum;
  double coupling_init = 0.5;
  double init_gain = 1.0;  // weight std = gain / sqrt(fan_in)
  std::uint64_t init_seed = 0;

  void validate() const {
    if (d_node_in == 0 || d_edge_in == 0 || d_out == 0) throw ConfigError("model: feature widths must be positive");
    if (hidden == 0 || latent == 0 || block_hidden == 0) throw ConfigError("model: hidden and latent widths must be positive");
    if (n_gn_blocks < 1) throw ConfigError("model: n_gn_blocks must be >= 1");
    if (n_gn_blocks > 1 && (coupling_block_index == 0 || coupling_block_index >= n_gn_blocks))
      throw ConfigError("model: coupling_block_index must lie in (0, n_gn_blocks)");
    if (n_levels < 1 || n_levels > 4) throw ConfigError("model: n_levels must be in [1, 4]");
    if (!(init_gain > 0.0)) throw ConfigError("model: init_gain must be > 0");
  }
};

/// Two-layer perceptron: linear -> ReLU -> linear.
struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp make(std::size_t in, std::size_t hidden, std::size_t out) {
    return {Tensor::zeros({in, hidden}, true), Tensor::zeros({hidden}, true),
            Tensor::zeros({hidden, out}, true), Tensor::zeros({out}, true)};
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return linear(tape, relu(tape, linear(tape, x, w1, b1)), w2, b2);
  }

  /// Same, with the first layer fed by concat(x[recv], x[send], e) per edge.
  Tensor forward_edges(Tape& tape, const Tensor& nodes, const Tensor& edges,
                       std::span<const int> recv, std::span<const int> send) const {
    return linear(tape, relu(tape, edge_linear(tape, nodes, edges, recv, send, w1, b1)), w2, b2);
  }

  std::size_t in() const { return w1.shape()[0]; }
  std::size_t out() const { return w2.shape()[1]; }
};

/// The four MLPs of one GN block: chi (edge update), phi (message), gamma
/// (aggregation update) and beta (residual node update).
struct GnBlockParams {
  Mlp chi, phi, gamma, beta;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Every learnable parameter. Encoders, blocks and decoder are shared by all
/// fidelity levels; each coupling junction between adjacent levels owns one
/// upward and one downward scalar.
struct ModelState {
  ModelConfig config;
  Mlp node_encoder, edge_encoder, decoder;
  std::vector<GnBlockParams> blocks;
  std::vector<Tensor> beta_up;    // junction j couples level j+1 into level j
  std::vector<Tensor> beta_down;  // junction j couples level j into level j+1

  static ModelState create(const ModelConfig& c) {
    c.validate();
    ModelState s;
    s.config = c;
    const std::size_t L = c.latent, H = c.block_hidden;
    s.node_encoder = Mlp::make(c.d_node_in, c.hidden, L);
    s.edge_encoder = Mlp::make(c.d_edge_in, c.hidden, L);
    s.decoder = Mlp::make(L, c.hidden, c.d_out);
    for (std::size_t b = 0; b < c.n_gn_blocks; ++b)
      s.blocks.push_back({Mlp::make(3 * L, H, L), Mlp::make(3 * L, H, L), Mlp::make(2 * L, H, L),
                          Mlp::make(L, H, L)});
    for (std::size_t j = 0; j + 1 < c.n_levels; ++j) {
      s.beta_up.push_back(Tensor::scalar(c.coupling_init, true));
      s.beta_down.push_back(Tensor::scalar(c.coupling_init, true));
    }
    s.initialize();
    return s;
  }

  /// Fan-in scaled uniform weights (std gain/sqrt(fan_in)), biases uniform
  /// in +-1/sqrt(fan_in). One seeded stream per layer.
  void initialize() {
    std::uint64_t ordinal = 0;
    auto layer = [&](Tensor& w, Tensor& b) {
      const double fan_in = static_cast<double>(w.shape()[0]);
      const double wb = config.init_gain * std::sqrt(3.0 / fan_in), bb = 1.0 / std::sqrt(fan_in);
      Rng rng(derive_seed(config.init_seed, 0x1417, ordinal++));
      for (auto& v : w.mutable_data()) v = uniform(rng, -wb, wb);
      for (auto& v : b.mutable_data()) v = uniform(rng, -bb, bb);
    };
    for_each_mlp([&](const std::string&, Mlp& m) {
      layer(m.w1, m.b1);
      layer(m.w2, m.b2);
    });
    for (auto& t : beta_up) t.mutable_data()[0] = config.coupling_init;
    for (auto& t : beta_down) t.mutable_data()[0] = config.coupling_init;
  }

  void for_each_mlp(const std::function<void(const std::string&, Mlp&)>& fn) {
    fn("node_encoder", node_encoder);
    fn("edge_encoder", edge_encoder);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      fn(p + "chi", blocks[b].chi);
      fn(p + "phi", blocks[b].phi);
      fn(p + "gamma", blocks[b].gamma);
      fn(p + "beta", blocks[b].beta);
    }
    fn("decoder", decoder);
  }

  /// Shared parameters in a fixed order, then the coupling scalars.
  std::vector<NamedTensor> named_parameters() const {
    std::vector<NamedTensor> out = shared_parameters();
    auto c = coupling_parameters();
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  std::vector<NamedTensor> shared_parameters() const {
    std::vector<NamedTensor> out;
    const_cast<ModelState*>(this)->for_each_mlp([&](const std::string& name, Mlp& m) {
      out.push_back({name + ".w1", m.w1});
      out.push_back({name + ".b1", m.b1});
      out.push_back({name + ".w2", m.w2});
      out.push_back({name + ".b2", m.b2});
    });
    return out;
  }

  std::vector<NamedTensor> coupling_parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t j = 0; j < beta_up.size(); ++j) out.push_back({"beta_up" + std::to_string(j), beta_up[j]});
    for (std::size_t j = 0; j < beta_down.size(); ++j)
      out.push_back({"beta_down" + std::to_string(j), beta_down[j]});
    return out;
  }

  std::size_t shared_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : shared_parameters()) n += p.tensor.numel();
    return n;
  }
  std::size_t coupling_parameter_count() const { return beta_up.size() + beta_down.size(); }

  /// Deep copy with independent storage.
  ModelState clone() const {
    ModelState s = *this;
    s.for_each_mlp([](const std::string&, Mlp& m) {
      m.w1 = m.w1.clone(true);
      m.b1 = m.b1.clone(true);
      m.w2 = m.w2.clone(true);
      m.b2 = m.b2.clone(true);
    });
    for (auto& t : s.beta_up) t = t.clone(true);
    for (auto& t : s.beta_down) t = t.clone(true);
    return s;
  }

  void fill(double v) {
    for (auto& p : named_parameters()) {
      Tensor t = p.tensor;
      for (auto& x : t.mutable_data()) x = v;
    }
  }

  void zero_grad() {
    for (auto& p : named_parameters()) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
  }
};

// ---------------------------------------------------------------------------
// Forward pieces

/// A (normalized) graph as tensors. `edges` is undefined for edgeless graphs.
struct GraphInput {
  Tensor nodes;
  Tensor edges;
  Tensor targets;
  std::vector<int> receivers;
  std::vector<int> senders;
  std::size_t n_nodes = 0;

  std::size_t n_edges() const { return receivers.size(); }
};

inline GraphInput make_input(const GraphSample& g) {
  GraphInput in;
  in.n_nodes = g.n_nodes();
  if (in.n_nodes == 0) throw ShapeError("graph has no nodes");
  in.nodes = Tensor::matrix(g.node_attrs.rows, g.node_attrs.cols, g.node_attrs.data);
  if (g.n_edges() > 0) in.edges = Tensor::matrix(g.edge_attrs.rows, g.edge_attrs.cols, g.edge_attrs.data);
  if (g.targets.rows > 0) in.targets = Tensor::matrix(g.targets.rows, g.targets.cols, g.targets.data);
  in.receivers = g.receivers();
  in.senders = g.senders();
  return in;
}

struct Latents {
  Tensor nodes;
  Tensor edges;  // undefined for edgeless graphs
};

inline Latents encode(Tape& tape, const ModelState& s, const GraphInput& in) {
  if (in.nodes.cols() != s.config.d_node_in)
    throw ShapeError("encode: node attribute width " + std::to_string(in.nodes.cols()) +
                     " does not match the model (" + std::to_string(s.config.d_node_in) + ")");
  Latents z;
  z.nodes = s.node_encoder.forward(tape, in.nodes);
  if (in.edges.defined()) {
    if (in.edges.cols() != s.config.d_edge_in)
      throw ShapeError("encode: edge attribute width " + std::to_string(in.edges.cols()) +
                       " does not match the model (" + std::to_string(s.config.d_edge_in) + ")");
    z.edges = s.edge_encoder.forward(tape, in.edges);
  }
  return z;
}

/// One message-passing step:
///   e_ij <- chi(n_i | n_j | e_ij)
///   m_ij  = phi(n_i | n_j | e_ij)            (with the updated e_ij)
///   n_i  <- gamma(n_i | mean_j m_ij)
///   n_i  <- n_i + beta(n_i)
/// Edge rows are (i = receiver, j = sender).
inline Latents gn_block(Tape& tape, const GnBlockParams& p, const Latents& z, const GraphInput& in) {
  const std::size_t n = z.nodes.rows();
  Latents out;
  Tensor agg;
  if (in.n_edges() > 0) {
    out.edges = p.chi.forward_edges(tape, z.nodes, z.edges, in.receivers, in.senders);
    const Tensor msg = p.phi.forward_edges(tape, z.nodes, out.edges, in.receivers, in.senders);
    agg = scatter_mean(tape, msg, in.receivers, n);
  } else {
    agg = Tensor::zeros({n, p.phi.out()});
  }
  const Tensor parts[] = {z.nodes, agg};
  const Tensor h = p.gamma.forward(tape, concat_cols(tape, parts));
  out.nodes = add(tape, h, p.beta.forward(tape, h));
  return out;
}

/// Applies blocks [begin, end).
inline Latents run_blocks(Tape& tape, const ModelState& s, Latents z, const GraphInput& in,
                          std::size_t begin, std::size_t end) {
  for (std::size_t b = begin; b < end; ++b) z = gn_block(tape, s.blocks[b], z, in);
  return z;
}

inline Tensor decode(Tape& tape, const ModelState& s, const Tensor& node_latents) {
  if (node_latents.cols() != s.config.latent)
    throw ShapeError("decode: latent width " + std::to_string(node_latents.cols()) +
                     " does not match the model (" + std::to_string(s.config.latent) + ")");
  return s.decoder.forward(tape, node_latents);
}

inline Tensor forward_single_fidelity(Tape& tape, const ModelState& s, const GraphInput& in) {
  Latents z = encode(tape, s, in);
  z = run_blocks(tape, s, std::move(z), in, 0, s.config.n_gn_blocks);
  return decode(tape, s, z.nodes);
}

}  // namespace mfunet
