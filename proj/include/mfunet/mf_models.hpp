#pragma once

// Multi-fidelity forward passes over one shared ModelState, and the weighted
// multi-level loss. Levels are indexed finest first throughout.

#include <string>
#include <vector>

#include "mfunet/crosslevel.hpp"
#include "mfunet/error.hpp"
#include "mfunet/gnn.hpp"
#include "mfunet/tensor.hpp"

namespace mfunet {

enum class Variant { SingleFidelity, TransferLearning, MfUnet, MfUnetLite };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::SingleFidelity: return "single_fidelity";
    case Variant::TransferLearning: return "transfer_learning";
    case Variant::MfUnet: return "mf_unet";
    case Variant::MfUnetLite: return "mf_unet_lite";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::SingleFidelity, Variant::TransferLearning, Variant::MfUnet, Variant::MfUnetLite})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s +
                    "' (expected single_fidelity, transfer_learning, mf_unet or mf_unet_lite)");
}

inline bool is_multi_fidelity(Variant v) { return v == Variant::MfUnet || v == Variant::MfUnetLite; }

/// One multi-fidelity sample as tensors, finest first.
struct MultiLevelInput {
  std::vector<GraphInput> levels;
  std::vector<KnnMap> maps;  // maps[l]: level l+1 -> level l

  std::size_t n_levels() const { return levels.size(); }
};

/// Tensors for the first `n_levels` levels of `s` (all when 0).
inline MultiLevelInput make_input(const MultiFidelitySample& s, std::size_t n_levels = 0) {
  if (n_levels == 0) n_levels = s.n_levels();
  if (n_levels > s.n_levels())
    throw ShapeError("sample " + s.id + " has " + std::to_string(s.n_levels()) + " levels, " +
                     std::to_string(n_levels) + " requested");
  MultiLevelInput in;
  for (std::size_t l = 0; l < n_levels; ++l) in.levels.push_back(make_input(s.levels[l]));
  for (std::size_t l = 0; l + 1 < n_levels; ++l) in.maps.push_back(s.maps[l]);
  return in;
}

using MultiLevelPrediction = std::vector<Tensor>;  // finest first

namespace detail {

inline void check_levels(const ModelState& s, const MultiLevelInput& in, const char* op) {
  const std::size_t n = in.n_levels();
  if (n == 0) throw ShapeError(std::string(op) + ": no levels");
  if (in.maps.size() + 1 != n)
    throw ShapeError(std::string(op) + ": " + std::to_string(n) + " levels need " +
                     std::to_string(n - 1) + " k-NN maps, got " + std::to_string(in.maps.size()));
  if (s.beta_up.size() + 1 < n || s.beta_down.size() + 1 < n)
    throw ShapeError(std::string(op) + ": model has coupling scalars for " +
                     std::to_string(s.beta_up.size() + 1) + " levels, input has " + std::to_string(n));
}

}  // namespace detail

/// Bi-directional sweep. Downward: level 0 runs blocks [0, c); each coarser
/// level adds the mean of its k-NN images in the finer level's intermediate
/// latents (beta_down) and runs [0, c), except the coarsest, which runs every
/// block and is decoded. Upward: each finer level adds the coarser level's
/// final latents onto its stored intermediate (beta_up), runs [c, N) and is
/// decoded.
inline MultiLevelPrediction forward_mf_unet(Tape& tape, const ModelState& s, const MultiLevelInput& in) {
  detail::check_levels(s, in, "forward_mf_unet");
  const std::size_t n = in.n_levels();
  const std::size_t c = s.config.coupling_block_index, nb = s.config.n_gn_blocks;
  if (n == 1) return {forward_single_fidelity(tape, s, in.levels[0])};

  std::vector<Latents> inter(n), final_(n);
  MultiLevelPrediction pred(n);
  inter[0] = run_blocks(tape, s, encode(tape, s, in.levels[0]), in.levels[0], 0, c);
  for (std::size_t l = 1; l < n; ++l) {
    Latents z = encode(tape, s, in.levels[l]);
    z.nodes = downsample_add(tape, inter[l - 1].nodes, z.nodes, in.maps[l - 1], s.beta_down[l - 1]);
    if (l + 1 < n) {
      inter[l] = run_blocks(tape, s, std::move(z), in.levels[l], 0, c);
    } else {
      final_[l] = run_blocks(tape, s, std::move(z), in.levels[l], 0, nb);
      pred[l] = decode(tape, s, final_[l].nodes);
    }
  }
  for (std::size_t l = n - 1; l-- > 0;) {
    Latents z = inter[l];
    z.nodes = upsample_add(tape, final_[l + 1].nodes, z.nodes, in.maps[l], s.beta_up[l],
                           s.config.upsample_reduce);
    final_[l] = run_blocks(tape, s, std::move(z), in.levels[l], c, nb);
    pred[l] = decode(tape, s, final_[l].nodes);
  }
  return pred;
}

/// Uni-directional, coarse to fine. The coarsest level runs every block;
/// each finer level runs [0, c), adds the coarser level's final latents
/// (beta_up), runs [c, N) and is decoded.
inline MultiLevelPrediction forward_mf_unet_lite(Tape& tape, const ModelState& s,
                                                 const MultiLevelInput& in) {
  detail::check_levels(s, in, "forward_mf_unet_lite");
  const std::size_t n = in.n_levels();
  const std::size_t c = s.config.coupling_block_index, nb = s.config.n_gn_blocks;
  MultiLevelPrediction pred(n);
  Latents coarser = run_blocks(tape, s, encode(tape, s, in.levels[n - 1]), in.levels[n - 1], 0, nb);
  pred[n - 1] = decode(tape, s, coarser.nodes);
  for (std::size_t l = n - 1; l-- > 0;) {
    Latents z = run_blocks(tape, s, encode(tape, s, in.levels[l]), in.levels[l], 0, c);
    z.nodes = upsample_add(tape, coarser.nodes, z.nodes, in.maps[l], s.beta_up[l],
                           s.config.upsample_reduce);
    coarser = run_blocks(tape, s, std::move(z), in.levels[l], c, nb);
    pred[l] = decode(tape, s, coarser.nodes);
  }
  return pred;
}

/// One stage of the transfer-learning baseline: a plain single-fidelity
/// forward on whichever level that stage trains on.
inline Tensor forward_transfer_stage(Tape& tape, const ModelState& s, const GraphInput& in) {
  return forward_single_fidelity(tape, s, in);
}

/// Predictions of `variant`. Single-level variants predict the finest level only.
inline MultiLevelPrediction forward(Tape& tape, Variant variant, const ModelState& s,
                                    const MultiLevelInput& in) {
  switch (variant) {
    case Variant::MfUnet: return forward_mf_unet(tape, s, in);
    case Variant::MfUnetLite: return forward_mf_unet_lite(tape, s, in);
    case Variant::SingleFidelity:
    case Variant::TransferLearning: return {forward_single_fidelity(tape, s, in.levels.at(0))};
  }
  throw ConfigError("unknown variant");
}

/// Parameters the optimizer updates for `variant`. The Lite sweep never uses
/// the downward scalars, and single-level variants use no coupling at all.
inline std::vector<NamedTensor> optimizer_parameters(const ModelState& s, Variant variant) {
  std::vector<NamedTensor> out = s.shared_parameters();
  if (!is_multi_fidelity(variant)) return out;
  for (std::size_t j = 0; j < s.beta_up.size(); ++j) out.push_back({"beta_up" + std::to_string(j), s.beta_up[j]});
  if (variant == Variant::MfUnet)
    for (std::size_t j = 0; j < s.beta_down.size(); ++j)
      out.push_back({"beta_down" + std::to_string(j), s.beta_down[j]});
  return out;
}

// ---------------------------------------------------------------------------
// Loss

enum class LossMetric { Mse, RelativeL2 };

inline LossMetric parse_loss_metric(const std::string& s) {
  if (s == "mse") return LossMetric::Mse;
  if (s == "relative_l2") return LossMetric::RelativeL2;
  throw ConfigError("unknown loss metric '" + s + "' (expected mse or relative_l2)");
}

inline const char* to_string(LossMetric m) { return m == LossMetric::Mse ? "mse" : "relative_l2"; }

/// Per-level weights, highest resolution first.
inline std::vector<double> default_loss_weights(std::size_t n_levels) {
  switch (n_levels) {
    case 1: return {1.0};
    case 2: return {10.0, 1.0};
    case 3: return {10.0, 5.0, 1.0};
    case 4: return {10.0, 5.0, 2.0, 1.0};
  }
  throw ConfigError("no default loss weights for " + std::to_string(n_levels) + " levels");
}

struct MultiLevelLoss {
  Tensor total;
  std::vector<double> per_level;  // unweighted metric per level
};

/// sum_l lambda_l * metric(pred_l, target_l).
inline MultiLevelLoss multi_level_loss(Tape& tape, const MultiLevelPrediction& pred,
                                       std::span<const Tensor> targets, std::span<const double> lambda,
                                       LossMetric metric = LossMetric::Mse) {
  if (lambda.size() != pred.size())
    throw ShapeError("multi_level_loss: " + std::to_string(lambda.size()) + " weights for " +
                     std::to_string(pred.size()) + " levels");
  if (targets.size() != pred.size())
    throw ShapeError("multi_level_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(pred.size()) + " levels");
  for (double w : lambda)
    if (!(w > 0.0)) throw ConfigError("multi_level_loss: every weight must be > 0");
  MultiLevelLoss out;
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < pred.size(); ++l) {
    terms.push_back(metric == LossMetric::Mse ? mse(tape, pred[l], targets[l])
                                              : relative_l2_loss(tape, pred[l], targets[l]));
    out.per_level.push_back(terms.back().item());
  }
  out.total = weighted_sum(tape, terms, lambda);
  return out;
}

}  // namespace mfunet
