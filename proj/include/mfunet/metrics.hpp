#pragma once

// Relative error metrics and per-sample evaluation reports.

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfunet/error.hpp"
#include "mfunet/graph.hpp"
#include "mfunet/mf_models.hpp"

namespace mfunet {

/// ||pred - truth||_1 / ||truth||_1
inline double relative_l1(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw ShapeError("relative_l1: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num += std::abs(pred[i] - truth[i]);
    den += std::abs(truth[i]);
  }
  if (!(den > 0.0)) throw MetricError("relative_l1: ground truth has zero norm");
  return num / den;
}

/// ||pred - truth||_2 / ||truth||_2
inline double relative_l2(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw ShapeError("relative_l2: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    den += truth[i] * truth[i];
  }
  if (!(den > 0.0)) throw MetricError("relative_l2: ground truth has zero norm");
  return std::sqrt(num / den);
}

inline std::vector<double> column(const Array2<double>& a, std::size_t c) {
  std::vector<double> out(a.rows);
  for (std::size_t r = 0; r < a.rows; ++r) out[r] = a(r, c);
  return out;
}

struct SampleError {
  std::string id;
  std::size_t n_nodes = 0;
  std::vector<double> rel_l1;  // per output component
  double rel_l2 = 0.0;         // over all components
};

/// Errors of one finest-level prediction against ground truth, both in
/// physical units.
inline SampleError sample_error(const std::string& id, const Array2<double>& pred, const Array2<double>& truth) {
  if (pred.rows != truth.rows || pred.cols != truth.cols)
    throw ShapeError("sample_error(" + id + "): prediction and target shapes differ");
  SampleError e;
  e.id = id;
  e.n_nodes = truth.rows;
  for (std::size_t c = 0; c < truth.cols; ++c) {
    try {
      e.rel_l1.push_back(relative_l1(column(pred, c), column(truth, c)));
    } catch (const MetricError& err) {
      throw MetricError("sample " + id + " component " + std::to_string(c) + ": " + err.what());
    }
  }
  e.rel_l2 = relative_l2(pred.data, truth.data);
  return e;
}

struct EvalReport {
  std::string label;
  std::vector<std::string> components{"u_x", "u_y"};
  std::vector<SampleError> rows;
  std::vector<double> mean_rel_l1;
  double mean_rel_l2 = 0.0;
  double iteration_seconds_mean = 0.0;
  double iteration_seconds_std = 0.0;

  /// Arithmetic means of the per-sample rows.
  void aggregate() {
    if (rows.empty()) throw MetricError("evaluation report has no rows");
    mean_rel_l1.assign(rows.front().rel_l1.size(), 0.0);
    mean_rel_l2 = 0.0;
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.rel_l1.size(); ++c) mean_rel_l1[c] += r.rel_l1[c];
      mean_rel_l2 += r.rel_l2;
    }
    for (auto& m : mean_rel_l1) m /= static_cast<double>(rows.size());
    mean_rel_l2 /= static_cast<double>(rows.size());
  }

  std::string component_name(std::size_t c) const {
    return c < components.size() ? components[c] : "c" + std::to_string(c);
  }

  /// Columns: sample_id, n_nodes, rel_l1_<component>..., rel_l2. Values use
  /// 17 significant digits so the CSV round-trips.
  std::string to_csv() const {
    std::string out = "sample_id,n_nodes";
    const std::size_t nc = rows.empty() ? 0 : rows.front().rel_l1.size();
    for (std::size_t c = 0; c < nc; ++c) out += ",rel_l1_" + component_name(c);
    out += ",rel_l2\n";
    char buf[64];
    for (const auto& r : rows) {
      out += r.id + "," + std::to_string(r.n_nodes);
      for (double v : r.rel_l1) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out += buf;
      }
      std::snprintf(buf, sizeof buf, ",%.17g\n", r.rel_l2);
      out += buf;
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["label"] = label;
    j["n_samples"] = rows.size();
    for (std::size_t c = 0; c < mean_rel_l1.size(); ++c) j["mean_rel_l1"][component_name(c)] = mean_rel_l1[c];
    j["mean_rel_l2"] = mean_rel_l2;
    j["iteration_seconds"] = {{"mean", iteration_seconds_mean}, {"std", iteration_seconds_std}};
    return j;
  }
};

/// Evaluates `variant` on raw (unnormalized) samples: inputs are normalized
/// with `stats`, finest-level predictions are denormalized and compared
/// with the raw targets.
inline EvalReport evaluate_model(Variant variant, const ModelState& state,
                                 std::span<const MultiFidelitySample> samples,
                                 const NormalizationStats* stats, std::size_t n_levels) {
  if (!stats) throw MetricError("evaluate_model: normalization statistics are missing");
  if (samples.empty()) throw MetricError("evaluate_model: empty test set");
  EvalReport rep;
  rep.label = to_string(variant);
  const std::size_t used = is_multi_fidelity(variant) ? n_levels : 1;
  for (const auto& raw : samples) {
    MultiFidelitySample norm = raw;
    for (auto& g : norm.levels) g = stats->normalize(g);
    Tape tape(Tape::Mode::Inference);
    const auto pred = forward(tape, variant, state, make_input(norm, used));
    Array2<double> y(pred[0].rows(), pred[0].cols());
    std::copy(pred[0].data().begin(), pred[0].data().end(), y.data.begin());
    stats->denormalize_targets(y);
    rep.rows.push_back(sample_error(raw.id, y, raw.levels[0].targets));
  }
  rep.aggregate();
  return rep;
}

}  // namespace mfunet
