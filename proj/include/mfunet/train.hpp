#pragma once

// Training runs: dataset preparation with budget equalization, the training
// loop for every variant, checkpoints and run outputs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfunet/config.hpp"
#include "mfunet/dataset_io.hpp"
#include "mfunet/generate.hpp"
#include "mfunet/metrics.hpp"
#include "mfunet/mf_models.hpp"
#include "mfunet/optim.hpp"
#include "mfunet/random.hpp"

namespace mfunet {

namespace fs = std::filesystem;

inline constexpr int checkpoint_schema_version = 1;
inline constexpr int summary_schema_version = 1;

// ---------------------------------------------------------------------------
// Budget equalization

/// Number of training samples with `target_levels` levels whose total
/// generation cost matches `n_ref` samples with `ref_levels` levels. `costs`
/// are per resolution, coarse to fine; a run with L levels uses the L finest.
inline std::size_t equalize_budget(std::span<const double> costs, std::size_t n_ref, std::size_t ref_levels,
                                   std::size_t target_levels) {
  if (costs.empty()) throw ConfigError("equalize_budget: no cost data");
  if (ref_levels < 1 || ref_levels > costs.size() || target_levels < 1 || target_levels > costs.size())
    throw ConfigError("equalize_budget: level counts must be in [1, " + std::to_string(costs.size()) + "]");
  auto finest = [&](std::size_t l) {
    double s = 0.0;
    for (std::size_t i = costs.size() - l; i < costs.size(); ++i) {
      if (!(costs[i] > 0.0)) throw ConfigError("equalize_budget: costs must be > 0");
      s += costs[i];
    }
    return s;
  };
  const double n = static_cast<double>(n_ref) * finest(ref_levels) / finest(target_levels);
  return static_cast<std::size_t>(std::floor(n * (1.0 + 1e-12)));
}

/// Per-resolution costs (coarse to fine) under `model`: measured mean
/// generation seconds, or mean node counts.
inline std::vector<double> budget_costs(const DatasetManifest& m, const std::string& model) {
  if (model == "measured") {
    if (m.cost_seconds.size() != m.resolutions.size())
      throw ConfigError("dataset manifest has no measured generation costs");
    return m.cost_seconds;
  }
  std::vector<double> c(m.resolutions.size(), 0.0);
  std::size_t n = 0;
  for (const auto& e : m.samples) {
    if (e.node_counts.size() != c.size()) continue;
    for (std::size_t l = 0; l < c.size(); ++l) c[c.size() - 1 - l] += static_cast<double>(e.node_counts[l]);
    ++n;
  }
  if (n == 0) throw ConfigError("dataset manifest has no node counts");
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

// ---------------------------------------------------------------------------
// Data

/// The finest `levels` levels of `s`.
inline MultiFidelitySample finest_levels(const MultiFidelitySample& s, std::size_t levels) {
  if (levels > s.n_levels())
    throw ShapeError("sample " + s.id + " has only " + std::to_string(s.n_levels()) + " levels");
  MultiFidelitySample out;
  out.id = s.id;
  out.levels.assign(s.levels.begin(), s.levels.begin() + static_cast<std::ptrdiff_t>(levels));
  out.maps.assign(s.maps.begin(), s.maps.begin() + static_cast<std::ptrdiff_t>(levels - 1));
  return out;
}

inline std::string manifest_fingerprint(const DatasetManifest& m) {
  const std::string s = to_json(m, false).dump();
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s.data(), s.size())));
  return buf;
}

/// Loads the dataset at `dir` when one exists there, else generates and
/// saves it. An existing dataset must match the requested settings.
inline Dataset obtain_dataset(const GenerateOptions& o, const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) {
    Dataset d = load_dataset(dir);
    const auto& m = d.manifest;
    if (m.seed != o.seed || m.resolutions != o.resolutions || m.k != o.k ||
        m.indices(Split::Train).size() != o.n_train || m.indices(Split::Test).size() != o.n_test)
      throw ConfigError("dataset at " + dir.string() +
                        " was generated with different settings; choose another dataset.dir");
    return d;
  }
  return generate_dataset(o, dir);
}

struct PreparedData {
  DatasetManifest manifest;  // of the reference dataset
  std::vector<MultiFidelitySample> train;  // raw, finest `levels` levels
  std::vector<MultiFidelitySample> test;
  std::size_t levels = 1;
  std::vector<double> costs;
  std::size_t reference_count = 0;
  fs::path dir;
};

/// The run's training and test samples. With budget equalization the
/// training count follows from the reference dataset's costs; samples past
/// the reference count come from the same training stream, generated at the
/// run's resolutions and cached next to the reference data.
inline PreparedData prepare_data(const ExperimentConfig& c, const fs::path& out_dir,
                                 const std::function<void(const std::string&)>& log = {}) {
  GenerateOptions o = c.dataset.gen;
  o.seed = c.seed;
  PreparedData p;
  p.dir = c.dataset.dir.empty() ? out_dir / "data" : fs::path(c.dataset.dir);
  if (log) log("dataset: " + p.dir.string());
  Dataset base = obtain_dataset(o, p.dir);
  p.manifest = base.manifest;
  p.levels = c.levels_used();
  p.reference_count = o.n_train;

  std::size_t n_train = o.n_train;
  if (c.budget.equalize) {
    p.costs = budget_costs(base.manifest, c.budget.cost_model);
    n_train = equalize_budget(p.costs, o.n_train, c.budget.reference_levels, p.levels);
    if (log) log("budget: " + std::to_string(n_train) + " training samples at " + std::to_string(p.levels) + " level(s)");
  }
  if (n_train < 1) throw ConfigError("budget equalization leaves no training samples");

  const auto train_idx = base.manifest.indices(Split::Train);
  for (std::size_t i = 0; i < std::min(n_train, train_idx.size()); ++i)
    p.train.push_back(finest_levels(base.samples[train_idx[i]], p.levels));
  for (auto i : base.manifest.indices(Split::Test)) p.test.push_back(finest_levels(base.samples[i], p.levels));

  if (n_train > train_idx.size()) {
    GenerateOptions ext = o;
    ext.train_offset = train_idx.size();
    ext.n_train = n_train - train_idx.size();
    ext.n_test = 0;
    ext.resolutions.assign(o.resolutions.end() - static_cast<std::ptrdiff_t>(p.levels), o.resolutions.end());
    const fs::path ext_dir = p.dir / ("extend_" + std::to_string(p.levels) + "L_" + std::to_string(n_train));
    if (log) log("generating " + std::to_string(ext.n_train) + " extra training samples in " + ext_dir.string());
    Dataset more;
    if (fs::exists(ext_dir / "manifest.json")) {
      more = load_dataset(ext_dir);
      if (more.samples.size() != ext.n_train || more.manifest.seed != ext.seed)
        throw ConfigError("cached extension at " + ext_dir.string() + " does not match; delete it");
    } else {
      more = generate_dataset(ext, ext_dir);
    }
    for (auto& s : more.samples) p.train.push_back(std::move(s));
  }
  return p;
}

/// Normalization statistics over every training graph at the levels used.
inline NormalizationStats fit_training_stats(const std::vector<MultiFidelitySample>& train) {
  std::vector<const GraphSample*> graphs;
  for (const auto& s : train)
    for (const auto& g : s.levels) graphs.push_back(&g);
  return fit_normalizer(graphs);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Blob stats_to_blob(const NormalizationStats& st) {
  Blob b;
  auto put = [&](const std::string& p, const FeatureStats& f) {
    b[p + ".mean"] = blob_f64({f.mean.size()}, f.mean);
    b[p + ".std"] = blob_f64({f.std.size()}, f.std);
    b[p + ".passthrough"] = blob_i64({f.passthrough.size()}, {f.passthrough.begin(), f.passthrough.end()});
  };
  put("norm.node", st.node);
  put("norm.edge", st.edge);
  put("norm.target", st.target);
  return b;
}

inline NormalizationStats stats_from_blob(const Blob& b, const std::string& src) {
  NormalizationStats st;
  auto get = [&](const std::string& p, FeatureStats& f) {
    f.mean = detail::field(b, p + ".mean", src).f64;
    f.std = detail::field(b, p + ".std", src).f64;
    const auto& pt = detail::field(b, p + ".passthrough", src).i64;
    f.passthrough.assign(pt.begin(), pt.end());
    if (f.mean.size() != f.std.size() || f.mean.size() != f.passthrough.size())
      throw FormatError(src + ": inconsistent normalization arrays for " + p);
  };
  get("norm.node", st.node);
  get("norm.edge", st.edge);
  get("norm.target", st.target);
  return st;
}

struct Checkpoint {
  nlohmann::json config;
  std::size_t epoch = 0;  // next global epoch to run
  std::size_t n_train = 0;
  std::string dataset_fingerprint;
  ModelState state;
  AdamState adam;
  std::vector<std::string> optimizer_names;
  NormalizationStats stats;
};

inline void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  fs::create_directories(dir);
  Blob b = stats_to_blob(ck.stats);
  for (const auto& p : ck.state.named_parameters()) {
    std::vector<std::uint64_t> ext(p.tensor.shape().begin(), p.tensor.shape().end());
    b["param." + p.name] = blob_f64(ext, {p.tensor.data().begin(), p.tensor.data().end()});
  }
  for (std::size_t i = 0; i < ck.optimizer_names.size(); ++i) {
    b["adam_m." + ck.optimizer_names[i]] = blob_f64({ck.adam.m[i].size()}, ck.adam.m[i]);
    b["adam_v." + ck.optimizer_names[i]] = blob_f64({ck.adam.v[i].size()}, ck.adam.v[i]);
  }
  write_blob(dir / "checkpoint.bin", b);
  nlohmann::json j;
  j["schema_version"] = checkpoint_schema_version;
  j["config"] = ck.config;
  j["epoch"] = ck.epoch;
  j["n_train"] = ck.n_train;
  j["dataset_fingerprint"] = ck.dataset_fingerprint;
  j["adam_step"] = ck.adam.step;
  j["optimizer_parameters"] = ck.optimizer_names;
  j["rng"] = {{"scheme", "epoch order drawn from derive_seed(seed, 0x5f1e, epoch)"}};
  detail::write_file(dir / "checkpoint.json", j.dump(2) + "\n");
}

/// Restores a checkpoint into a freshly created state of the right shape.
inline Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig& model) {
  const fs::path jp = dir / "checkpoint.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(jp));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(jp.string() + ": " + e.what());
  }
  const int v = j.value("schema_version", 0);
  if (v != checkpoint_schema_version)
    throw VersionError(jp.string() + ": checkpoint schema_version " + std::to_string(v) + " is not supported");
  Checkpoint ck;
  ck.config = j.at("config");
  ck.epoch = j.at("epoch").get<std::size_t>();
  ck.n_train = j.at("n_train").get<std::size_t>();
  ck.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  ck.optimizer_names = j.at("optimizer_parameters").get<std::vector<std::string>>();
  const std::string bp = (dir / "checkpoint.bin").string();
  const Blob b = read_blob(dir / "checkpoint.bin");
  ck.stats = stats_from_blob(b, bp);
  ck.state = ModelState::create(model);
  for (auto& p : ck.state.named_parameters()) {
    const auto& a = detail::field(b, "param." + p.name, bp);
    if (a.f64.size() != p.tensor.numel()) throw ShapeError(bp + ": parameter " + p.name + " has the wrong size");
    std::copy(a.f64.begin(), a.f64.end(), p.tensor.mutable_data().begin());
  }
  ck.adam.step = j.at("adam_step").get<std::int64_t>();
  for (const auto& n : ck.optimizer_names) {
    ck.adam.m.push_back(detail::field(b, "adam_m." + n, bp).f64);
    ck.adam.v.push_back(detail::field(b, "adam_v." + n, bp).f64);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training

struct CurveRow {
  std::size_t epoch = 0;
  std::size_t stage = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<std::optional<double>> level_loss;
  std::vector<double> test_rel_l1;  // empty when not evaluated this epoch
};

inline std::string curve_header(std::size_t levels) {
  std::string h = "epoch,stage,lr,train_loss";
  for (std::size_t l = 0; l < levels; ++l) h += ",loss_level" + std::to_string(l);
  return h + ",test_rel_l1_u_x,test_rel_l1_u_y\n";
}

inline std::string format_curve_row(const CurveRow& r) {
  char buf[64];
  std::string s = std::to_string(r.epoch) + "," + std::to_string(r.stage);
  std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.lr, r.train_loss);
  s += buf;
  for (const auto& v : r.level_loss) {
    if (v) {
      std::snprintf(buf, sizeof buf, ",%.17g", *v);
      s += buf;
    } else {
      s += ",";
    }
  }
  if (r.test_rel_l1.size() >= 2) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.test_rel_l1[0], r.test_rel_l1[1]);
    s += buf;
  } else {
    s += ",,";
  }
  return s + "\n";
}

struct RunResult {
  fs::path out;
  bool completed = false;
  std::size_t epochs_run = 0;  // in this invocation
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double final_train_loss = 0.0;
  double iteration_seconds_mean = 0.0;
  double iteration_seconds_std = 0.0;
  std::optional<EvalReport> eval;
  ModelState state;
  NormalizationStats stats;
  nlohmann::json summary;
};

namespace detail {

/// Stage boundaries: one stage for most variants, one per level (coarse to
/// fine) for transfer learning, with an even split by default.
inline std::vector<std::size_t> stage_epochs(const ExperimentConfig& c) {
  if (c.variant != Variant::TransferLearning) return {c.training.epochs};
  if (!c.training.tl_stage_epochs.empty()) return c.training.tl_stage_epochs;
  std::vector<std::size_t> e(c.n_levels, c.training.epochs / c.n_levels);
  e.back() += c.training.epochs % c.n_levels;
  return e;
}

struct TrainingItem {
  std::string id;
  MultiLevelInput input;
  std::vector<Tensor> targets;
};

inline std::vector<TrainingItem> build_items(const std::vector<MultiFidelitySample>& raw,
                                             const NormalizationStats& st, std::size_t levels,
                                             std::optional<std::size_t> only_level) {
  std::vector<TrainingItem> items;
  for (const auto& s : raw) {
    MultiFidelitySample n = s;
    for (auto& g : n.levels) g = st.normalize(g);
    TrainingItem it;
    it.id = s.id;
    if (only_level) {
      it.input.levels.push_back(make_input(n.levels.at(*only_level)));
    } else {
      it.input = make_input(n, levels);
    }
    for (const auto& g : it.input.levels) it.targets.push_back(g.targets);
    items.push_back(std::move(it));
  }
  return items;
}

inline void write_text(const fs::path& p, const std::string& s) { detail::write_file(p, s); }

}  // namespace detail

using LogFn = std::function<void(const std::string&)>;

/// Trains one configured run into `out` (created if needed) and evaluates it
/// on the test split at the finest level.
inline RunResult train(const ExperimentConfig& c, const LogFn& log = {}) {
  c.validate();
  const fs::path out(c.out);
  fs::create_directories(out);
  PreparedData data = prepare_data(c, out, log);
  const std::size_t levels = data.levels;

  ModelConfig mc = c.model;
  mc.n_levels = levels;
  mc.d_node_in = data.train.front().levels[0].node_attrs.cols;
  mc.d_edge_in = data.train.front().levels[0].edge_attrs.cols;
  mc.d_out = data.train.front().levels[0].targets.cols;
  mc.init_seed = derive_seed(c.seed, 0x1417);

  const auto stages = detail::stage_epochs(c);
  std::size_t total_epochs = 0;
  for (auto e : stages) total_epochs += e;
  const std::string fingerprint = manifest_fingerprint(data.manifest);

  RunResult res;
  res.out = out;
  res.n_train = data.train.size();
  res.n_test = data.test.size();

  std::size_t start_epoch = 0;
  AdamState adam(c.optimizer);
  std::string curve_text = curve_header(levels);
  if (c.training.resume && fs::exists(out / "checkpoint.json")) {
    Checkpoint ck = load_checkpoint(out, mc);
    if (ck.dataset_fingerprint != fingerprint || ck.n_train != data.train.size())
      throw ConfigError("checkpoint in " + out.string() + " belongs to a different dataset");
    res.state = std::move(ck.state);
    res.stats = ck.stats;
    adam = ck.adam;
    adam.options = c.optimizer;
    start_epoch = ck.epoch;
    // keep the curve rows written before the checkpoint
    std::istringstream old(detail::read_file(out / "curve.csv"));
    std::string line;
    std::getline(old, line);
    for (std::size_t e = 0; e < start_epoch && std::getline(old, line); ++e) curve_text += line + "\n";
    if (log) log("resuming at epoch " + std::to_string(start_epoch));
  } else {
    res.stats = fit_training_stats(data.train);
    res.state = ModelState::create(mc);
  }

  const auto lambda = c.loss_weights();
  const std::vector<double> single{1.0};
  std::vector<Tensor> opt_params;
  std::vector<std::string> opt_names;
  for (auto& p : optimizer_parameters(res.state, c.variant)) {
    opt_params.push_back(p.tensor);
    opt_names.push_back(p.name);
  }
  if (start_epoch == 0) adam.init_for(opt_params);

  std::vector<double> iter_seconds;
  std::vector<double> epoch_seconds;
  std::string timing_text = "epoch,seconds\n";
  const auto save = [&](std::size_t next_epoch) {
    Checkpoint ck;
    ck.config = to_json(c);
    ck.epoch = next_epoch;
    ck.n_train = data.train.size();
    ck.dataset_fingerprint = fingerprint;
    ck.state = res.state;
    ck.adam = adam;
    ck.optimizer_names = opt_names;
    ck.stats = res.stats;
    save_checkpoint(out, ck);
  };

  std::size_t stage_begin = 0, ran = 0;
  bool interrupted = false;
  std::vector<detail::TrainingItem> items;
  std::optional<std::size_t> items_stage;
  for (std::size_t stage = 0; stage < stages.size() && !interrupted; ++stage) {
    const std::size_t stage_end = stage_begin + stages[stage];
    if (start_epoch >= stage_end) {
      stage_begin = stage_end;
      continue;
    }
    std::optional<std::size_t> only_level;
    if (c.variant == Variant::TransferLearning) only_level = levels - 1 - stage;
    if (!items_stage || *items_stage != stage) {
      items = detail::build_items(data.train, res.stats, levels, only_level);
      items_stage = stage;
    }
    const bool multi = is_multi_fidelity(c.variant);
    if (c.variant == Variant::TransferLearning && start_epoch <= stage_begin && stage > 0) adam.init_for(opt_params);

    for (std::size_t epoch = std::max(start_epoch, stage_begin); epoch < stage_end; ++epoch) {
      if (c.training.max_epochs_this_run && ran == c.training.max_epochs_this_run) {
        save(epoch);
        interrupted = true;
        break;
      }
      const auto t_epoch = std::chrono::steady_clock::now();
      const double lr = c.scheduler.lr_at(static_cast<std::int64_t>(epoch - stage_begin));
      std::vector<std::size_t> order(items.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(derive_seed(c.seed, 0x5f1e, epoch));
      shuffle(order.begin(), order.end(), rng);

      CurveRow row;
      row.epoch = epoch;
      row.stage = stage;
      row.lr = lr;
      row.level_loss.assign(levels, std::nullopt);
      std::vector<double> level_sum(levels, 0.0);
      double loss_sum = 0.0;
      std::size_t in_batch = 0;
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto& it = items[order[pos]];
        const auto t0 = std::chrono::steady_clock::now();
        MultiLevelLoss l;
        Tape tape;
        try {
          const auto pred = multi ? forward(tape, c.variant, res.state, it.input)
                                  : MultiLevelPrediction{forward_single_fidelity(tape, res.state, it.input.levels[0])};
          l = multi_level_loss(tape, pred, it.targets, multi ? std::span<const double>(lambda) : single,
                               c.training.loss);
        } catch (const NumericalError& e) {
          throw NumericalError("non-finite value at epoch " + std::to_string(epoch) + ", sample " + it.id + ": " +
                               e.what());
        }
        if (!std::isfinite(l.total.item()))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + it.id);
        tape.backward(l.total);
        ++in_batch;
        if (in_batch == c.training.batch_size || pos + 1 == order.size()) {
          if (in_batch > 1)
            for (auto& p : opt_params)
              if (p.has_grad())
                for (auto& g : p.mutable_grad()) g /= static_cast<double>(in_batch);
          adam_step(opt_params, adam, lr);
          res.state.zero_grad();
          in_batch = 0;
        }
        iter_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        loss_sum += l.total.item();
        for (std::size_t k = 0; k < l.per_level.size(); ++k) level_sum[only_level ? *only_level : k] += l.per_level[k];
      }
      const double n = static_cast<double>(items.size());
      row.train_loss = loss_sum / n;
      for (std::size_t k = 0; k < levels; ++k)
        if (!only_level || *only_level == k) row.level_loss[k] = level_sum[k] / n;

      const bool last = epoch + 1 == total_epochs;
      if (c.training.eval_every && ((epoch + 1) % c.training.eval_every == 0) && !last && !data.test.empty()) {
        const auto rep = evaluate_model(multi ? c.variant : Variant::SingleFidelity, res.state, data.test,
                                        &res.stats, levels);
        row.test_rel_l1 = rep.mean_rel_l1;
      }
      if (last && !data.test.empty()) {
        res.eval = evaluate_model(multi ? c.variant : Variant::SingleFidelity, res.state, data.test, &res.stats,
                                  levels);
        row.test_rel_l1 = res.eval->mean_rel_l1;
      }
      curve_text += format_curve_row(row);
      res.final_train_loss = row.train_loss;
      ++ran;
      const double es = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
      epoch_seconds.push_back(es);
      char tb[64];
      std::snprintf(tb, sizeof tb, "%zu,%.6f\n", epoch, es);
      timing_text += tb;
      if (log && (epoch % 10 == 0 || last))
        log("epoch " + std::to_string(epoch) + " loss " + std::to_string(row.train_loss));
      if (c.training.checkpoint_every && (epoch + 1) % c.training.checkpoint_every == 0 && !last) save(epoch + 1);
    }
    stage_begin = stage_end;
  }

  detail::write_text(out / "curve.csv", curve_text);
  {
    std::ofstream t(out / "timing.csv", start_epoch ? std::ios::app : std::ios::trunc);
    t << (start_epoch ? timing_text.substr(timing_text.find('\n') + 1) : timing_text);
  }
  res.epochs_run = ran;
  if (!iter_seconds.empty()) {
    double m = 0.0, v = 0.0;
    for (double s : iter_seconds) m += s;
    m /= static_cast<double>(iter_seconds.size());
    for (double s : iter_seconds) v += (s - m) * (s - m);
    res.iteration_seconds_mean = m;
    res.iteration_seconds_std = std::sqrt(v / static_cast<double>(iter_seconds.size()));
  }
  if (interrupted) return res;

  res.completed = true;
  if (!res.eval && !data.test.empty())
    res.eval = evaluate_model(is_multi_fidelity(c.variant) ? c.variant : Variant::SingleFidelity, res.state,
                              data.test, &res.stats, levels);
  save(total_epochs);
  nlohmann::json s;
  s["schema_version"] = summary_schema_version;
  s["label"] = out.filename().string();
  s["variant"] = to_string(c.variant);
  s["n_levels"] = levels;
  s["n_gn_blocks"] = mc.n_gn_blocks;
  s["resolutions"] = std::vector<std::size_t>(c.dataset.gen.resolutions.end() - static_cast<std::ptrdiff_t>(levels),
                                              c.dataset.gen.resolutions.end());
  s["n_train"] = res.n_train;
  s["n_test"] = res.n_test;
  s["epochs"] = total_epochs;
  s["seed"] = c.seed;
  s["shared_parameter_count"] = res.state.shared_parameter_count();
  s["coupling_parameter_count"] = res.state.coupling_parameter_count();
  s["final_train_loss"] = res.final_train_loss;
  s["iteration_seconds"] = {{"mean", res.iteration_seconds_mean}, {"std", res.iteration_seconds_std}};
  s["budget"] = {{"equalize", c.budget.equalize},
                 {"cost_model", c.budget.cost_model},
                 {"costs", data.costs},
                 {"reference_levels", c.budget.reference_levels},
                 {"reference_count", data.reference_count}};
  if (res.eval) {
    res.eval->label = s["label"];
    res.eval->iteration_seconds_mean = res.iteration_seconds_mean;
    res.eval->iteration_seconds_std = res.iteration_seconds_std;
    s["eval"] = res.eval->to_json();
    detail::write_text(out / "eval.csv", res.eval->to_csv());
  }
  detail::write_text(out / "summary.json", s.dump(2) + "\n");
  res.summary = s;
  return res;
}

}  // namespace mfunet
