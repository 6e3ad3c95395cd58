#pragma once

// Experiment configuration: JSON with schema validation and unknown-key
// rejection. Every field has a default, so "{}" is a valid config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfunet/error.hpp"
#include "mfunet/generate.hpp"
#include "mfunet/gnn.hpp"
#include "mfunet/mf_models.hpp"
#include "mfunet/optim.hpp"

namespace mfunet {

inline constexpr int config_schema_version = 1;

struct DatasetConfig {
  std::string dir;  // empty: <out>/data
  GenerateOptions gen;
};

struct BudgetConfig {
  bool equalize = false;
  std::size_t reference_levels = 3;  // level count whose n_train is the reference
  std::string cost_model = "measured";  // measured | nodes
};

struct TrainingConfig {
  std::size_t epochs = 2000;
  std::size_t batch_size = 1;
  LossMetric loss = LossMetric::Mse;
  std::vector<double> lambda;  // empty: defaults for the level count
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t eval_every = 0;        // 0: only at the end
  std::vector<std::size_t> tl_stage_epochs;  // empty: even split
  bool resume = false;
  std::size_t max_epochs_this_run = 0;  // 0: no limit (used to interrupt runs)
};

struct ExperimentConfig {
  DatasetConfig dataset;
  Variant variant = Variant::MfUnet;
  std::size_t n_levels = 3;
  ModelConfig model;
  AdamOptions optimizer{.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 1e-6};
  double lr = 2e-4;
  CosineWarmRestarts scheduler{.eta_max = 2e-4, .eta_min = 0.0, .t0 = 2000, .t_mult = 1};
  TrainingConfig training;
  BudgetConfig budget;
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  /// Levels the variant trains on.
  std::size_t levels_used() const { return variant == Variant::SingleFidelity ? 1 : n_levels; }

  void validate() const {
    dataset.gen.validate();
    if (n_levels < 1 || n_levels > 4) throw ConfigError("n_levels must be in [1, 4]");
    if (is_multi_fidelity(variant) && n_levels < 2)
      throw ConfigError(std::string(to_string(variant)) + " needs n_levels >= 2");
    if (n_levels > dataset.gen.resolutions.size())
      throw ConfigError("n_levels (" + std::to_string(n_levels) + ") exceeds the number of dataset resolutions (" +
                        std::to_string(dataset.gen.resolutions.size()) + ")");
    if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be > 0");
    if (optimizer.weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
    scheduler.validate();
    if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!training.lambda.empty()) {
      if (training.lambda.size() != levels_used())
        throw ConfigError("training.lambda has " + std::to_string(training.lambda.size()) + " weights for " +
                          std::to_string(levels_used()) + " levels");
      for (double w : training.lambda)
        if (!(w > 0.0)) throw ConfigError("training.lambda weights must be > 0");
    }
    if (!training.tl_stage_epochs.empty() && training.tl_stage_epochs.size() != n_levels)
      throw ConfigError("training.tl_stage_epochs needs one entry per level");
    if (budget.cost_model != "measured" && budget.cost_model != "nodes")
      throw ConfigError("budget.cost_model must be measured or nodes");
    if (budget.reference_levels < 1 || budget.reference_levels > dataset.gen.resolutions.size())
      throw ConfigError("budget.reference_levels must be in [1, number of resolutions]");
    ModelConfig m = model;
    m.n_levels = levels_used();
    m.validate();
  }

  std::vector<double> loss_weights() const {
    return training.lambda.empty() ? default_loss_weights(levels_used()) : training.lambda;
  }
};

namespace detail {

/// Reads keys from one JSON object and remembers which were consumed, so
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  std::optional<ObjectReader> object(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return ObjectReader(j_.at(key), join(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where(it.key().c_str()));
  }

  std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  std::string where(const char* key = nullptr) const {
    const std::string p = key ? join(key) : path_;
    return p.empty() ? "config" : "'" + p + "'";
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader root(j, "");
  int version = config_schema_version;
  root.get("schema_version", version);
  if (version != config_schema_version)
    throw VersionError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(config_schema_version) + ")");
  root.get("seed", c.seed);
  root.get("out", c.out);

  if (auto d = root.object("dataset")) {
    auto& g = c.dataset.gen;
    d->get("dir", c.dataset.dir);
    d->get("n_train", g.n_train);
    d->get("n_test", g.n_test);
    d->get("resolutions", g.resolutions);
    d->get("noise_amp", g.noise_amp);
    std::string mode = "absolute";
    d->get("noise_mode", mode);
    if (mode == "absolute") g.noise_mode = NoiseMode::Absolute;
    else if (mode == "relative") g.noise_mode = NoiseMode::RelativeToEdge;
    else throw ConfigError("dataset.noise_mode must be absolute or relative");
    d->get("k", g.k);
    d->get("max_redraws", g.max_redraws);
    d->get("threads", g.threads);
    if (auto s = d->object("sampling")) {
      s->get("length_min", g.sampling.length_min);
      s->get("length_max", g.sampling.length_max);
      s->get("height_min", g.sampling.height_min);
      s->get("height_max", g.sampling.height_max);
      s->get("load_total", g.sampling.load_total);
      s->finish();
    }
    if (auto m = d->object("material")) {
      m->get("youngs_modulus", g.material.youngs_modulus);
      m->get("poisson_ratio", g.material.poisson_ratio);
      m->finish();
    }
    d->finish();
  }

  if (auto m = root.object("model")) {
    std::string variant = to_string(c.variant);
    m->get("variant", variant);
    c.variant = parse_variant(variant);
    m->get("n_levels", c.n_levels);
    m->get("hidden", c.model.hidden);
    m->get("latent", c.model.latent);
    m->get("block_hidden", c.model.block_hidden);
    m->get("n_gn_blocks", c.model.n_gn_blocks);
    m->get("coupling_block_index", c.model.coupling_block_index);
    std::string reduce = "sum";
    m->get("upsample_reduce", reduce);
    if (reduce == "sum") c.model.upsample_reduce = UpsampleReduce::Sum;
    else if (reduce == "mean") c.model.upsample_reduce = UpsampleReduce::Mean;
    else throw ConfigError("model.upsample_reduce must be sum or mean");
    m->get("coupling_init", c.model.coupling_init);
    m->get("init_gain", c.model.init_gain);
    m->finish();
  }

  if (auto o = root.object("optimizer")) {
    o->get("lr", c.lr);
    o->get("weight_decay", c.optimizer.weight_decay);
    o->get("beta1", c.optimizer.beta1);
    o->get("beta2", c.optimizer.beta2);
    o->get("eps", c.optimizer.eps);
    o->finish();
  }
  c.scheduler.eta_max = c.lr;

  if (auto t = root.object("training")) {
    t->get("epochs", c.training.epochs);
    t->get("batch_size", c.training.batch_size);
    std::string loss = "mse";
    t->get("loss", loss);
    c.training.loss = parse_loss_metric(loss);
    t->get("lambda", c.training.lambda);
    t->get("checkpoint_every", c.training.checkpoint_every);
    t->get("eval_every", c.training.eval_every);
    t->get("tl_stage_epochs", c.training.tl_stage_epochs);
    t->get("resume", c.training.resume);
    t->get("max_epochs_this_run", c.training.max_epochs_this_run);
    t->finish();
  }
  c.scheduler.t0 = static_cast<std::int64_t>(c.training.epochs);

  if (auto s = root.object("scheduler")) {
    s->get("t0", c.scheduler.t0);
    s->get("t_mult", c.scheduler.t_mult);
    s->get("eta_min", c.scheduler.eta_min);
    s->finish();
  }

  if (auto b = root.object("budget")) {
    b->get("equalize", c.budget.equalize);
    b->get("reference_levels", c.budget.reference_levels);
    b->get("cost_model", c.budget.cost_model);
    b->finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& g = c.dataset.gen;
  nlohmann::json j;
  j["schema_version"] = config_schema_version;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["dataset"] = {{"dir", c.dataset.dir},
                  {"n_train", g.n_train},
                  {"n_test", g.n_test},
                  {"resolutions", g.resolutions},
                  {"noise_amp", g.noise_amp},
                  {"noise_mode", g.noise_mode == NoiseMode::Absolute ? "absolute" : "relative"},
                  {"k", g.k},
                  {"max_redraws", g.max_redraws},
                  {"threads", g.threads},
                  {"sampling",
                   {{"length_min", g.sampling.length_min},
                    {"length_max", g.sampling.length_max},
                    {"height_min", g.sampling.height_min},
                    {"height_max", g.sampling.height_max},
                    {"load_total", g.sampling.load_total}}},
                  {"material",
                   {{"youngs_modulus", g.material.youngs_modulus}, {"poisson_ratio", g.material.poisson_ratio}}}};
  j["model"] = {{"variant", to_string(c.variant)},
                {"n_levels", c.n_levels},
                {"hidden", c.model.hidden},
                {"latent", c.model.latent},
                {"block_hidden", c.model.block_hidden},
                {"n_gn_blocks", c.model.n_gn_blocks},
                {"coupling_block_index", c.model.coupling_block_index},
                {"upsample_reduce", c.model.upsample_reduce == UpsampleReduce::Sum ? "sum" : "mean"},
                {"coupling_init", c.model.coupling_init},
                {"init_gain", c.model.init_gain}};
  j["optimizer"] = {{"lr", c.lr},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["scheduler"] = {{"t0", c.scheduler.t0}, {"t_mult", c.scheduler.t_mult}, {"eta_min", c.scheduler.eta_min}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"loss", to_string(c.training.loss)},
                   {"lambda", c.training.lambda},
                   {"checkpoint_every", c.training.checkpoint_every},
                   {"eval_every", c.training.eval_every},
                   {"tl_stage_epochs", c.training.tl_stage_epochs},
                   {"resume", c.training.resume},
                   {"max_epochs_this_run", c.training.max_epochs_this_run}};
  j["budget"] = {{"equalize", c.budget.equalize},
                 {"reference_levels", c.budget.reference_levels},
                 {"cost_model", c.budget.cost_model}};
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mfunet
