#pragma once

// Multi-run studies built on train(): level-count and resolution-ratio
// ablations, the GN-depth comparison, and merged reports.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfunet/train.hpp"

namespace mfunet {

namespace detail {

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double eval_value(const nlohmann::json& summary, const char* key, const char* comp = nullptr) {
  if (!summary.contains("eval")) return std::nan("");
  const auto& e = summary.at("eval");
  return comp ? e.at(key).at(comp).get<double>() : e.at(key).get<double>();
}

inline fs::path shared_data_dir(const ExperimentConfig& base, const fs::path& root) {
  return base.dataset.dir.empty() ? root / "data" : fs::path(base.dataset.dir);
}

}  // namespace detail

struct StudyResult {
  std::vector<RunResult> runs;
  nlohmann::json table;
};

/// MF-UNet trained with each level count in `levels`, every run budget
/// equalized against `base.budget.reference_levels` levels at
/// `base.dataset.gen.n_train` samples. All runs share one dataset whose
/// resolutions cover the largest level count.
inline StudyResult run_ablation_levels(const ExperimentConfig& base, const std::vector<std::size_t>& levels,
                                       const LogFn& log = {}) {
  const fs::path root(base.out);
  StudyResult r;
  std::string csv = "levels,n_train,final_train_loss,rel_l1_u_x,rel_l1_u_y,rel_l2\n";
  std::string curves = "levels,epoch,train_loss,test_rel_l1_u_x,test_rel_l1_u_y\n";
  for (std::size_t L : levels) {
    ExperimentConfig c = base;
    c.variant = Variant::MfUnet;
    c.n_levels = L;
    c.training.lambda.clear();
    c.budget.equalize = true;
    c.dataset.dir = detail::shared_data_dir(base, root).string();
    c.out = (root / ("levels_" + std::to_string(L))).string();
    if (log) log("ablate-levels: " + std::to_string(L) + " levels");
    auto run = train(c, log);
    const auto& s = run.summary;
    csv += std::to_string(L) + "," + std::to_string(run.n_train) + "," + detail::fmt17(run.final_train_loss) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_x")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_y")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l2")) + "\n";
    std::istringstream in(detail::read_file(fs::path(c.out) / "curve.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      // epoch,stage,lr,train_loss,loss_level..., test_x, test_y
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      if (line.back() == ',') f.push_back("");
      while (f.size() < 6) f.push_back("");
      curves += std::to_string(L) + "," + f[0] + "," + f[3] + "," + f[f.size() - 2] + "," + f.back() + "\n";
    }
    r.table.push_back({{"levels", L}, {"summary", s}});
    r.runs.push_back(std::move(run));
  }
  detail::write_file(root / "ablate_levels.csv", csv);
  detail::write_file(root / "ablate_levels_curves.csv", curves);
  detail::write_file(root / "ablate_levels.json", r.table.dump(2) + "\n");
  return r;
}

/// Three-level MF-UNet on datasets whose medium level has `ratio` fifths of
/// the finest node count (1-ratio-5). The coarsest level has one fifth.
inline StudyResult run_ablation_ratios(const ExperimentConfig& base, const std::vector<std::size_t>& ratios,
                                       const LogFn& log = {}) {
  const fs::path root(base.out);
  const std::size_t hr = base.dataset.gen.resolutions.back();
  StudyResult r;
  std::string csv = "ratio,mean_nodes_lr,mean_nodes_mr,mean_nodes_hr,rel_l1_u_x,rel_l1_u_y,rel_l2\n";
  std::vector<double> finals;
  for (std::size_t q : ratios) {
    if (q < 2 || q > 4) throw ConfigError("ablate-ratios: ratios must be in [2, 4]");
    const std::string tag = "1-" + std::to_string(q) + "-5";
    ExperimentConfig c = base;
    c.variant = Variant::MfUnet;
    c.n_levels = 3;
    c.training.lambda.clear();
    c.budget.equalize = false;
    c.dataset.gen.resolutions = {hr / 5, hr * q / 5, hr};
    c.dataset.dir = (root / ("data_" + tag)).string();
    c.out = (root / ("ratio_" + tag)).string();
    if (log) log("ablate-ratios: " + tag);
    auto run = train(c, log);
    const auto costs = budget_costs(load_manifest(c.dataset.dir), "nodes");
    const auto& s = run.summary;
    csv += tag + "," + detail::fmt17(costs[0]) + "," + detail::fmt17(costs[1]) + "," + detail::fmt17(costs[2]) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_x")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_y")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l2")) + "\n";
    finals.push_back(detail::eval_value(s, "mean_rel_l2"));
    r.table.push_back({{"ratio", tag}, {"mean_nodes", costs}, {"summary", s}});
    r.runs.push_back(std::move(run));
  }
  double spread = 0.0;
  for (double a : finals)
    for (double b : finals) spread = std::max(spread, std::abs(a - b));
  detail::write_file(root / "ablate_ratios.csv", csv);
  nlohmann::json j{{"runs", r.table}, {"max_pairwise_rel_l2_spread", spread}};
  detail::write_file(root / "ablate_ratios.json", j.dump(2) + "\n");
  r.table = j;
  return r;
}

/// MF-UNet and MF-UNet Lite on two levels at each depth, coupled after
/// depth/2 blocks.
inline StudyResult run_depth_study(const ExperimentConfig& base, const std::vector<std::size_t>& depths,
                                   const LogFn& log = {}) {
  const fs::path root(base.out);
  StudyResult r;
  std::string csv =
      "n_gn_blocks,mf_unet_rel_l1_u_x,mf_unet_rel_l1_u_y,mf_unet_lite_rel_l1_u_x,mf_unet_lite_rel_l1_u_y,"
      "mf_unet_iteration_seconds,mf_unet_lite_iteration_seconds\n";
  for (std::size_t d : depths) {
    if (d < 2) throw ConfigError("depth-study: depths must be >= 2");
    std::vector<std::string> cols;
    std::vector<std::string> times;
    for (auto v : {Variant::MfUnet, Variant::MfUnetLite}) {
      ExperimentConfig c = base;
      c.variant = v;
      c.n_levels = 2;
      c.training.lambda.clear();
      c.budget.equalize = false;
      c.model.n_gn_blocks = d;
      c.model.coupling_block_index = d / 2;
      c.dataset.dir = detail::shared_data_dir(base, root).string();
      c.out = (root / ("depth_" + std::to_string(d) + "_" + to_string(v))).string();
      if (log) log("depth-study: " + std::to_string(d) + " blocks, " + to_string(v));
      auto run = train(c, log);
      cols.push_back(detail::fmt17(detail::eval_value(run.summary, "mean_rel_l1", "u_x")));
      cols.push_back(detail::fmt17(detail::eval_value(run.summary, "mean_rel_l1", "u_y")));
      times.push_back(detail::fmt17(run.iteration_seconds_mean));
      r.table.push_back({{"n_gn_blocks", d}, {"variant", to_string(v)}, {"summary", run.summary}});
      r.runs.push_back(std::move(run));
    }
    csv += std::to_string(d) + "," + cols[0] + "," + cols[1] + "," + cols[2] + "," + cols[3] + "," + times[0] + "," +
           times[1] + "\n";
  }
  detail::write_file(root / "depth_study.csv", csv);
  detail::write_file(root / "depth_study.json", r.table.dump(2) + "\n");
  return r;
}

/// Merges completed runs into one model x metric table, plus one x/y series
/// file per run for external plotting. Output depends only on the run
/// directories' contents.
inline nlohmann::json make_report(const std::vector<fs::path>& runs, const fs::path& out) {
  if (runs.empty()) throw ConfigError("report: no run directories given");
  fs::create_directories(out / "series");
  std::string csv =
      "label,variant,n_levels,n_gn_blocks,n_train,epochs,shared_parameter_count,coupling_parameter_count,"
      "rel_l1_u_x,rel_l1_u_y,rel_l2,iteration_seconds\n";
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::string> labels;
  for (const auto& dir : runs) {
    const fs::path sp = dir / "summary.json";
    nlohmann::json s;
    try {
      s = nlohmann::json::parse(detail::read_file(sp));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(sp.string() + ": " + e.what());
    }
    const int v = s.value("schema_version", 0);
    if (v != summary_schema_version)
      throw VersionError(sp.string() + ": summary schema_version " + std::to_string(v) + " is not supported");
    std::string label = s.value("label", dir.filename().string());
    for (int k = 2; std::count(labels.begin(), labels.end(), label); ++k)
      label = s.value("label", dir.filename().string()) + "_" + std::to_string(k);
    labels.push_back(label);
    csv += label + "," + s.at("variant").get<std::string>() + "," + std::to_string(s.at("n_levels").get<int>()) + "," +
           std::to_string(s.value("n_gn_blocks", 0)) + "," + std::to_string(s.at("n_train").get<int>()) + "," +
           std::to_string(s.at("epochs").get<int>()) + "," +
           std::to_string(s.at("shared_parameter_count").get<std::size_t>()) + "," +
           std::to_string(s.at("coupling_parameter_count").get<std::size_t>()) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_x")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l1", "u_y")) + "," +
           detail::fmt17(detail::eval_value(s, "mean_rel_l2")) + "," +
           detail::fmt17(s.at("iteration_seconds").at("mean").get<double>()) + "\n";
    rows.push_back({{"label", label}, {"summary", s}});

    std::string series = "epoch,train_loss,test_rel_l1_u_x,test_rel_l1_u_y\n";
    std::istringstream in(detail::read_file(dir / "curve.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      if (!line.empty() && line.back() == ',') f.push_back("");
      if (f.size() < 6) throw FormatError((dir / "curve.csv").string() + ": malformed row");
      series += f[0] + "," + f[3] + "," + f[f.size() - 2] + "," + f.back() + "\n";
    }
    detail::write_file(out / "series" / (label + ".csv"), series);
  }
  nlohmann::json j{{"schema_version", summary_schema_version}, {"rows", rows}};
  detail::write_file(out / "report.csv", csv);
  detail::write_file(out / "report.json", j.dump(2) + "\n");
  return j;
}

}  // namespace mfunet
