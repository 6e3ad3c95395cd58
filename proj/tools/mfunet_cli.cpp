// mfunet: dataset generation, training and studies from the command line.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfunet/config.hpp"
#include "mfunet/dataset_io.hpp"
#include "mfunet/experiments.hpp"
#include "mfunet/generate.hpp"
#include "mfunet/train.hpp"

namespace fs = std::filesystem;
using namespace mfunet;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::vector<std::size_t> levels;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool levels_is_list) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--variant", o.variant, "single_fidelity | transfer_learning | mf_unet | mf_unet_lite");
  if (levels_is_list)
    cmd->add_option("--levels", o.levels, "level counts")->delimiter(',');
  else
    cmd->add_option("--levels", o.levels, "number of fidelity levels")->expected(1);
  cmd->add_flag("--quiet", o.quiet, "no progress output");
}

/// Config file, then environment, then command-line overrides.
ExperimentConfig resolve(const Overrides& o, bool levels_is_count = true) {
  nlohmann::json j = nlohmann::json::object();
  ExperimentConfig c = o.config.empty() ? config_from_json(j) : load_config(o.config);
  if (const char* env = std::getenv("MFUNET_OUT"); env && *env) c.out = env;
  if (const char* env = std::getenv("MFUNET_THREADS"); env && *env) {
    try {
      c.dataset.gen.threads = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigError("MFUNET_THREADS must be a non-negative integer");
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (!o.variant.empty()) c.variant = parse_variant(o.variant);
  if (levels_is_count && !o.levels.empty()) c.n_levels = o.levels.front();
  if (o.resume) c.training.resume = true;
  c.scheduler.eta_max = c.lr;
  c.validate();
  return c;
}

LogFn logger(const Overrides& o) {
  if (o.quiet) return {};
  return [](const std::string& m) { std::cerr << m << std::endl; };
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

int fail(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::json e{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << e.dump() << std::endl;
  return kind == "internal_error" ? 3 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity graph network surrogates for beam elasticity"};
  app.require_subcommand(1);

  Overrides o;
  std::vector<std::size_t> ratios{2, 3, 4};
  std::vector<std::size_t> depths{2, 4, 6, 8, 10};
  std::vector<std::string> run_dirs;
  std::string run_dir;
  std::vector<std::string> mesh_files;

  auto* gen = app.add_subcommand("gen", "generate a multi-resolution beam dataset");
  add_common(gen, o, false);
  auto* tr = app.add_subcommand("train", "train one model variant and evaluate it");
  add_common(tr, o, false);
  tr->add_flag("--resume", o.resume, "continue from the checkpoint in the output directory");
  auto* ev = app.add_subcommand("eval", "re-evaluate a trained run on its test split");
  add_common(ev, o, false);
  ev->add_option("--run", run_dir, "run directory holding checkpoint.json")->required();
  auto* al = app.add_subcommand("ablate-levels", "MF-UNet with 2, 3 and 4 levels under an equal data budget");
  add_common(al, o, true);
  auto* ar = app.add_subcommand("ablate-ratios", "MF-UNet with 1-2-5, 1-3-5 and 1-4-5 resolution ratios");
  add_common(ar, o, false);
  ar->add_option("--ratios", ratios, "medium-level ratios (fifths of the finest)")->delimiter(',');
  auto* ds = app.add_subcommand("depth-study", "MF-UNet vs MF-UNet Lite over GN-block depths");
  add_common(ds, o, false);
  ds->add_option("--depths", depths, "GN block counts")->delimiter(',');
  auto* rp = app.add_subcommand("report", "merge run summaries into one table");
  add_common(rp, o, false);
  rp->add_option("runs", run_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
  auto* in = app.add_subcommand("ingest", "convert mesh exchange files into graph blobs");
  add_common(in, o, false);
  in->add_option("files", mesh_files, "mesh exchange files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen") {
      ExperimentConfig c = resolve(o);
      GenerateOptions g = c.dataset.gen;
      g.seed = c.seed;
      const fs::path dir = !o.out.empty() ? fs::path(o.out)
                           : !c.dataset.dir.empty() ? fs::path(c.dataset.dir)
                                                    : fs::path(c.out) / "data";
      const Dataset d = generate_dataset(g, dir);
      print_json({{"status", "ok"},
                  {"dataset", dir.string()},
                  {"samples", d.samples.size()},
                  {"cost_seconds", d.manifest.cost_seconds}});
    } else if (command == "train") {
      const auto r = train(resolve(o), logger(o));
      print_json({{"status", r.completed ? "ok" : "interrupted"}, {"out", r.out.string()}, {"summary", r.summary}});
    } else if (command == "eval") {
      const fs::path dir(run_dir);
      const auto ck_json = nlohmann::json::parse(detail::read_file(dir / "checkpoint.json"));
      ExperimentConfig c = config_from_json(ck_json.at("config"));
      if (o.seed || !o.variant.empty()) throw ConfigError("eval uses the run's own seed and variant");
      PreparedData data = prepare_data(c, dir, logger(o));
      ModelConfig mc = c.model;
      mc.n_levels = data.levels;
      mc.d_node_in = data.test.front().levels[0].node_attrs.cols;
      mc.d_edge_in = data.test.front().levels[0].edge_attrs.cols;
      mc.d_out = data.test.front().levels[0].targets.cols;
      const Checkpoint ck = load_checkpoint(dir, mc);
      const Variant v = is_multi_fidelity(c.variant) ? c.variant : Variant::SingleFidelity;
      EvalReport rep = evaluate_model(v, ck.state, data.test, &ck.stats, data.levels);
      rep.label = dir.filename().string();
      const fs::path out = o.out.empty() ? dir : fs::path(o.out);
      fs::create_directories(out);
      detail::write_file(out / "eval.csv", rep.to_csv());
      detail::write_file(out / "eval.json", rep.to_json().dump(2) + "\n");
      print_json({{"status", "ok"}, {"eval", rep.to_json()}});
    } else if (command == "ablate-levels") {
      ExperimentConfig c = resolve(o, false);
      const auto levels = o.levels.empty() ? std::vector<std::size_t>{2, 3, 4} : o.levels;
      const auto r = run_ablation_levels(c, levels, logger(o));
      print_json({{"status", "ok"}, {"out", c.out}, {"runs", r.runs.size()}});
    } else if (command == "ablate-ratios") {
      ExperimentConfig c = resolve(o);
      const auto r = run_ablation_ratios(c, ratios, logger(o));
      print_json({{"status", "ok"}, {"out", c.out}, {"max_pairwise_rel_l2_spread", r.table["max_pairwise_rel_l2_spread"]}});
    } else if (command == "depth-study") {
      ExperimentConfig c = resolve(o);
      c.n_levels = 2;
      const auto r = run_depth_study(c, depths, logger(o));
      print_json({{"status", "ok"}, {"out", c.out}, {"runs", r.runs.size()}});
    } else if (command == "report") {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const fs::path out = !o.out.empty() ? fs::path(o.out) : fs::path("report");
      const auto j = make_report(dirs, out);
      print_json({{"status", "ok"}, {"out", out.string()}, {"rows", j["rows"].size()}});
    } else if (command == "ingest") {
      const fs::path out = !o.out.empty() ? fs::path(o.out) : fs::path("ingested");
      fs::create_directories(out);
      nlohmann::json files = nlohmann::json::array();
      for (const auto& f : mesh_files) {
        const GraphSample g = read_mesh_exchange(fs::path(f));
        const fs::path dst = out / (fs::path(f).stem().string() + ".bin");
        write_blob(dst, graph_to_blob(g, nullptr));
        files.push_back({{"source", f}, {"blob", dst.string()}, {"nodes", g.n_nodes()}, {"edges", g.n_edges()}});
      }
      print_json({{"status", "ok"}, {"files", files}});
    }
  } catch (const mfunet::Error& e) {
    return fail(command, e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(command, "format_error", e.what());
  } catch (const std::exception& e) {
    return fail(command, "internal_error", e.what());
  }
  return 0;
}
