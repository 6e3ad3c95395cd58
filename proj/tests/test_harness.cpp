#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mfunet/config.hpp"
#include "mfunet/experiments.hpp"
#include "mfunet/train.hpp"
#include "support/tiny_run.hpp"

using namespace mfunet;
namespace mt = mfunet::testing;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ls(line);
  for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
  if (!line.empty() && line.back() == ',') f.push_back("");
  return f;
}

}  // namespace

// --- config -----------------------------------------------------------------

TEST(Config, ShippedConfigsLoad) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(MFUNET_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_config(e.path()).validate());
    ++n;
  }
  EXPECT_GE(n, 8u);
}

TEST(Config, EmptyObjectIsValid) {
  const auto c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.variant, Variant::MfUnet);
  EXPECT_EQ(c.n_levels, 3u);
  EXPECT_EQ(c.training.epochs, 2000u);
  EXPECT_EQ(c.scheduler.t0, 2000);
}

TEST(Config, UnknownKeyNamesItsPath) {
  try {
    config_from_json(nlohmann::json::parse(R"({"model": {"n_gn_block": 4}})"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.n_gn_block"), std::string::npos) << e.what();
  }
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"trainig": {}})")), ConfigError);
}

TEST(Config, WrongTypeAndBadValuesRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"model": {"variant": "unet"}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"dataset": {"resolutions": [100, 50]}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": {"lambda": [1, 0, 1]}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": {"lambda": [1, 1]}})")), ConfigError);
}

TEST(Config, SchemaVersionChecked) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"schema_version": 2})")), VersionError);
}

TEST(Config, JsonRoundTrip) {
  auto c = config_from_json(nlohmann::json::parse(R"({
    "seed": 5, "out": "x",
    "dataset": {"n_train": 7, "resolutions": [20, 40], "noise_mode": "relative"},
    "model": {"variant": "mf_unet_lite", "n_levels": 2, "n_gn_blocks": 6, "coupling_block_index": 2,
              "upsample_reduce": "mean"},
    "training": {"epochs": 9, "loss": "relative_l2", "lambda": [3, 1]},
    "scheduler": {"t0": 4, "t_mult": 2},
    "budget": {"equalize": true, "cost_model": "nodes", "reference_levels": 2}})"));
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());
  EXPECT_EQ(c.variant, Variant::MfUnetLite);
  EXPECT_EQ(c.scheduler.t0, 4);
  EXPECT_EQ(c.loss_weights(), (std::vector<double>{3, 1}));
}

TEST(Config, LoadReportsMissingAndMalformedFiles) {
  const auto d = mt::scratch_dir("config_files");
  EXPECT_THROW(load_config(d / "absent.json"), IoError);
  detail::write_file(d / "bad.json", "{ not json");
  EXPECT_THROW(load_config(d / "bad.json"), FormatError);
}

// --- budget -----------------------------------------------------------------

TEST(Budget, GeometricCosts) {
  const std::vector<double> costs{1.0, 2.0, 4.0};
  EXPECT_EQ(equalize_budget(costs, 100, 3, 1), 175u);
  EXPECT_EQ(equalize_budget(costs, 100, 3, 3), 100u);
  EXPECT_EQ(equalize_budget(costs, 100, 3, 2), 116u);  // 700 / 6
}

TEST(Budget, EqualCosts) {
  const std::vector<double> costs{1.0, 1.0};
  EXPECT_EQ(equalize_budget(costs, 60, 2, 1), 120u);
}

TEST(Budget, InvalidInputs) {
  const std::vector<double> costs{1.0, 2.0};
  EXPECT_THROW(equalize_budget({}, 10, 1, 1), ConfigError);
  EXPECT_THROW(equalize_budget(costs, 10, 3, 1), ConfigError);
  const std::vector<double> zero{0.0, 1.0};
  EXPECT_THROW(equalize_budget(zero, 10, 2, 1), ConfigError);
}

// --- training ---------------------------------------------------------------

TEST(Train, OneEpochWritesOneCurveRow) {
  const auto d = mt::scratch_dir("one_epoch");
  auto c = mt::tiny_run(d / "run");
  c.dataset.gen.n_train = 2;
  c.training.epochs = 1;
  const auto r = train(c);
  EXPECT_TRUE(r.completed);
  const auto rows = lines(mt::slurp(d / "run" / "curve.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "epoch,stage,lr,train_loss,loss_level0,loss_level1,test_rel_l1_u_x,test_rel_l1_u_y");
  EXPECT_EQ(fields(rows[1]).size(), 8u);
  for (const char* f : {"summary.json", "eval.csv", "checkpoint.json", "checkpoint.bin", "timing.csv"})
    EXPECT_TRUE(fs::exists(d / "run" / f)) << f;
  EXPECT_EQ(lines(mt::slurp(d / "run" / "eval.csv")).size(), 3u);
}

TEST(Train, SameSeedSameCurve) {
  const auto d = mt::scratch_dir("determinism");
  const auto a = train(mt::tiny_run(d / "a"));
  const auto b = train(mt::tiny_run(d / "b"));
  EXPECT_EQ(mt::slurp(d / "a" / "curve.csv"), mt::slurp(d / "b" / "curve.csv"));
  EXPECT_EQ(mt::slurp(d / "a" / "eval.csv"), mt::slurp(d / "b" / "eval.csv"));
  EXPECT_TRUE(mt::slurp(d / "a" / "checkpoint.bin") == mt::slurp(d / "b" / "checkpoint.bin"));
  auto other = mt::tiny_run(d / "c");
  other.seed = 12;
  train(other);
  EXPECT_NE(mt::slurp(d / "a" / "curve.csv"), mt::slurp(d / "c" / "curve.csv"));
}

TEST(Train, ResumeIsBitwiseIdentical) {
  const auto d = mt::scratch_dir("resume");
  auto full = mt::tiny_run(d / "full");
  full.training.epochs = 4;
  full.scheduler.t0 = 4;
  full.training.batch_size = 2;
  train(full);

  auto part = full;
  part.out = (d / "part").string();
  part.training.max_epochs_this_run = 2;
  const auto first = train(part);
  EXPECT_FALSE(first.completed);
  EXPECT_EQ(first.epochs_run, 2u);
  EXPECT_FALSE(fs::exists(d / "part" / "summary.json"));
  part.training.max_epochs_this_run = 0;
  part.training.resume = true;
  const auto second = train(part);
  EXPECT_TRUE(second.completed);
  EXPECT_EQ(second.epochs_run, 2u);
  EXPECT_EQ(mt::slurp(d / "full" / "curve.csv"), mt::slurp(d / "part" / "curve.csv"));
  EXPECT_TRUE(mt::slurp(d / "full" / "checkpoint.bin") == mt::slurp(d / "part" / "checkpoint.bin"));
  EXPECT_EQ(mt::slurp(d / "full" / "eval.csv"), mt::slurp(d / "part" / "eval.csv"));
}

TEST(Train, ResumeRejectsForeignDataset) {
  const auto d = mt::scratch_dir("resume_foreign");
  auto c = mt::tiny_run(d / "run");
  c.training.max_epochs_this_run = 1;
  train(c);
  c.training.resume = true;
  c.training.max_epochs_this_run = 0;
  c.dataset.dir = (d / "other_data").string();
  c.seed = 99;
  EXPECT_THROW(train(c), ConfigError);
}

TEST(Train, TransferLearningRunsOneStagePerLevel) {
  const auto d = mt::scratch_dir("tl_stages");
  auto c = mt::tiny_run(d / "run", Variant::TransferLearning, 3);
  c.training.epochs = 4;  // split 1, 1, 2
  train(c);
  const auto rows = lines(mt::slurp(d / "run" / "curve.csv"));
  ASSERT_EQ(rows.size(), 5u);
  std::vector<std::string> stages;
  for (std::size_t i = 1; i < rows.size(); ++i) stages.push_back(fields(rows[i])[1]);
  EXPECT_EQ(stages, (std::vector<std::string>{"0", "1", "2", "2"}));
  // each stage logs only its own level's loss; stage 0 trains the coarsest
  EXPECT_TRUE(fields(rows[1])[4].empty());
  EXPECT_TRUE(fields(rows[1])[5].empty());
  EXPECT_FALSE(fields(rows[1])[6].empty());
  EXPECT_FALSE(fields(rows[3])[4].empty());
  // the learning-rate schedule restarts with each stage
  EXPECT_EQ(fields(rows[1])[2], fields(rows[2])[2]);
}

TEST(Train, TransferLearningEmptyFinalStageKeepsModel) {
  const auto d = mt::scratch_dir("tl_empty");
  auto a = mt::tiny_run(d / "a", Variant::TransferLearning, 2);
  a.training.tl_stage_epochs = {2, 0};
  const auto ra = train(a);
  auto b = mt::tiny_run(d / "b", Variant::TransferLearning, 2);
  b.training.tl_stage_epochs = {2, 3};
  b.training.max_epochs_this_run = 2;
  const auto rb = train(b);
  ASSERT_FALSE(rb.completed);
  const auto pa = ra.state.named_parameters();
  const auto pb = rb.state.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto x = pa[i].tensor.data();
    const auto y = pb[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << pa[i].name;
  }
}

TEST(Train, SingleFidelityHasNoCouplingParameters) {
  const auto d = mt::scratch_dir("sf_params");
  auto sf = mt::tiny_run(d / "sf", Variant::SingleFidelity);
  sf.training.epochs = 1;
  const auto r = train(sf);
  EXPECT_EQ(r.summary["coupling_parameter_count"].get<std::size_t>(), 0u);
  EXPECT_EQ(r.summary["n_levels"].get<std::size_t>(), 1u);
  auto mf = mt::tiny_run(d / "mf", Variant::MfUnet, 3);
  mf.training.epochs = 1;
  const auto rm = train(mf);
  EXPECT_EQ(rm.summary["shared_parameter_count"], r.summary["shared_parameter_count"]);
  EXPECT_GT(rm.summary["coupling_parameter_count"].get<std::size_t>(), 0u);
}

TEST(Train, LiteLeavesDownwardCouplingUntouched) {
  const auto d = mt::scratch_dir("lite_beta");
  auto c = mt::tiny_run(d / "run", Variant::MfUnetLite, 3);
  const auto r = train(c);
  for (const auto& p : r.state.named_parameters())
    if (p.name.rfind("beta_down", 0) == 0) EXPECT_EQ(p.tensor.data()[0], c.model.coupling_init) << p.name;
}

TEST(Train, NonFiniteLossNamesEpochAndSample) {
  const auto d = mt::scratch_dir("nan");
  auto c = mt::tiny_run(d / "run", Variant::SingleFidelity);
  c.dataset.dir = (d / "data").string();
  GenerateOptions g = c.dataset.gen;
  g.seed = c.seed;
  Dataset ds = generate_dataset(g, d / "data");
  // poison one training target on disk
  const auto& e = ds.manifest.samples[ds.manifest.indices(Split::Train)[1]];
  GraphSample poisoned = ds.samples[ds.manifest.indices(Split::Train)[1]].levels[0];
  poisoned.targets(0, 0) = std::nan("");
  write_blob(d / "data" / e.files[0], graph_to_blob(poisoned, nullptr));
  try {
    train(c);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& err) {
    const std::string m = err.what();
    EXPECT_NE(m.find("epoch 0"), std::string::npos) << m;
    EXPECT_NE(m.find("sample"), std::string::npos) << m;
  }
}

TEST(Train, BudgetEqualizationGrowsSingleFidelitySet) {
  const auto d = mt::scratch_dir("budget_run");
  auto mf = mt::tiny_run(d / "mf", Variant::MfUnet, 3);
  mf.training.epochs = 1;
  mf.dataset.dir = (d / "data").string();
  const auto rm = train(mf);
  auto sf = mt::tiny_run(d / "sf", Variant::SingleFidelity);
  sf.training.epochs = 1;
  sf.dataset.dir = mf.dataset.dir;
  sf.budget.equalize = true;
  sf.budget.cost_model = "nodes";
  const auto rs = train(sf);
  const auto costs = budget_costs(load_manifest(d / "data"), "nodes");
  EXPECT_EQ(rs.n_train, equalize_budget(costs, 3, 3, 1));
  EXPECT_GT(rs.n_train, rm.n_train);
  // the extra samples continue the training stream: the first three are shared
  EXPECT_EQ(rs.n_test, rm.n_test);
}

// --- studies and reports ----------------------------------------------------

TEST(Report, RowsPerRunAndByteIdenticalRegeneration) {
  const auto d = mt::scratch_dir("report");
  std::vector<fs::path> runs;
  for (auto [v, L] : std::vector<std::pair<Variant, std::size_t>>{{Variant::SingleFidelity, 1},
                                                                   {Variant::TransferLearning, 3},
                                                                   {Variant::MfUnet, 2},
                                                                   {Variant::MfUnet, 3},
                                                                   {Variant::MfUnetLite, 3}}) {
    const fs::path out = d / (std::string(to_string(v)) + "_" + std::to_string(L));
    auto c = mt::tiny_run(out, v, L);
    c.training.epochs = 1;
    c.dataset.dir = (d / "data").string();
    train(c);
    runs.push_back(out);
  }
  make_report(runs, d / "r1");
  make_report(runs, d / "r2");
  const auto csv = mt::slurp(d / "r1" / "report.csv");
  EXPECT_EQ(csv, mt::slurp(d / "r2" / "report.csv"));
  EXPECT_EQ(mt::slurp(d / "r1" / "report.json"), mt::slurp(d / "r2" / "report.json"));
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), runs.size() + 1);
  const std::string shared = fields(rows[1])[6];
  for (std::size_t i = 2; i < rows.size(); ++i) EXPECT_EQ(fields(rows[i])[6], shared);
  for (const auto& r : runs) EXPECT_TRUE(fs::exists(d / "r1" / "series" / (r.filename().string() + ".csv")));
}

TEST(Report, RejectsUnknownSummaryVersion) {
  const auto d = mt::scratch_dir("report_version");
  fs::create_directories(d / "run");
  detail::write_file(d / "run" / "summary.json", R"({"schema_version": 7})");
  EXPECT_THROW(make_report({d / "run"}, d / "out"), VersionError);
}

TEST(Studies, AblationLevelsOneCurvePerLevelCount) {
  const auto d = mt::scratch_dir("ablate_levels");
  auto c = mt::tiny_run(d);
  c.training.epochs = 2;
  c.budget.cost_model = "nodes";
  c.dataset.gen.n_train = 12;
  const auto r = run_ablation_levels(c, {2, 3});
  ASSERT_EQ(r.runs.size(), 2u);
  const auto costs = budget_costs(load_manifest(d / "data"), "nodes");
  EXPECT_EQ(r.runs[0].n_train, equalize_budget(costs, 12, 3, 2));
  EXPECT_GT(r.runs[0].n_train, r.runs[1].n_train);
  EXPECT_EQ(r.runs[1].n_train, 12u);
  EXPECT_EQ(lines(mt::slurp(d / "ablate_levels.csv")).size(), 3u);
  EXPECT_EQ(lines(mt::slurp(d / "ablate_levels_curves.csv")).size(), 1u + 2 * 2);
}

TEST(Studies, DepthStudyTable) {
  const auto d = mt::scratch_dir("depth");
  auto c = mt::tiny_run(d);
  c.training.epochs = 1;
  const auto r = run_depth_study(c, {2, 4});
  EXPECT_EQ(r.runs.size(), 4u);
  const auto rows = lines(mt::slurp(d / "depth_study.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(fields(rows[0]).size(), 7u);
  EXPECT_EQ(fields(rows[2])[0], "4");
}

TEST(Studies, RatioDatasetsHaveRequestedNodeCounts) {
  const auto d = mt::scratch_dir("ratios");
  auto c = mt::tiny_run(d);
  c.dataset.gen.resolutions = {20, 50, 100};
  c.training.epochs = 1;
  const auto r = run_ablation_ratios(c, {2, 3, 4});
  ASSERT_EQ(r.runs.size(), 3u);
  const auto rows = lines(mt::slurp(d / "ablate_ratios.csv"));
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t q = 2; q <= 4; ++q) {
    const auto f = fields(rows[q - 1]);
    const double lr = std::stod(f[1]), mr = std::stod(f[2]), hr = std::stod(f[3]);
    EXPECT_NEAR(lr / hr, 0.2, 0.2 * 0.15) << f[0];
    EXPECT_NEAR(mr / hr, q / 5.0, q / 5.0 * 0.15) << f[0];
  }
  EXPECT_TRUE(r.table.contains("max_pairwise_rel_l2_spread"));
}
