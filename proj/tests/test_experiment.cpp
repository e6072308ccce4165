#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gme/experiment.hpp"

using namespace gme;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gme_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  auto& s = c.source.synthetic;
  s.n_ads = 160;
  s.samples_per_ad = 60;
  s.n_new_ads = 40;
  s.new_samples_per_ad = 20;
  s.seed = 11;
  c.model.hidden = {16, 8};
  c.base_epochs = 1;
  c.meta.epochs = 1;
  c.seeds = {1};
  c.out_dir = out.string();
  return c;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GME_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.meta.mode = MetaGradMode::FirstOrder;
  c.gamma["GME-A"] = 0.5;
  c.graph_fields = {"attr0"};
  c.seeds = {4, 9};
  const auto j = to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.gamma_for(Variant::GmeA), 0.5);
  EXPECT_EQ(back.gamma_for(Variant::GmeP), 0.25);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, SparseFileTakesDefaults) {
  auto c = config_from_json(nlohmann::json::parse(R"({"version": 1, "meta": {"epochs": 3}})"));
  EXPECT_EQ(c.meta.epochs, 3u);
  EXPECT_EQ(c.meta.beta, 0.1);
  EXPECT_EQ(c.neighbors, 10u);
  EXPECT_EQ(c.model.dim, 10u);
}

TEST(Config, RejectsUnknownKeysAndVersions) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"version": 1, "tresh": 5})")), config_error);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"version": 1, "meta": {"bta": 1}})")), config_error);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"version": 2})")), config_error);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"meta": {}})")), config_error);
}

TEST(Config, ValidationCatchesBadValues) {
  ExperimentConfig c;
  c.seeds = {1, 1};
  EXPECT_THROW(c.validate(), config_error);
  c = ExperimentConfig{};
  c.gamma["GME-G"] = 1.5;
  EXPECT_THROW(c.validate(), config_error);
  c = ExperimentConfig{};
  c.variants = {"RndEmb\\GAT"};
  EXPECT_THROW(c.validate(), config_error);
  c = ExperimentConfig{};
  c.source.kind = "movielens";
  c.source.movielens_dir = "/nonexistent";
  EXPECT_THROW(c.validate(), config_error);
}

TEST(Config, RelativeDataDirResolvesAgainstTheConfigFile) {
  auto dir = scratch("reldir");
  fs::create_directories(dir / "ml");
  for (const char* f : {"ratings.dat", "movies.dat", "users.dat"}) write(dir / "ml" / f, "");
  write(dir / "c.json", R"({"version": 1, "source": {"kind": "movielens", "movielens_dir": "ml"}})");
  auto c = load_config((dir / "c.json").string());
  EXPECT_EQ(fs::path(c.source.movielens_dir), dir / "ml");
}

TEST(Config, VariantSpecsAppendAblations) {
  ExperimentConfig c;
  std::vector<std::string> labels;
  for (const auto& v : c.variant_specs()) labels.push_back(v.label());
  EXPECT_EQ(labels, (std::vector<std::string>{"RndEmb", "MetaEmb", "NgbEmb", "GME-P", "GME-G", "GME-A", "GME-P\\GAT",
                                              "GME-G\\GAT", "GME-A\\GAT"}));
  EXPECT_EQ(file_label("GME-A\\GAT"), "GME-A_noGAT");
}

TEST(Report, SummaryAveragesSeeds) {
  std::vector<PhaseResult> r{{"cold", "GME-A", 0.70, 0.6, 10, 1}, {"cold", "GME-A", 0.72, 0.5, 10, 2},
                             {"warm-1", "GME-A", 0.74, 0.4, 10, 1}, {"warm-1", "GME-A", 0.76, 0.4, 10, 2}};
  auto rows = summarize(r);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].seeds, 2u);
  EXPECT_NEAR(rows[0].auc[0], 0.71, 1e-12);
  EXPECT_NEAR(rows[0].auc[1], 0.75, 1e-12);
  std::ostringstream os;
  write_results_csv(r, os);
  auto back = read_results_csv(os.str());
  ASSERT_EQ(back.size(), r.size());
  EXPECT_EQ(back[3].auc, 0.76);
  EXPECT_NE(render_report(rows).find("GME-A"), std::string::npos);
}

class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch("pipeline");
    const auto t0 = std::chrono::steady_clock::now();
    Pipeline p(tiny_config(root_));
    p.run_all();
    seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    first_report_ = p.report_text();
    first_metrics_ = read_file(root_ / "metrics.csv");
  }
  static inline fs::path root_;
  static inline double seconds_ = 0;
  static inline std::string first_report_, first_metrics_;
};

TEST_F(PipelineRun, ProducesEveryArtifactQuickly) {
  EXPECT_LT(seconds_, 60.0);
  for (const char* f : {"MANIFEST.json", "data/schema.json", "data/corpus.csv", "graph/index.tsv", "seed-1/base.ckpt",
                        "seed-1/base_loss.csv", "seed-1/metrics.csv", "metrics.csv", "report.txt",
                        "seed-1/psi/GME-A_noGAT.ckpt", "seed-1/curves/GME-A.csv"})
    EXPECT_TRUE(fs::exists(root_ / f)) << f;
  auto results = read_results_csv(first_metrics_);
  EXPECT_EQ(results.size(), 9u * 3u);
  for (const char* v : {"RndEmb", "MetaEmb", "NgbEmb", "GME-P", "GME-G", "GME-A", "GME-A\\GAT"})
    EXPECT_NE(first_report_.find(v), std::string::npos) << v;
  auto manifest = nlohmann::json::parse(read_file(root_ / "MANIFEST.json"));
  for (auto s : all_stages()) EXPECT_EQ(manifest["stages"][stage_name(s)]["status"], "complete");
}

TEST_F(PipelineRun, RerunSkipsEverything) {
  Pipeline p(tiny_config(root_));
  p.run_all();
  EXPECT_TRUE(p.executed().empty());
  EXPECT_EQ(p.report_text(), first_report_);
}

TEST_F(PipelineRun, MissingGeneratorCheckpointRerunsFromMetaTraining) {
  fs::remove(root_ / "seed-1/psi/GME-G.ckpt");
  Pipeline p(tiny_config(root_));
  p.run_all();
  EXPECT_EQ(p.executed(), (std::vector<Stage>{Stage::TrainMeta, Stage::Evaluate, Stage::Report}));
  EXPECT_EQ(read_file(root_ / "metrics.csv"), first_metrics_);
}

TEST_F(PipelineRun, ChangedWarmupSettingsRerunEvaluationOnly) {
  auto cfg = tiny_config(root_);
  cfg.warmup.epochs = 2;
  Pipeline p(cfg);
  p.run_until(Stage::Evaluate);
  EXPECT_EQ(p.executed(), (std::vector<Stage>{Stage::Evaluate}));
  Pipeline back(tiny_config(root_));
  back.run_all();
  EXPECT_EQ(read_file(root_ / "metrics.csv"), first_metrics_);
}

TEST_F(PipelineRun, GammaSweepAtTheDefaultMatchesThePlainRun) {
  auto cfg = tiny_config(root_);
  cfg.variants = {"GME-G"};
  Pipeline p(cfg);
  auto rows = p.sweep("gamma", {"1.0"});
  ASSERT_EQ(rows.size(), 1u);
  double plain = -1;
  for (const auto& r : read_results_csv(first_metrics_))
    if (r.variant == "GME-G" && r.phase == "cold") plain = r.auc;
  EXPECT_EQ(rows[0].auc, plain);
  EXPECT_TRUE(fs::exists(root_ / "sweep-gamma.csv"));
}

TEST_F(PipelineRun, GatSweepPairsAttentionWithPooling) {
  auto cfg = tiny_config(root_);
  cfg.variants = {"MetaEmb", "GME-A"};
  Pipeline p(cfg);
  auto rows = p.sweep("gat", {"on", "off"});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "GME-A");
  EXPECT_EQ(rows[1].variant, "GME-A\\GAT");
  EXPECT_THROW(p.sweep("gat", {"maybe"}), config_error);
  EXPECT_THROW(p.sweep("depth", {"1"}), config_error);
}

TEST(Pipeline, SplitWithoutNewAdsIsAConfigError) {
  auto root = scratch("nonew");
  auto cfg = tiny_config(root);
  cfg.source.synthetic.n_new_ads = 0;
  Pipeline p(cfg);
  EXPECT_THROW(p.run_until(Stage::TrainBase), config_error);
  auto manifest = nlohmann::json::parse(read_file(root / "MANIFEST.json"));
  // the old/new split happens while ingesting
  EXPECT_EQ(manifest["stages"]["ingest"]["status"], "failed");
  EXPECT_FALSE(manifest["stages"].contains("train-base"));
}

TEST(Cli, ExitCodes) {
  auto dir = scratch("cli");
  auto cfg = tiny_config(dir / "out");
  cfg.variants = {"RndEmb", "GME-A"};
  cfg.gat_ablation = false;
  cfg.warm_rounds = 0;
  write(dir / "ok.json", to_json(cfg).dump(2));
  write(dir / "typo.json", R"({"version": 1, "seedz": [1]})");
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string() + " -q"), 0);
  EXPECT_TRUE(fs::exists(dir / "out/report.txt"));
  EXPECT_EQ(run_cli("report --config " + (dir / "ok.json").string() + " -q"), 0);
  EXPECT_EQ(run_cli("run --config " + (dir / "typo.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string() + " --variant Bogus"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  write(dir / "blocker", "");
  EXPECT_EQ(run_cli("ingest --config " + (dir / "ok.json").string() + " --out " + (dir / "blocker/sub").string()), 3);
}
