#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "tasnn/checkpoint.hpp"
#include "tasnn/config.hpp"
#include "tasnn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tasnn;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("tasnn_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config() {
  RunConfig c;
  c.corpus.families = 6;
  c.corpus.samples_per_family = 12;
  c.corpus.variants_per_transform = 1;
  c.training.epochs = 2;
  c.training.steps_per_epoch = 2;
  c.training.batch_pairs = 8;
  c.training.val_batches = 1;
  c.eval.ways = {5};
  c.eval.shots = {1};
  c.eval.episodes = 20;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TASNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config round trip and validation") {
  RunConfig c;
  c.seeds.train = 99;
  c.training.lr_image = 3e-4;
  c.eval.ways = {5, 15};
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(back.digest() == c.digest());
  CHECK(RunConfig{}.digest() != c.digest());

  // Missing keys keep their defaults.
  const auto partial = RunConfig::from_json(nlohmann::json::parse(R"({"training": {"epochs": 3}})"));
  CHECK(partial.training.epochs == 3);
  CHECK(partial.training.batch_pairs == RunConfig{}.training.batch_pairs);

  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"trainning": {}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"training": {"epoch": 3}})")), ConfigError);

  RunConfig bad;
  bad.model.task_input_dim = 128;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RunConfig no_ways;
  no_ways.eval.ways.clear();
  CHECK_THROWS_AS(no_ways.validate(), ConfigError);
}

TEST_CASE("seeds reach the section configs") {
  RunConfig c;
  c.seeds.train = 5;
  CHECK(c.training_config().seed == 5);
  RunConfig d = c;
  d.seeds.train = 6;
  CHECK(c.model_config().init_seed != d.model_config().init_seed);
  CHECK(c.split_seed() != d.split_seed());
}

TEST_CASE("plain baseline switches off every task-aware term") {
  const auto b = pipeline::plain_snn(RunConfig{}.model_config());
  CHECK_FALSE(b.task_aware);
  CHECK(b.beta == 0.0);
  CHECK(b.center_loss_weight == 0.0);
}

TEST_CASE("end-to-end pipeline") {
  TempDir tmp("e2e");
  const auto cfg = small_config();
  const auto m1 = pipeline::run_synth(cfg, tmp.path / "corpus");
  CHECK(m1.families.size() == 6);
  CHECK(pipeline::run_synth(cfg, tmp.path / "corpus2").digest == m1.digest);

  const auto ds = pipeline::run_extract(cfg, tmp.path / "corpus", tmp.path / "features");
  CHECK(ds.samples.size() == 6 * 12);
  const auto features = tmp.path / "features" / "features.json";

  SUBCASE("zero epochs write the initial model and an empty loss series") {
    auto c = cfg;
    c.training.epochs = 0;
    pipeline::run_train(c, features, tmp.path / "m0" / "checkpoint.bin");
    const auto curve = nlohmann::json::parse(slurp(tmp.path / "m0" / "loss_curve.json"));
    CHECK(curve.at("epochs").empty());
    const auto t = ckpt::load(tmp.path / "m0" / "checkpoint.bin");
    CHECK(t.epochs_done() == 0);
    model::TaskAwareSiamese fresh(c.model_config());
    for (std::size_t p = 0; p < fresh.parameters().size(); ++p)
      CHECK(fresh.parameters()[p].value == t.model().parameters()[p].value);
  }

  SUBCASE("train, resume and evaluate") {
    const auto ckpt_path = tmp.path / "model" / "checkpoint.bin";
    const auto trainer = pipeline::run_train(cfg, features, ckpt_path);
    CHECK(trainer.epochs_done() == 2);
    const auto curve = nlohmann::json::parse(slurp(tmp.path / "model" / "loss_curve.json"));
    CHECK(curve.at("epochs").size() == 2);

    auto half = cfg;
    half.training.epochs = 1;
    pipeline::run_train(half, features, tmp.path / "half" / "checkpoint.bin");
    pipeline::TrainOptions resume;
    resume.resume = tmp.path / "half" / "checkpoint.bin";
    pipeline::run_train(cfg, features, tmp.path / "resumed" / "checkpoint.bin", resume);
    CHECK(slurp(tmp.path / "resumed" / "checkpoint.bin") == slurp(ckpt_path));

    const auto report = pipeline::run_eval(cfg, features, ckpt_path, tmp.path / "eval");
    REQUIRE(report.at("cells").size() == 1);
    const auto& cell = report.at("cells")[0];
    CHECK(cell.at("n_way") == 5);
    CHECK(cell.at("episodes") == 20);
    const auto& conf = cell.at("confusion");
    CHECK(conf.at("tp").get<int>() + conf.at("fp").get<int>() + conf.at("tn").get<int>() + conf.at("fn").get<int>() == 20);
    CHECK(fs::exists(tmp.path / "eval" / "summary.csv"));
    const auto first = slurp(tmp.path / "eval" / "report.json");
    pipeline::run_eval(cfg, features, ckpt_path, tmp.path / "eval");
    CHECK(slurp(tmp.path / "eval" / "report.json") == first);

    const auto plots = pipeline::run_plot(tmp.path / "eval" / "report.json", tmp.path / "model" / "loss_curve.json",
                                          tmp.path / "plots", true);
    CHECK(fs::exists(tmp.path / "plots" / "plot.gp"));
    CHECK(fs::exists(tmp.path / "plots" / "loss.csv"));
    CHECK(plots.size() >= 4);

    auto wide = cfg;
    wide.eval.ways = {20};
    try {
      pipeline::run_eval(wide, features, ckpt_path, tmp.path / "eval20");
      FAIL("20-way evaluation on 6 families must fail");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("20-way") != std::string::npos);
    }

    auto other = cfg;
    other.features.encoder_seed = 1;
    pipeline::run_extract(other, tmp.path / "corpus", tmp.path / "features_other");
    const auto other_json = tmp.path / "features_other" / "features.json";
    CHECK_THROWS_AS(pipeline::run_eval(cfg, other_json, ckpt_path, tmp.path / "eval_other"), DataError);
    CHECK_NOTHROW(pipeline::run_eval(cfg, other_json, ckpt_path, tmp.path / "eval_other", {true}));
  }

  SUBCASE("augmentation appends training copies only") {
    auto c = cfg;
    c.augmentation.copies = 1;
    const auto aug = pipeline::run_augment(c, features, tmp.path / "aug");
    std::size_t added = 0;
    for (const auto& s : aug.samples) added += s.augmented ? 1 : 0;
    CHECK(added > 0);
    CHECK(aug.samples.size() == ds.samples.size() + added);
    CHECK(aug.digest != ds.digest);
  }
}

TEST_CASE("command-line exit codes") {
  TempDir tmp("cli");
  const auto root = tmp.path.string();
  const std::string small = "--families 6 --samples 12 --variants 1";
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("--cache-dir " + root + " synth " + small) == 0);
  CHECK(fs::exists(tmp.path / "corpus" / "manifest.json"));
  CHECK(run_cli("--cache-dir " + root + " synth --transforms rotate") == 2);

  // Output below a regular file cannot be created.
  std::ofstream(tmp.path / "blocker") << "x";
  CHECK(run_cli("synth " + small + " -o " + (tmp.path / "blocker" / "corpus").string()) == 3);

  std::ofstream(tmp.path / "bad.json") << R"({"trainning": {}})";
  CHECK(run_cli("--config " + (tmp.path / "bad.json").string() + " synth") == 2);

  CHECK(run_cli("--cache-dir " + root + " train --epochs 1") == 3);  // nothing extracted yet
  CHECK(run_cli("--cache-dir " + root + " extract") == 0);
  CHECK(run_cli("--cache-dir " + root + " extract --graph-shape 12by12") == 2);
  CHECK(run_cli("--cache-dir " + root + " eval") == 3);  // no checkpoint
  CHECK(run_cli("--cache-dir " + root + " train --epochs 1 --steps 1") == 0);
  CHECK(run_cli("--cache-dir " + root + " eval --ways 20 --shots 1 --episodes 5") == 2);
  CHECK(run_cli("--cache-dir " + root + " eval --ways 5 --shots 1 --episodes 5") == 0);
  CHECK(run_cli("--cache-dir " + root + " plot --gnuplot") == 0);
  CHECK(fs::exists(tmp.path / "plots" / "plot.gp"));
}
