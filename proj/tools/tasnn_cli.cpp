// tasnn: synth | extract | augment | train | eval | plot
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tasnn/common.hpp"
#include "tasnn/config.hpp"
#include "tasnn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tasnn;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

template <class T>
void override_if(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

fs::path default_cache() {
  if (const char* env = std::getenv("TASNN_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return "tasnn_cache";
}

features::GraphShape parse_shape(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("graph shape must look like 254x254");
  try {
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("graph shape must look like 254x254");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-aware Siamese few-shot malware classification on a synthetic corpus"};
  app.require_subcommand(1);

  std::string config_path;
  std::string cache_dir;
  bool print_config = false;
  app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--cache-dir", cache_dir, "artifact root (default $TASNN_CACHE_DIR or ./tasnn_cache)");
  app.add_flag("--print-config", print_config, "print the effective configuration before running");

  std::optional<std::uint64_t> corpus_seed, train_seed, eval_seed;
  std::optional<std::size_t> families, samples, variants, segment_length, image_width, encoder_dim, copies;
  std::optional<std::uint64_t> encoder_seed;
  std::optional<std::string> graph_shape;
  std::optional<std::size_t> epochs, steps;
  std::optional<double> lr_image, lr_task;
  std::optional<std::vector<std::size_t>> ways, shots;
  std::optional<std::size_t> episodes;
  std::vector<std::string> transforms;
  std::string corpus_dir, features_path, out_dir, checkpoint_path, resume_path, report_path, loss_path;
  bool baseline = false, allow_mismatch = false, gnuplot = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic program corpus");
  synth->add_option("--families", families, "number of families");
  synth->add_option("--samples", samples, "samples per family, variants included");
  synth->add_option("--variants", variants, "variants per transform and family");
  synth->add_option("--transforms", transforms, "subset of shuffle, junk, split");
  synth->add_option("--seed", corpus_seed, "corpus seed");
  synth->add_option("-o,--out", out_dir, "output directory (default <cache>/corpus)");

  auto* extract = app.add_subcommand("extract", "entropy graphs, images and task features");
  extract->add_option("--corpus", corpus_dir, "corpus directory (default <cache>/corpus)");
  extract->add_option("--segment-length", segment_length, "entropy segment length in bytes");
  extract->add_option("--graph-shape", graph_shape, "entropy graph shape, RxC");
  extract->add_option("--image-width", image_width, "row width before resizing");
  extract->add_option("--encoder-seed", encoder_seed, "frozen encoder seed");
  extract->add_option("--encoder-dim", encoder_dim, "task feature dimension");
  extract->add_option("-o,--out", out_dir, "output directory (default <cache>/features)");

  auto* augment = app.add_subcommand("augment", "append augmented training images");
  augment->add_option("--features", features_path, "features.json (default <cache>/features/features.json)");
  augment->add_option("--copies", copies, "augmented copies per training sample");
  augment->add_option("--seed", corpus_seed, "augmentation seed");
  augment->add_option("-o,--out", out_dir, "output directory (default <cache>/features_aug)");

  auto* train = app.add_subcommand("train", "train the model on the training split");
  train->add_option("--features", features_path, "features.json (default <cache>/features/features.json)");
  train->add_option("--checkpoint", checkpoint_path, "checkpoint to write (default <cache>/model/checkpoint.bin)");
  train->add_option("--resume", resume_path, "continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--epochs", epochs, "total epochs");
  train->add_option("--steps", steps, "steps per epoch");
  train->add_option("--lr-image", lr_image, "learning rate of the image network and generators");
  train->add_option("--lr-task", lr_task, "learning rate of the task embedding network");
  train->add_option("--seed", train_seed, "training seed");
  train->add_flag("--baseline", baseline, "train the plain Siamese baseline");

  auto* eval = app.add_subcommand("eval", "N-way K-shot evaluation on the test split");
  eval->add_option("--features", features_path, "features.json (default <cache>/features/features.json)");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint (default <cache>/model/checkpoint.bin)");
  eval->add_option("--ways", ways, "way counts");
  eval->add_option("--shots", shots, "shot counts");
  eval->add_option("--episodes", episodes, "episodes per cell");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_flag("--allow-digest-mismatch", allow_mismatch, "accept a checkpoint trained on other features");
  eval->add_option("-o,--out", out_dir, "output directory (default <cache>/eval)");

  auto* plot = app.add_subcommand("plot", "CSV plot series and an optional gnuplot script");
  plot->add_option("--report", report_path, "report.json (default <cache>/eval/report.json)");
  plot->add_option("--loss-curve", loss_path, "loss_curve.json written by train");
  plot->add_flag("--gnuplot", gnuplot, "also write plot.gp");
  plot->add_option("-o,--out", out_dir, "output directory (default <cache>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    override_if(corpus_seed, cfg.seeds.corpus);
    override_if(train_seed, cfg.seeds.train);
    override_if(eval_seed, cfg.seeds.eval);
    override_if(families, cfg.corpus.families);
    override_if(samples, cfg.corpus.samples_per_family);
    override_if(variants, cfg.corpus.variants_per_transform);
    if (!transforms.empty()) {
      cfg.corpus.transforms.clear();
      for (const auto& t : transforms) {
        try {
          cfg.corpus.transforms.push_back(corpus::provenance_from_string(t));
        } catch (const std::invalid_argument&) {
          throw ConfigError("unknown transform '" + t + "'");
        }
      }
    }
    override_if(segment_length, cfg.features.segment_length);
    override_if(image_width, cfg.features.image_width);
    override_if(encoder_seed, cfg.features.encoder_seed);
    if (encoder_dim) {
      cfg.features.encoder_dim = *encoder_dim;
      cfg.model.task_input_dim = *encoder_dim;
    }
    if (graph_shape) cfg.features.graph_shape = parse_shape(*graph_shape);
    override_if(copies, cfg.augmentation.copies);
    override_if(epochs, cfg.training.epochs);
    override_if(steps, cfg.training.steps_per_epoch);
    override_if(lr_image, cfg.training.lr_image);
    override_if(lr_task, cfg.training.lr_task);
    override_if(ways, cfg.eval.ways);
    override_if(shots, cfg.eval.shots);
    override_if(episodes, cfg.eval.episodes);
    cfg.validate();
    if (print_config) std::cout << cfg.to_json().dump(2) << '\n';

    const fs::path cache = cache_dir.empty() ? default_cache() : fs::path(cache_dir);
    auto or_default = [&](const std::string& given, const fs::path& fallback) {
      return given.empty() ? fallback : fs::path(given);
    };
    const auto features_json = or_default(features_path, cache / "features" / "features.json");
    const auto checkpoint = or_default(checkpoint_path, cache / "model" / "checkpoint.bin");

    if (*synth) {
      const auto out = or_default(out_dir, cache / "corpus");
      const auto m = pipeline::run_synth(cfg, out);
      std::cout << "wrote " << m.entries.size() << " programs in " << m.families.size() << " families to " << out.string()
                << " (digest " << m.digest << ")\n";
    } else if (*extract) {
      const auto out = or_default(out_dir, cache / "features");
      const auto ds = pipeline::run_extract(cfg, or_default(corpus_dir, cache / "corpus"), out);
      std::cout << "extracted " << ds.samples.size() << " samples to " << out.string() << " (digest " << ds.digest
                << ")\n";
    } else if (*augment) {
      const auto out = or_default(out_dir, cache / "features_aug");
      const auto ds = pipeline::run_augment(cfg, features_json, out);
      std::cout << "wrote " << ds.samples.size() << " samples to " << out.string() << " (digest " << ds.digest << ")\n";
    } else if (*train) {
      pipeline::TrainOptions opts;
      if (!resume_path.empty()) opts.resume = resume_path;
      opts.baseline = baseline;
      opts.log = &std::cout;
      const auto trainer = pipeline::run_train(cfg, features_json, checkpoint, opts);
      std::cout << "trained " << trainer.epochs_done() << " epochs, " << trainer.model().parameter_count()
                << " parameters; checkpoint " << checkpoint.string() << '\n';
    } else if (*eval) {
      const auto out = or_default(out_dir, cache / "eval");
      const auto report = pipeline::run_eval(cfg, features_json, checkpoint, out, {allow_mismatch});
      for (const auto& cell : report.at("cells")) {
        std::cout << cell.at("n_way").get<std::size_t>() << "-way " << cell.at("k_shot").get<std::size_t>()
                  << "-shot: accuracy " << cell.at("accuracy").get<double>() << "%, AUC " << cell.at("auc").get<double>()
                  << '\n';
      }
      std::cout << "report " << (out / "report.json").string() << '\n';
    } else if (*plot) {
      const auto out = or_default(out_dir, cache / "plots");
      std::optional<fs::path> loss;
      if (!loss_path.empty()) loss = loss_path;
      const auto files =
          pipeline::run_plot(or_default(report_path, cache / "eval" / "report.json"), loss, out, gnuplot);
      for (const auto& f : files) std::cout << f.string() << '\n';
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const NumericError& ex) {
    std::cerr << "numeric failure: " << ex.what() << '\n';
    return kNumeric;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kData;
  }
  return kOk;
}
