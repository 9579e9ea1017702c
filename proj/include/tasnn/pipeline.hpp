#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasnn/config.hpp"
#include "tasnn/dataset.hpp"
#include "tasnn/episodes.hpp"
#include "tasnn/trainer.hpp"

// The command-level steps behind the CLI. Each step reads the artifacts of
// the previous one from disk and writes its own.
namespace tasnn::pipeline {

// Plain Siamese baseline: no task conditioning, binary loss only.
model::ModelConfig plain_snn(model::ModelConfig cfg);

corpus::CorpusManifest run_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

// corpus_dir/manifest.json -> out_dir/features.json + .npy files.
data::Dataset run_extract(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                          const std::filesystem::path& out_dir);

// Adds cfg.augmentation.copies augmented images per training-split sample.
// Images stay on the 0..255 scale; the model's input_scale applies the rescale.
data::Dataset run_augment(const RunConfig& cfg, const std::filesystem::path& features_json,
                          const std::filesystem::path& out_dir);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  bool baseline = false;
  std::ostream* log = nullptr;
};

// Trains on the training split, writes the checkpoint and a loss curve
// (loss_curve.json) next to it. Returns the trainer state.
train::Trainer run_train(const RunConfig& cfg, const std::filesystem::path& features_json,
                         const std::filesystem::path& checkpoint, const TrainOptions& options = {});

struct EvalOptions {
  bool allow_digest_mismatch = false;
};

// One report per (ways, shots) cell on the test split; writes report.json
// plus ROC / PCA / confusion CSV series into out_dir.
nlohmann::ordered_json run_eval(const RunConfig& cfg, const std::filesystem::path& features_json,
                                const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                                const EvalOptions& options = {});

// CSV series from an eval report (and optional loss curve), plus a gnuplot
// script when `gnuplot_script` is set.
std::vector<std::filesystem::path> run_plot(const std::filesystem::path& report_json,
                                            const std::optional<std::filesystem::path>& loss_curve,
                                            const std::filesystem::path& out_dir, bool gnuplot_script);

// Checks that every requested cell is feasible on `ds`; throws ConfigError
// naming the first cell that is not.
void check_grid(const data::Dataset& ds, const EvalGrid& grid);

}  // namespace tasnn::pipeline
