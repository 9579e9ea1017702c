#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "tasnn/common.hpp"
#include "tasnn/dataset.hpp"
#include "tasnn/model.hpp"

namespace tasnn::train {

struct TrainingConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 20;
  std::size_t batch_pairs = 32;  // half positive, half negative
  std::size_t task_classes = 8;  // classes conditioned on per batch
  std::size_t max_support = 5;   // support shots averaged into a task feature
  double lr_image = 1e-4;        // image network and weight generators
  double lr_task = 1e-5;         // task embedding network
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 11;
  std::size_t val_batches = 4;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double embedding_loss = 0.0;
  double binary_loss = 0.0;
  double center_loss = 0.0;
};

// Draws one batch from `ds`. Each conditioned class gets a random support
// set whose mean task feature is its task vector; every pair compares some
// image against a support image of the pair's class and is embedded under
// that class's task vector.
model::PairBatch sample_pair_batch(const data::Dataset& ds, const std::vector<std::vector<std::size_t>>& by_class,
                                   const TrainingConfig& cfg, Rng& rng);

class Trainer {
 public:
  Trainer(model::ModelConfig model_cfg, TrainingConfig cfg);

  const TrainingConfig& config() const { return cfg_; }
  TrainingConfig& config() { return cfg_; }
  model::TaskAwareSiamese& model() { return model_; }
  const model::TaskAwareSiamese& model() const { return model_; }
  model::ClassCenters& centers() { return centers_; }
  const model::ClassCenters& centers() const { return centers_; }
  AdamState& optimizer() { return adam_; }
  const AdamState& optimizer() const { return adam_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  std::size_t epochs_done() const { return epochs_done_; }
  void set_epochs_done(std::size_t n) { epochs_done_ = n; }
  std::vector<EpochRecord>& history() { return history_; }
  const std::vector<EpochRecord>& history() const { return history_; }

  // One Adam update followed by the center moving-average update.
  // Throws NumericError on a non-finite loss or gradient.
  model::BatchOutput train_step(const model::PairBatch& batch);

  // Mean loss over a fixed set of batches drawn from `seed`; no updates.
  double evaluate_loss(const data::Dataset& ds, std::size_t n_batches, std::uint64_t seed) const;

  // Runs the remaining epochs up to config().epochs.
  void fit(const data::Dataset& train, const data::Dataset* val,
           const std::function<void(const EpochRecord&)>& on_epoch = {});

 private:
  void apply_adam(const model::ParameterGrads& g);

  TrainingConfig cfg_;
  model::TaskAwareSiamese model_;
  model::ClassCenters centers_;
  AdamState adam_;
  Rng rng_;
  std::size_t epochs_done_ = 0;
  std::vector<EpochRecord> history_;
};

}  // namespace tasnn::train
