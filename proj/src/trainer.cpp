#include "tasnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tasnn::train {

void TrainingConfig::validate() const {
  if (batch_pairs < 2) throw std::invalid_argument("training: batch_pairs must be >= 2");
  if (task_classes < 2) throw std::invalid_argument("training: task_classes must be >= 2");
  if (max_support < 1) throw std::invalid_argument("training: max_support must be >= 1");
  if (!(lr_image >= 0.0) || !(lr_task >= 0.0)) throw std::invalid_argument("training: learning rates must be >= 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("training: Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("training: Adam epsilon must be positive");
}

nlohmann::ordered_json TrainingConfig::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["steps_per_epoch"] = steps_per_epoch;
  j["batch_pairs"] = batch_pairs;
  j["task_classes"] = task_classes;
  j["max_support"] = max_support;
  j["lr_image"] = lr_image;
  j["lr_task"] = lr_task;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_epsilon"] = adam_epsilon;
  j["seed"] = seed;
  j["val_batches"] = val_batches;
  return j;
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("steps_per_epoch", c.steps_per_epoch);
  get("batch_pairs", c.batch_pairs);
  get("task_classes", c.task_classes);
  get("max_support", c.max_support);
  get("lr_image", c.lr_image);
  get("lr_task", c.lr_task);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("adam_epsilon", c.adam_epsilon);
  get("seed", c.seed);
  get("val_batches", c.val_batches);
  return c;
}

model::PairBatch sample_pair_batch(const data::Dataset& ds, const std::vector<std::vector<std::size_t>>& by_class,
                                   const TrainingConfig& cfg, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() >= 2) eligible.push_back(c);
  }
  if (eligible.size() < 2) throw std::invalid_argument("training needs at least 2 classes with 2+ samples");

  model::PairBatch batch;
  std::vector<long> slot_of(ds.samples.size(), -1);
  auto image_slot = [&](std::size_t sample) {
    auto& s = slot_of[sample];
    if (s < 0) {
      s = static_cast<long>(batch.images.size());
      batch.images.push_back(&ds.samples[sample].image);
      batch.image_labels.push_back(ds.samples[sample].label);
    }
    return static_cast<std::size_t>(s);
  };

  const auto n_task = std::min(cfg.task_classes, eligible.size());
  std::vector<std::vector<std::size_t>> support(n_task);
  std::vector<std::size_t> task_class(n_task);
  for (const auto pick : sample_without_replacement(rng, eligible.size(), n_task)) {
    const auto t = batch.task_labels.size();
    const auto c = eligible[pick];
    const auto& members = by_class[c];
    const auto k = 1 + static_cast<std::size_t>(uniform_index(rng, std::min(cfg.max_support, members.size() - 1)));
    std::vector<double> mean(ds.samples[members[0]].task_feature.size(), 0.0);
    for (const auto i : sample_without_replacement(rng, members.size(), k)) {
      support[t].push_back(members[i]);
      const auto& f = ds.samples[members[i]].task_feature;
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += f[d];
    }
    for (auto& v : mean) v /= static_cast<double>(k);
    task_class[t] = c;
    batch.task_labels.push_back(static_cast<int>(c));
    batch.task_features.push_back(std::move(mean));
  }

  std::vector<std::size_t> populated;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) populated.push_back(c);
  }
  const auto n_pos = cfg.batch_pairs / 2;
  for (std::size_t p = 0; p < cfg.batch_pairs; ++p) {
    const auto t = static_cast<std::size_t>(uniform_index(rng, n_task));
    const auto c = task_class[t];
    const auto anchor = support[t][uniform_index(rng, support[t].size())];
    std::size_t other = 0;
    if (p < n_pos) {
      std::vector<std::size_t> pool;
      for (const auto i : by_class[c]) {
        if (std::find(support[t].begin(), support[t].end(), i) == support[t].end()) pool.push_back(i);
      }
      other = pool[uniform_index(rng, pool.size())];
    } else {
      std::size_t oc = c;
      while (oc == c) oc = populated[uniform_index(rng, populated.size())];
      other = by_class[oc][uniform_index(rng, by_class[oc].size())];
    }
    batch.pairs.push_back({image_slot(other), image_slot(anchor), t});
  }
  return batch;
}

Trainer::Trainer(model::ModelConfig model_cfg, TrainingConfig cfg)
    : cfg_(cfg),
      model_(std::move(model_cfg)),
      centers_(2, model_.config().embedding_dim, model_.config().center_update_rate),
      rng_(mix_seed(cfg.seed, 0x7a1)) {
  cfg_.validate();
  adam_.m = model_.zero_grads();
  adam_.v = model_.zero_grads();
}

void Trainer::apply_adam(const model::ParameterGrads& g) {
  ++adam_.step;
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.step));
  auto& params = model_.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double lr = params[p].group == model::ParamGroup::task_embedding ? cfg_.lr_task : cfg_.lr_image;
    auto& w = params[p].value;
    auto& m = adam_.m[p];
    auto& v = adam_.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[p][i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[p][i] * g[p][i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_epsilon);
    }
  }
}

model::BatchOutput Trainer::train_step(const model::PairBatch& batch) {
  auto grads = model_.zero_grads();
  auto out = model_.forward_backward(batch, centers_, &grads);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    for (const double v : grads[p]) {
      if (!std::isfinite(v))
        throw NumericError("non-finite gradient in " + model_.parameters()[p].name + " at step " +
                           std::to_string(adam_.step + 1));
    }
  }
  apply_adam(grads);
  centers_.update(out.distance_features, out.pair_labels);
  return out;
}

double Trainer::evaluate_loss(const data::Dataset& ds, std::size_t n_batches, std::uint64_t seed) const {
  if (n_batches == 0) throw std::invalid_argument("evaluate_loss: n_batches must be >= 1");
  const auto by_class = ds.by_class();
  Rng rng(mix_seed(seed, 0x7a2));
  double total = 0.0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    const auto batch = sample_pair_batch(ds, by_class, cfg_, rng);
    total += model_.forward_backward(batch, centers_, nullptr).loss;
  }
  return total / static_cast<double>(n_batches);
}

void Trainer::fit(const data::Dataset& train, const data::Dataset* val,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto by_class = train.by_class();
  bool val_usable = false;
  if (val != nullptr && cfg_.val_batches > 0) {
    std::size_t n_ok = 0;
    for (const auto& members : val->by_class()) n_ok += members.size() >= 2 ? 1 : 0;
    val_usable = n_ok >= 2;
  }
  while (epochs_done_ < cfg_.epochs) {
    EpochRecord rec;
    rec.epoch = epochs_done_ + 1;
    for (std::size_t s = 0; s < cfg_.steps_per_epoch; ++s) {
      const auto batch = sample_pair_batch(train, by_class, cfg_, rng_);
      const auto out = train_step(batch);
      rec.train_loss += out.loss;
      rec.embedding_loss += out.embedding_loss;
      rec.binary_loss += out.binary_loss;
      rec.center_loss += out.center_loss;
    }
    if (cfg_.steps_per_epoch > 0) {
      const auto n = static_cast<double>(cfg_.steps_per_epoch);
      rec.train_loss /= n;
      rec.embedding_loss /= n;
      rec.binary_loss /= n;
      rec.center_loss /= n;
    }
    if (val_usable) rec.val_loss = evaluate_loss(*val, cfg_.val_batches, cfg_.seed);
    ++epochs_done_;
    history_.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
}

}  // namespace tasnn::train
