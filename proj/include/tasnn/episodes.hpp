#pragma once

#include <cstddef>
#include <cstdint>
#include <array>
#include <map>
#include <span>
#include <vector>

#include "json.hpp"
#include "tasnn/dataset.hpp"
#include "tasnn/metrics.hpp"
#include "tasnn/model.hpp"

namespace tasnn::eval {

// One N-way K-shot task over dataset sample indices. `classes[j]` is the
// label of way j; `support[j]` holds its k_shot samples. The query set is
// every remaining sample of the selected classes; `anchor` is the query
// scored for accuracy.
struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> support;
  std::vector<std::size_t> query;
  std::size_t anchor = 0;
  std::size_t anchor_way = 0;
};

// Classes are drawn uniformly among those with at least k_shot + 1 samples.
// Throws std::invalid_argument when fewer than n_way classes qualify.
Episode sample_episode(const data::Dataset& ds, std::size_t n_way, std::size_t k_shot, std::uint64_t seed);

// Embeds dataset samples under the task vector of a support set.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::size_t sample, std::span<const std::size_t> support) = 0;
  // Pair probability for an embedding distance.
  virtual double probability(double distance) const = 0;
};

// Embeddings from a trained model. The task vector of a support set is the
// mean task feature of its samples. Image codes and task weights are cached.
class ModelEmbedder final : public Embedder {
 public:
  ModelEmbedder(const model::TaskAwareSiamese& model, const data::Dataset& ds);
  std::vector<double> embed(std::size_t sample, std::span<const std::size_t> support) override;
  double probability(double distance) const override;

 private:
  const model::TaskWeights& task_weights(std::span<const std::size_t> support);

  const model::TaskAwareSiamese& model_;
  const data::Dataset& ds_;
  std::map<std::size_t, model::ImageCode> codes_;
  std::map<std::vector<std::size_t>, model::TaskWeights> tasks_;
};

struct Prediction {
  std::vector<double> scores;  // similarity per way
  std::size_t way = 0;         // argmax, lowest index on ties
};

// Similarity to way j is minus the mean distance between the query and the
// support samples of j, all embedded under j's task vector.
Prediction predict(const Episode& ep, std::size_t query, Embedder& embedder);

// Argmax with ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> scores);

struct EvalReport {
  std::size_t n_way = 0, k_shot = 0, episodes = 0;
  std::uint64_t seed = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  Confusion confusion;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  // One verification pair per episode, alternating positive / negative.
  std::vector<int> pair_labels;
  std::vector<double> pair_probabilities;
  std::vector<std::vector<double>> pair_features;  // |z1 - z2|
  std::vector<std::array<double, 2>> pca;          // empty when degenerate

  nlohmann::ordered_json to_json() const;
};

// m episodes, each seeded from (seed, episode index).
EvalReport run_eval(const data::Dataset& ds, Embedder& embedder, std::size_t n_way, std::size_t k_shot,
                    std::size_t m, std::uint64_t seed);

}  // namespace tasnn::eval
