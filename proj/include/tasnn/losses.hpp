#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tasnn::model {

// Probabilities are clamped to [kProbabilityEpsilon, 1 - kProbabilityEpsilon]
// before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-7;

double sigmoid(double x);

// Pair probability from a Euclidean distance: sigmoid(shift - distance).
double pair_probability(double distance, double shift);

// Mean binary cross-entropy over pair probabilities.
double bce_from_probabilities(std::span<const double> p, std::span<const int> labels);

struct BceResult {
  double loss = 0.0;
  std::vector<double> probability;
  std::vector<double> d_distance;
  double d_shift = 0.0;
};

// Binary cross-entropy over pair distances mapped through pair_probability.
BceResult bce_loss(std::span<const double> distances, std::span<const int> labels, double shift);

// One center per label in distance-feature space, moved by an exponential
// moving average after each batch.
class ClassCenters {
 public:
  ClassCenters() = default;
  ClassCenters(std::size_t n_classes, std::size_t dim, double update_rate);

  std::size_t size() const { return centers_.size(); }
  std::size_t dim() const { return dim_; }
  double update_rate() const { return rate_; }
  const std::vector<double>& center(int label) const;
  void set_center(int label, std::vector<double> value);

  // c <- (1 - rate) c + rate * mean(features of that label in the batch).
  // Labels absent from the batch keep their center.
  void update(std::span<const double> features, std::span<const int> labels);

 private:
  std::size_t dim_ = 0;
  double rate_ = 0.5;
  std::vector<std::vector<double>> centers_;
};

struct CenterLossResult {
  double loss = 0.0;
  std::vector<double> d_features;  // N x dim, row-major
};

// L = 1/(2N) * sum_i ||f_i - c_{label_i}||^2 over row-major N x dim features.
CenterLossResult center_loss(std::span<const double> features, std::span<const int> labels,
                             const ClassCenters& centers);

struct EmbeddingLossResult {
  double loss = 0.0;
  std::vector<double> d_logits;  // N x T
};

// Softmax cross-entropy over per-task scores; `labels[i]` indexes a column.
EmbeddingLossResult embedding_loss(std::span<const double> logits, std::size_t n_tasks,
                                   std::span<const int> labels);

// L = beta * L_e + (L_b + lambda * L_c).
double hybrid_loss(double embedding, double binary, double center, double beta, double lambda);

}  // namespace tasnn::model
