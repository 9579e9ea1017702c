#include "tasnn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tasnn::model {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double pair_probability(double distance, double shift) { return sigmoid(shift - distance); }

double bce_from_probabilities(std::span<const double> p, std::span<const int> labels) {
  if (p.size() != labels.size() || p.empty()) throw std::invalid_argument("bce: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("bce: labels must be 0 or 1");
    const double q = std::clamp(p[i], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    acc += labels[i] == 1 ? std::log(q) : std::log(1.0 - q);
  }
  return -acc / static_cast<double>(p.size());
}

BceResult bce_loss(std::span<const double> distances, std::span<const int> labels, double shift) {
  if (distances.size() != labels.size() || distances.empty())
    throw std::invalid_argument("bce: size mismatch");
  BceResult r;
  const double inv_n = 1.0 / static_cast<double>(distances.size());
  r.probability.resize(distances.size());
  r.d_distance.resize(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const double p = pair_probability(distances[i], shift);
    r.probability[i] = p;
    const bool clamped = p < kProbabilityEpsilon || p > 1.0 - kProbabilityEpsilon;
    // d/dx of -[y log p + (1-y) log(1-p)] with p = sigmoid(x), x = shift - d.
    const double g = clamped ? 0.0 : (p - static_cast<double>(labels[i])) * inv_n;
    r.d_distance[i] = -g;
    r.d_shift += g;
  }
  r.loss = bce_from_probabilities(r.probability, labels);
  return r;
}

ClassCenters::ClassCenters(std::size_t n_classes, std::size_t dim, double update_rate)
    : dim_(dim), rate_(update_rate), centers_(n_classes, std::vector<double>(dim, 0.0)) {
  if (update_rate < 0.0 || update_rate > 1.0)
    throw std::invalid_argument("ClassCenters: update rate outside [0, 1]");
}

const std::vector<double>& ClassCenters::center(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= centers_.size())
    throw std::invalid_argument("center loss: unknown class label " + std::to_string(label));
  return centers_[static_cast<std::size_t>(label)];
}

void ClassCenters::set_center(int label, std::vector<double> value) {
  center(label);
  if (value.size() != dim_) throw std::invalid_argument("ClassCenters: dimension mismatch");
  centers_[static_cast<std::size_t>(label)] = std::move(value);
}

void ClassCenters::update(std::span<const double> features, std::span<const int> labels) {
  if (features.size() != labels.size() * dim_) throw std::invalid_argument("ClassCenters::update: size mismatch");
  std::vector<std::vector<double>> sums(centers_.size(), std::vector<double>(dim_, 0.0));
  std::vector<std::size_t> counts(centers_.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    center(labels[i]);
    const auto l = static_cast<std::size_t>(labels[i]);
    ++counts[l];
    for (std::size_t k = 0; k < dim_; ++k) sums[l][k] += features[i * dim_ + k];
  }
  for (std::size_t l = 0; l < centers_.size(); ++l) {
    if (counts[l] == 0) continue;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double mean = sums[l][k] / static_cast<double>(counts[l]);
      centers_[l][k] = (1.0 - rate_) * centers_[l][k] + rate_ * mean;
    }
  }
}

CenterLossResult center_loss(std::span<const double> features, std::span<const int> labels,
                             const ClassCenters& centers) {
  const auto dim = centers.dim();
  if (labels.empty() || features.size() != labels.size() * dim)
    throw std::invalid_argument("center loss: size mismatch");
  CenterLossResult r;
  r.d_features.resize(features.size());
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& c = centers.center(labels[i]);
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = features[i * dim + k] - c[k];
      acc += diff * diff;
      r.d_features[i * dim + k] = diff * inv_n;
    }
  }
  r.loss = 0.5 * acc * inv_n;
  return r;
}

EmbeddingLossResult embedding_loss(std::span<const double> logits, std::size_t n_tasks,
                                   std::span<const int> labels) {
  if (n_tasks == 0 || labels.empty() || logits.size() != labels.size() * n_tasks)
    throw std::invalid_argument("embedding loss: size mismatch");
  EmbeddingLossResult r;
  r.d_logits.resize(logits.size());
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_tasks)
      throw std::invalid_argument("embedding loss: label outside the task set");
    const double* row = logits.data() + i * n_tasks;
    const double mx = *std::max_element(row, row + n_tasks);
    double z = 0.0;
    for (std::size_t t = 0; t < n_tasks; ++t) z += std::exp(row[t] - mx);
    const double log_z = mx + std::log(z);
    const auto y = static_cast<std::size_t>(labels[i]);
    acc += log_z - row[y];
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const double p = std::exp(row[t] - log_z);
      r.d_logits[i * n_tasks + t] = (p - (t == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  r.loss = acc * inv_n;
  return r;
}

double hybrid_loss(double embedding, double binary, double center, double beta, double lambda) {
  return beta * embedding + (binary + lambda * center);
}

}  // namespace tasnn::model
