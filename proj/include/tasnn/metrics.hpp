#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tasnn::eval {

// 100 * correct / total.
double accuracy_percent(std::size_t correct, std::size_t total);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  std::size_t correct() const { return tp + tn; }
};

// A pair is predicted positive when its probability exceeds `threshold`.
Confusion confusion_counts(std::span<const double> probabilities, std::span<const int> labels,
                           double threshold = 0.5);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> points;  // from (0,0) to (1,1), one per distinct threshold
};

// Thresholds sweep the distinct scores from high to low; higher scores mean
// "positive". The trapezoid area is accumulated in integer counts, so tied
// scores earn exactly half credit. Throws if only one class is present.
RocResult auc_roc(std::span<const double> scores, std::span<const int> labels);

struct PcaResult {
  Eigen::MatrixXd coords;       // n x k
  Eigen::MatrixXd components;   // dim x k, unit columns
  Eigen::VectorXd eigenvalues;  // all covariance eigenvalues, descending
  Eigen::VectorXd mean;
};

// Projection of mean-centred rows onto the top-k principal axes of the
// covariance (normalised by n - 1). Each axis is signed so that its largest
// magnitude entry is positive. Throws on fewer than 2 rows or columns, or on
// rank-0 input.
PcaResult pca_projection(const Eigen::MatrixXd& rows, std::size_t k = 2);

}  // namespace tasnn::eval
