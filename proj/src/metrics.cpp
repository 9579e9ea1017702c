#include "tasnn/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>

namespace tasnn::eval {

double accuracy_percent(std::size_t correct, std::size_t total) {
  if (total == 0) throw std::invalid_argument("accuracy: no trials");
  if (correct > total) throw std::invalid_argument("accuracy: more correct than trials");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

Confusion confusion_counts(std::span<const double> probabilities, std::span<const int> labels, double threshold) {
  if (probabilities.size() != labels.size()) throw std::invalid_argument("confusion: size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] > threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn)++;
    } else if (labels[i] == 0) {
      (predicted ? c.fp : c.tn)++;
    } else {
      throw std::invalid_argument("confusion: labels must be 0 or 1");
    }
  }
  return c;
}

RocResult auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc_roc: size mismatch");
  std::uint64_t n_pos = 0, n_neg = 0;
  for (const int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw std::invalid_argument("auc_roc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc_roc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.points.push_back({0.0, 0.0});
  std::uint64_t tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::uint64_t dtp = 0, dfp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? dtp : dfp)++;
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    r.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                        static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  r.auc = static_cast<double>(twice_area) / static_cast<double>(2 * n_pos * n_neg);
  return r;
}

PcaResult pca_projection(const Eigen::MatrixXd& rows, std::size_t k) {
  const auto n = rows.rows();
  const auto dim = rows.cols();
  if (n < 2 || dim < 2) throw std::invalid_argument("pca: need at least 2 samples and 2 features");
  if (k < 1 || static_cast<Eigen::Index>(k) > dim) throw std::invalid_argument("pca: invalid component count");
  PcaResult r;
  r.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centred = rows.rowwise() - r.mean.transpose();
  const auto kk = static_cast<Eigen::Index>(k);
  r.components.resize(dim, kk);
  auto set_axis = [&](Eigen::Index j, Eigen::VectorXd v) {
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.components.col(j) = v;
  };
  const double scale = std::max(1.0, centred.cwiseAbs().maxCoeff());
  if (dim <= n) {
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::invalid_argument("pca: eigendecomposition failed");
    const auto& values = solver.eigenvalues();  // ascending
    if (!(values(dim - 1) > 1e-12 * scale * scale)) throw std::invalid_argument("pca: input has rank 0");
    r.eigenvalues = values.reverse();
    for (Eigen::Index j = 0; j < kk; ++j) set_axis(j, solver.eigenvectors().col(dim - 1 - j));
  } else {
    // Wide input: thin SVD of the centred rows avoids the dim x dim covariance.
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
    const Eigen::VectorXd s = svd.singularValues();  // descending
    r.eigenvalues = Eigen::VectorXd::Zero(dim);
    r.eigenvalues.head(s.size()) = s.cwiseAbs2() / static_cast<double>(n - 1);
    if (!(r.eigenvalues(0) > 1e-12 * scale * scale)) throw std::invalid_argument("pca: input has rank 0");
    if (kk > s.size()) throw std::invalid_argument("pca: more components than samples");
    for (Eigen::Index j = 0; j < kk; ++j) set_axis(j, svd.matrixV().col(j));
  }
  r.coords = centred * r.components;
  return r;
}

}  // namespace tasnn::eval
