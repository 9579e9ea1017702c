#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "tasnn/episodes.hpp"
#include "tasnn/losses.hpp"
#include "tasnn/metrics.hpp"

using namespace tasnn;
using namespace tasnn::eval;

namespace {

// Dataset with `classes` labels and `per_class` samples each; sample i of
// class c sits at (c, i * spread) in a 2-D toy embedding.
data::Dataset grid_dataset(std::size_t classes, std::size_t per_class) {
  data::Dataset ds;
  for (std::size_t c = 0; c < classes; ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class; ++i) {
      data::Sample s;
      s.id = ds.class_names.back() + "_" + std::to_string(i);
      s.label = static_cast<int>(c);
      s.group = ds.samples.size();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

class TableEmbedder : public Embedder {
 public:
  explicit TableEmbedder(std::vector<std::vector<double>> table) : table_(std::move(table)) {}
  std::vector<double> embed(std::size_t sample, std::span<const std::size_t>) override { return table_.at(sample); }
  double probability(double d) const override { return model::pair_probability(d, 1.0); }

 private:
  std::vector<std::vector<double>> table_;
};

std::vector<std::vector<double>> class_points(const data::Dataset& ds, double spread) {
  std::vector<std::vector<double>> t;
  for (const auto& s : ds.samples) t.push_back({10.0 * s.label, spread * static_cast<double>(t.size() % 7)});
  return t;
}

}  // namespace

TEST_CASE("accuracy arithmetic") {
  CHECK(accuracy_percent(42, 50) == 84.0);
  CHECK(accuracy_percent(50, 50) == 100.0);
  CHECK(accuracy_percent(0, 1) == 0.0);
  CHECK_THROWS_AS(accuracy_percent(1, 0), std::invalid_argument);
  std::vector<double> p;
  std::vector<int> y;
  for (int i = 0; i < 25; ++i) {
    y.push_back(1);
    p.push_back(i < 19 ? 0.9 : 0.1);
  }
  for (int i = 0; i < 25; ++i) {
    y.push_back(0);
    p.push_back(i < 23 ? 0.1 : 0.9);
  }
  const auto c = confusion_counts(p, y);
  CHECK(c.tp == 19);
  CHECK(c.fn == 6);
  CHECK(c.tn == 23);
  CHECK(c.fp == 2);
  CHECK(accuracy_percent(c.correct(), c.total()) == 84.0);
}

TEST_CASE("AUC examples") {
  CHECK(auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}).auc == 0.75);
  CHECK(auc_roc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}).auc == 1.0);
  CHECK(auc_roc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}).auc == 0.0);
  CHECK(auc_roc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}).auc == 0.5);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST_CASE("AUC equals pairwise concordance and the ROC is monotone") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto n = 2 + uniform_index(rng, 40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 8)) / 8.0;  // plenty of ties
      y[i] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 0;
    y[1] = 1;
    const auto r = auc_roc(s, y);
    CHECK(r.auc == oracle::pairwise_auc(s, y));
    CHECK(r.points.front().fpr == 0.0);
    CHECK(r.points.front().tpr == 0.0);
    CHECK(r.points.back().fpr == 1.0);
    CHECK(r.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
      CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
      CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
    }
  }
}

TEST_CASE("PCA of axis-aligned data is the identity up to sign") {
  Eigen::MatrixXd x(4, 2);
  x << 3, 0, -3, 0, 0, 1, 0, -1;
  const auto p = pca_projection(x, 2);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(std::abs(std::abs(p.coords(i, 0)) - std::abs(x(i, 0))) < 1e-12);
    CHECK(std::abs(std::abs(p.coords(i, 1)) - std::abs(x(i, 1))) < 1e-12);
  }
}

TEST_CASE("PCA directions survive duplication") {
  Rng rng(4);
  Eigen::MatrixXd x(10, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -1.0, 1.0);
  Eigen::MatrixXd twice(20, 5);
  twice << x, x;
  const auto a = pca_projection(x, 2);
  const auto b = pca_projection(twice, 2);
  CHECK((a.components - b.components).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("PCA reconstruction error equals the discarded spectrum") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    Eigen::MatrixXd x(10, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -1.0, 1.0);
    const auto p = pca_projection(x, 2);
    const Eigen::MatrixXd centred = x.rowwise() - p.mean.transpose();
    const Eigen::MatrixXd recon = p.coords * p.components.transpose();
    const double err = (centred - recon).squaredNorm() / 9.0;
    // Reference spectrum from a full decomposition of the covariance.
    const Eigen::MatrixXd cov = centred.transpose() * centred / 9.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(cov);
    const double discarded = full.eigenvalues().head(3).sum();
    CHECK(err == doctest::Approx(discarded).epsilon(1e-10));
  }
  CHECK_THROWS_AS(pca_projection(Eigen::MatrixXd::Ones(5, 3), 2), std::invalid_argument);
  CHECK_THROWS_AS(pca_projection(Eigen::MatrixXd::Ones(1, 3), 2), std::invalid_argument);
}

TEST_CASE("episode sampling contracts") {
  const auto ds = grid_dataset(13, 9);
  const auto ep = sample_episode(ds, 5, 1, 42);
  CHECK(ep.classes.size() == 5);
  CHECK(std::set<int>(ep.classes.begin(), ep.classes.end()).size() == 5);
  for (const auto& s : ep.support) CHECK(s.size() == 1);
  CHECK(ep.query.size() == 5 * 8);
  CHECK(ds.samples[ep.anchor].label == ep.classes[ep.anchor_way]);
  CHECK(std::find(ep.query.begin(), ep.query.end(), ep.anchor) != ep.query.end());
  const auto five = sample_episode(ds, 5, 5, 42);
  for (const auto& s : five.support) CHECK(s.size() == 5);
  CHECK(five.query.size() == 5 * 4);
  CHECK_THROWS_AS(sample_episode(ds, 15, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_episode(ds, 5, 9, 1), std::invalid_argument);
  const auto again = sample_episode(ds, 5, 1, 42);
  CHECK(again.classes == ep.classes);
  CHECK(again.anchor == ep.anchor);
}

TEST_CASE("support and query never overlap") {
  const auto ds = grid_dataset(6, 4);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto ep = sample_episode(ds, 3 + seed % 4, 1 + seed % 3, seed);
    std::set<std::size_t> support;
    for (const auto& s : ep.support) support.insert(s.begin(), s.end());
    for (auto q : ep.query) {
      CHECK(support.count(q) == 0);
      CHECK(std::find(ep.classes.begin(), ep.classes.end(), ds.samples[q].label) != ep.classes.end());
    }
  }
}

TEST_CASE("prediction rules") {
  const auto ds = grid_dataset(5, 4);
  auto table = class_points(ds, 0.1);
  auto ep = sample_episode(ds, 5, 1, 7);
  // Query identical to a support sample of way 2.
  table[ep.query[0]] = table[ep.support[2][0]];
  TableEmbedder emb(table);
  const auto p = predict(ep, ep.query[0], emb);
  CHECK(p.way == 2);
  CHECK(p.scores[2] == 0.0);

  TableEmbedder flat(std::vector<std::vector<double>>(ds.samples.size(), std::vector<double>{1.0, 1.0}));
  CHECK(predict(ep, ep.query[1], flat).way == 0);
  CHECK(argmax_lowest(std::vector<double>{1.0, 3.0, 3.0}) == 1);
  // Argmax is invariant under strictly monotone maps of the scores.
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(6), mapped(6);
    for (auto& v : s) v = uniform(rng, -3.0, 3.0);
    for (std::size_t i = 0; i < s.size(); ++i) mapped[i] = std::exp(2.0 * s[i]) + 1.0;
    CHECK(argmax_lowest(s) == argmax_lowest(mapped));
  }
}

TEST_CASE("run_eval accuracy equals a manual recount") {
  const auto ds = grid_dataset(8, 6);
  Rng rng(9);
  std::vector<std::vector<double>> table;
  for (const auto& s : ds.samples) table.push_back({3.0 * s.label + uniform(rng, -2.5, 2.5), uniform(rng, -1.0, 1.0)});
  TableEmbedder emb(table);
  const auto r = run_eval(ds, emb, 5, 1, 50, 123);
  std::size_t correct = 0;
  for (std::size_t e = 0; e < 50; ++e) {
    const auto ep = sample_episode(ds, 5, 1, mix_seed(123, e));
    correct += predict(ep, ep.anchor, emb).way == ep.anchor_way ? 1 : 0;
  }
  CHECK(r.correct == correct);
  CHECK(r.accuracy == 100.0 * static_cast<double>(correct) / 50.0);
  CHECK(r.confusion.total() == 50);
  CHECK(r.confusion.tp + r.confusion.fn == 25);
  CHECK(r.confusion.tn + r.confusion.fp == 25);
  CHECK(r.auc >= 0.0);
  CHECK(r.auc <= 1.0);
  CHECK(r.pca.size() == 50);
  CHECK(run_eval(ds, emb, 5, 1, 50, 123).to_json().dump() == r.to_json().dump());
}

TEST_CASE("perfect embedder scores 100 percent") {
  const auto ds = grid_dataset(6, 5);
  TableEmbedder emb(class_points(ds, 0.0));
  const auto r = run_eval(ds, emb, 5, 1, 20, 1);
  CHECK(r.accuracy == 100.0);
  CHECK(r.auc == 1.0);
}
