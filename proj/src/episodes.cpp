#include "tasnn/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tasnn/common.hpp"
#include "tasnn/losses.hpp"

namespace tasnn::eval {

Episode sample_episode(const data::Dataset& ds, std::size_t n_way, std::size_t k_shot, std::uint64_t seed) {
  if (n_way < 2) throw std::invalid_argument("episode: n_way must be >= 2");
  if (k_shot < 1) throw std::invalid_argument("episode: k_shot must be >= 1");
  const auto by_class = ds.by_class();
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() >= k_shot + 1) eligible.push_back(c);
  }
  if (eligible.size() < n_way)
    throw std::invalid_argument(std::to_string(n_way) + "-way " + std::to_string(k_shot) + "-shot needs " +
                                std::to_string(n_way) + " classes with " + std::to_string(k_shot + 1) +
                                "+ samples, only " + std::to_string(eligible.size()) + " qualify");
  Rng rng(mix_seed(seed, 0xe9));
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  for (const auto pick : sample_without_replacement(rng, eligible.size(), n_way)) {
    const auto c = eligible[pick];
    const auto& members = by_class[c];
    ep.classes.push_back(static_cast<int>(c));
    auto order = sample_without_replacement(rng, members.size(), members.size());
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < k_shot) support.push_back(members[order[i]]);
      else ep.query.push_back(members[order[i]]);
    }
    ep.support.push_back(std::move(support));
  }
  ep.anchor_way = static_cast<std::size_t>(uniform_index(rng, n_way));
  std::vector<std::size_t> candidates;
  for (const auto q : ep.query) {
    if (ds.samples[q].label == ep.classes[ep.anchor_way]) candidates.push_back(q);
  }
  ep.anchor = candidates[uniform_index(rng, candidates.size())];
  return ep;
}

ModelEmbedder::ModelEmbedder(const model::TaskAwareSiamese& model, const data::Dataset& ds) : model_(model), ds_(ds) {}

const model::TaskWeights& ModelEmbedder::task_weights(std::span<const std::size_t> support) {
  std::vector<std::size_t> key(support.begin(), support.end());
  std::sort(key.begin(), key.end());
  auto it = tasks_.find(key);
  if (it != tasks_.end()) return it->second;
  if (key.empty()) throw std::invalid_argument("ModelEmbedder: empty support set");
  std::vector<double> mean(ds_.samples.at(key[0]).task_feature.size(), 0.0);
  for (const auto s : key) {
    const auto& f = ds_.samples.at(s).task_feature;
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += f[d];
  }
  for (auto& v : mean) v /= static_cast<double>(key.size());
  return tasks_.emplace(std::move(key), model_.generate_task_weights(mean)).first->second;
}

std::vector<double> ModelEmbedder::embed(std::size_t sample, std::span<const std::size_t> support) {
  auto it = codes_.find(sample);
  if (it == codes_.end()) it = codes_.emplace(sample, model_.encode_image(ds_.samples.at(sample).image)).first;
  return model_.head(it->second, task_weights(support));
}

double ModelEmbedder::probability(double distance) const { return model::pair_probability(distance, model_.shift()); }

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

Prediction predict(const Episode& ep, std::size_t query, Embedder& embedder) {
  Prediction p;
  for (const auto& support : ep.support) {
    const auto zq = embedder.embed(query, support);
    double total = 0.0;
    for (const auto s : support) total += model::euclidean_distance(zq, embedder.embed(s, support));
    p.scores.push_back(-total / static_cast<double>(support.size()));
  }
  p.way = argmax_lowest(p.scores);
  return p;
}

EvalReport run_eval(const data::Dataset& ds, Embedder& embedder, std::size_t n_way, std::size_t k_shot,
                    std::size_t m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("run_eval: need at least one episode");
  EvalReport r;
  r.n_way = n_way;
  r.k_shot = k_shot;
  r.episodes = m;
  r.seed = seed;
  std::vector<double> roc_scores;
  std::vector<int> roc_labels;
  for (std::size_t e = 0; e < m; ++e) {
    const auto episode_seed = mix_seed(seed, e);
    const auto ep = sample_episode(ds, n_way, k_shot, episode_seed);
    const auto pred = predict(ep, ep.anchor, embedder);
    if (pred.way == ep.anchor_way) ++r.correct;
    for (std::size_t j = 0; j < n_way; ++j) {
      roc_scores.push_back(pred.scores[j]);
      roc_labels.push_back(j == ep.anchor_way ? 1 : 0);
    }

    Rng rng(mix_seed(episode_seed, 0xc0));
    const bool positive = e % 2 == 0;
    std::size_t way = ep.anchor_way;
    if (!positive) {
      way = static_cast<std::size_t>(uniform_index(rng, n_way - 1));
      if (way >= ep.anchor_way) ++way;
    }
    const auto& support = ep.support[way];
    const auto reference = support[uniform_index(rng, support.size())];
    const auto z1 = embedder.embed(ep.anchor, support);
    const auto z2 = embedder.embed(reference, support);
    std::vector<double> feature(z1.size());
    for (std::size_t k = 0; k < z1.size(); ++k) feature[k] = std::abs(z1[k] - z2[k]);
    r.pair_labels.push_back(positive ? 1 : 0);
    r.pair_probabilities.push_back(embedder.probability(model::euclidean_distance(z1, z2)));
    r.pair_features.push_back(std::move(feature));
  }
  r.accuracy = accuracy_percent(r.correct, m);
  r.confusion = confusion_counts(r.pair_probabilities, r.pair_labels);
  const auto roc = auc_roc(roc_scores, roc_labels);
  r.auc = roc.auc;
  r.roc = roc.points;
  if (r.pair_features.size() >= 2 && r.pair_features[0].size() >= 2) {
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(r.pair_features.size()),
                         static_cast<Eigen::Index>(r.pair_features[0].size()));
    for (std::size_t i = 0; i < r.pair_features.size(); ++i)
      for (std::size_t k = 0; k < r.pair_features[i].size(); ++k)
        rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r.pair_features[i][k];
    try {
      const auto pca = pca_projection(rows, 2);
      for (Eigen::Index i = 0; i < pca.coords.rows(); ++i) r.pca.push_back({pca.coords(i, 0), pca.coords(i, 1)});
    } catch (const std::invalid_argument&) {
      r.pca.clear();
    }
  }
  return r;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_way"] = n_way;
  j["k_shot"] = k_shot;
  j["episodes"] = episodes;
  j["seed"] = seed;
  j["correct"] = correct;
  j["accuracy"] = accuracy;
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}};
  j["auc"] = auc;
  j["roc"] = nlohmann::ordered_json::array();
  for (const auto& p : roc) j["roc"].push_back({p.fpr, p.tpr});
  j["pairs"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < pair_labels.size(); ++i) {
    nlohmann::ordered_json e;
    e["label"] = pair_labels[i];
    e["probability"] = pair_probabilities[i];
    if (!pca.empty()) e["pca"] = {pca[i][0], pca[i][1]};
    j["pairs"].push_back(std::move(e));
  }
  return j;
}

}  // namespace tasnn::eval
