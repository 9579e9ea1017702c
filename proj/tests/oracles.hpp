#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's numeric kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tasnn/common.hpp"
#include "tasnn/features.hpp"
#include "tasnn/losses.hpp"
#include "tasnn/model.hpp"

namespace oracle {

inline double histogram_entropy(const std::uint8_t* data, std::size_t n) {
  std::array<std::uint64_t, 256> counts{};
  for (std::size_t i = 0; i < n; ++i) counts[data[i]]++;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

inline std::vector<double> entropy_series(const std::vector<std::uint8_t>& bytes, std::size_t seg) {
  std::vector<double> out;
  for (std::size_t lo = 0; lo < bytes.size(); lo += seg)
    out.push_back(histogram_entropy(bytes.data() + lo, std::min(seg, bytes.size() - lo)));
  return out;
}

// Fraction of (positive, negative) pairs ranked correctly, ties count half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0, np = 0, nn = 0;
  for (int v : y) (v == 1 ? np : nn)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * np * nn);
}

// Plain Siamese network written with direct loops: valid conv + ReLU +
// max pool stack, two dense layers, Euclidean distance, sigmoid(shift - d),
// binary cross-entropy. Weights are looked up by name in a model.
class GenericSnn {
 public:
  explicit GenericSnn(const tasnn::model::TaskAwareSiamese& m) : m_(m) {}

  std::vector<double> embed(const tasnn::features::MalwareImage& img) const {
    const auto& cfg = m_.config();
    std::size_t ch = 1, h = tasnn::features::kImageSide, w = h;
    std::vector<double> x(img.pixels.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = img.pixels[i] * cfg.input_scale;
    const auto n_layers = cfg.conv_channels.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& W = m_.parameter("conv" + std::to_string(l + 1) + ".weight").value;
      const auto& B = m_.parameter("conv" + std::to_string(l + 1) + ".bias").value;
      const auto oc = cfg.conv_channels[l], k = cfg.conv_kernels[l], s = cfg.conv_strides[l];
      const auto oh = (h - k) / s + 1, ow = (w - k) / s + 1;
      std::vector<double> y(oc * oh * ow);
      for (std::size_t o = 0; o < oc; ++o)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = B[o];
            for (std::size_t i = 0; i < ch; ++i)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b)
                  acc += W[((o * ch + i) * k + a) * k + b] * x[(i * h + r * s + a) * w + c * s + b];
            y[(o * oh + r) * ow + c] = std::max(acc, 0.0);
          }
      ch = oc;
      h = oh;
      w = ow;
      x = std::move(y);
      if (l + 1 < n_layers) {
        const auto p = cfg.pool_size, ph = h / p, pw = w / p;
        std::vector<double> z(ch * ph * pw);
        for (std::size_t o = 0; o < ch; ++o)
          for (std::size_t r = 0; r < ph; ++r)
            for (std::size_t c = 0; c < pw; ++c) {
              double best = -INFINITY;
              for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b) best = std::max(best, x[(o * h + r * p + a) * w + c * p + b]);
              z[(o * ph + r) * pw + c] = best;
            }
        h = ph;
        w = pw;
        x = std::move(z);
      }
    }
    const auto dense = [&](const std::vector<double>& in, const std::string& layer, std::size_t out_dim, bool relu) {
      const auto& W = m_.parameter(layer + ".shared_weight").value;
      const auto& B = m_.parameter(layer + ".bias").value;
      std::vector<double> out(out_dim);
      for (std::size_t j = 0; j < out_dim; ++j) {
        double acc = B[j];
        for (std::size_t i = 0; i < in.size(); ++i) acc += in[i] * W[i * out_dim + j];
        out[j] = relu ? std::max(acc, 0.0) : acc;
      }
      return out;
    };
    return dense(dense(x, "fc1", cfg.fc_hidden, true), "fc2", cfg.embedding_dim, false);
  }

  double distance(const tasnn::features::MalwareImage& a, const tasnn::features::MalwareImage& b) const {
    const auto za = embed(a), zb = embed(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < za.size(); ++i) acc += (za[i] - zb[i]) * (za[i] - zb[i]);
    return std::sqrt(acc);
  }

  double loss(const tasnn::model::PairBatch& batch) const {
    const double shift = m_.parameter("pair.shift").value[0];
    double acc = 0.0;
    for (const auto& p : batch.pairs) {
      const double d = distance(*batch.images[p.first], *batch.images[p.second]);
      double prob = 1.0 / (1.0 + std::exp(d - shift));
      prob = std::min(std::max(prob, 1e-7), 1.0 - 1e-7);
      const bool same = batch.image_labels[p.first] == batch.image_labels[p.second];
      acc += same ? std::log(prob) : std::log(1.0 - prob);
    }
    return -acc / static_cast<double>(batch.pairs.size());
  }

 private:
  const tasnn::model::TaskAwareSiamese& m_;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string where;
  void add(double analytic, double numeric, const std::string& at = {}) {
    const double e = relative_error(analytic, numeric);
    if (e > worst) {
      worst = e;
      where = at + " analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
    }
    ++checked;
  }
};

// Binary cross-entropy against distances and the shift.
inline GradCheck check_bce(std::uint64_t seed) {
  tasnn::Rng rng(seed);
  const auto n = 2 + tasnn::uniform_index(rng, 9);
  std::vector<double> d(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = tasnn::uniform(rng, 0.0, 4.0);
    y[i] = static_cast<int>(tasnn::uniform_index(rng, 2));
  }
  double shift = tasnn::uniform(rng, -1.0, 3.0);
  const auto r = tasnn::model::bce_loss(d, y, shift);
  auto f = [&] { return tasnn::model::bce_loss(d, y, shift).loss; };
  GradCheck g;
  for (std::size_t i = 0; i < n; ++i) g.add(r.d_distance[i], central_difference(f, d[i]));
  g.add(r.d_shift, central_difference(f, shift));
  return g;
}

// Embedding cross-entropy against the logits.
inline GradCheck check_embedding(std::uint64_t seed) {
  tasnn::Rng rng(seed);
  const auto n = 1 + tasnn::uniform_index(rng, 6);
  const auto t = 2 + tasnn::uniform_index(rng, 5);
  std::vector<double> logits(n * t);
  std::vector<int> y(n);
  for (auto& v : logits) v = tasnn::uniform(rng, -3.0, 3.0);
  for (auto& v : y) v = static_cast<int>(tasnn::uniform_index(rng, t));
  const auto r = tasnn::model::embedding_loss(logits, t, y);
  auto f = [&] { return tasnn::model::embedding_loss(logits, t, y).loss; };
  GradCheck g;
  for (std::size_t i = 0; i < logits.size(); ++i) g.add(r.d_logits[i], central_difference(f, logits[i]));
  return g;
}

// Center loss against the distance features.
inline GradCheck check_center(std::uint64_t seed) {
  tasnn::Rng rng(seed);
  const auto n = 1 + tasnn::uniform_index(rng, 8);
  const auto dim = 1 + tasnn::uniform_index(rng, 5);
  tasnn::model::ClassCenters centers(2, dim, 0.5);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v(dim);
    for (auto& x : v) x = tasnn::uniform(rng, -1.0, 1.0);
    centers.set_center(c, v);
  }
  std::vector<double> feats(n * dim);
  std::vector<int> y(n);
  for (auto& v : feats) v = tasnn::uniform(rng, -2.0, 2.0);
  for (auto& v : y) v = static_cast<int>(tasnn::uniform_index(rng, 2));
  const auto r = tasnn::model::center_loss(feats, y, centers);
  auto f = [&] { return tasnn::model::center_loss(feats, y, centers).loss; };
  GradCheck g;
  for (std::size_t i = 0; i < feats.size(); ++i) g.add(r.d_features[i], central_difference(f, feats[i]));
  return g;
}

inline tasnn::model::ModelConfig tiny_config(std::uint64_t seed, bool task_aware = true) {
  tasnn::model::ModelConfig c;
  c.conv_channels = {2, 3, 3, 4};
  c.fc_hidden = 6;
  c.embedding_dim = 4;
  c.task_input_dim = 5;
  c.task_hidden = 6;
  c.task_aware = task_aware;
  c.init_seed = seed;
  return c;
}

struct TinyBatch {
  std::vector<tasnn::features::MalwareImage> images;
  tasnn::model::PairBatch batch;
};

// Three classes, six images, two task slots, mixed pairs.
inline TinyBatch tiny_batch(std::uint64_t seed, std::size_t task_dim) {
  tasnn::Rng rng(seed);
  TinyBatch t;
  t.images.resize(6);
  for (auto& img : t.images)
    for (auto& p : img.pixels) p = static_cast<double>(tasnn::uniform_index(rng, 256));
  for (const auto& img : t.images) t.batch.images.push_back(&img);
  t.batch.image_labels = {0, 0, 1, 1, 2, 2};
  t.batch.task_labels = {0, 1};
  for (int s = 0; s < 2; ++s) {
    std::vector<double> e(task_dim);
    for (auto& v : e) v = tasnn::uniform(rng, 0.0, 1.0);
    t.batch.task_features.push_back(e);
  }
  t.batch.pairs = {{1, 0, 0}, {3, 2, 1}, {2, 0, 0}, {4, 2, 1}, {5, 1, 0}, {0, 3, 1}};
  return t;
}

// Full hybrid loss against every parameter of a tiny task-aware model.
inline GradCheck check_hybrid(std::uint64_t seed) {
  tasnn::Rng rng(seed);
  auto cfg = tiny_config(seed);
  cfg.beta = tasnn::uniform(rng, 0.2, 1.0);
  cfg.center_loss_weight = tasnn::uniform(rng, 0.1, 1.0);
  tasnn::model::TaskAwareSiamese m(cfg);
  for (auto& p : m.parameters()) {
    // Move generator outputs off the all-ones start so task scaling matters.
    if (p.name.rfind("generator", 0) == 0)
      for (auto& v : p.value) v += tasnn::uniform(rng, -0.3, 0.3);
    // Zero biases put ReLUs with dead inputs exactly on their kink.
    else if (p.name.size() > 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0)
      for (auto& v : p.value) v += tasnn::uniform(rng, 0.05, 0.2);
  }
  auto tb = tiny_batch(seed ^ 0x55, cfg.task_input_dim);
  tasnn::model::ClassCenters centers(2, cfg.embedding_dim, 0.5);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v(cfg.embedding_dim);
    for (auto& x : v) x = tasnn::uniform(rng, 0.0, 0.5);
    centers.set_center(c, v);
  }
  auto grads = m.zero_grads();
  m.forward_backward(tb.batch, centers, &grads);
  auto f = [&] { return m.forward_backward(tb.batch, centers, nullptr).loss; };
  GradCheck g;
  auto& params = m.parameters();
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].value.size(); ++i) g.add(grads[p][i], central_difference(f, params[p].value[i]),
            params[p].name + "[" + std::to_string(i) + "]");
  return g;
}

}  // namespace oracle
