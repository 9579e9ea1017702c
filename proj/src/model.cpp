#include "tasnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tasnn/common.hpp"

namespace tasnn::model {

using nn::ConstMatrixMap;
using nn::ConstVectorMap;
using nn::MatrixMap;
using nn::RowMatrix;
using nn::VectorMap;

namespace {

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

void ModelConfig::validate() const {
  if (conv_channels.empty() || conv_channels.size() != conv_kernels.size() ||
      conv_channels.size() != conv_strides.size())
    throw std::invalid_argument("model: conv_channels, conv_kernels and conv_strides must align");
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (conv_channels[i] == 0 || conv_kernels[i] == 0 || conv_strides[i] == 0)
      throw std::invalid_argument("model: conv dimensions must be positive");
  }
  if (pool_size == 0 || fc_hidden == 0 || embedding_dim == 0 || task_input_dim == 0 || task_hidden == 0)
    throw std::invalid_argument("model: dimensions must be positive");
  if (conditioned_layers > 2) throw std::invalid_argument("model: at most 2 FC layers can be conditioned");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("model: beta must lie in [0, 1]");
  if (center_loss_weight < 0.0) throw std::invalid_argument("model: center loss weight must be >= 0");
  if (center_update_rate < 0.0 || center_update_rate > 1.0)
    throw std::invalid_argument("model: center update rate must lie in [0, 1]");
  if (!(input_scale > 0.0)) throw std::invalid_argument("model: input_scale must be positive");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["conv_channels"] = conv_channels;
  j["conv_kernels"] = conv_kernels;
  j["conv_strides"] = conv_strides;
  j["pool_size"] = pool_size;
  j["fc_hidden"] = fc_hidden;
  j["embedding_dim"] = embedding_dim;
  j["task_input_dim"] = task_input_dim;
  j["task_hidden"] = task_hidden;
  j["conditioned_layers"] = conditioned_layers;
  j["task_aware"] = task_aware;
  j["beta"] = beta;
  j["center_loss_weight"] = center_loss_weight;
  j["center_update_rate"] = center_update_rate;
  j["input_scale"] = input_scale;
  j["initial_shift"] = initial_shift;
  j["init_seed"] = init_seed;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("conv_channels", c.conv_channels);
  get("conv_kernels", c.conv_kernels);
  get("conv_strides", c.conv_strides);
  get("pool_size", c.pool_size);
  get("fc_hidden", c.fc_hidden);
  get("embedding_dim", c.embedding_dim);
  get("task_input_dim", c.task_input_dim);
  get("task_hidden", c.task_hidden);
  get("conditioned_layers", c.conditioned_layers);
  get("task_aware", c.task_aware);
  get("beta", c.beta);
  get("center_loss_weight", c.center_loss_weight);
  get("center_update_rate", c.center_update_rate);
  get("input_scale", c.input_scale);
  get("initial_shift", c.initial_shift);
  get("init_seed", c.init_seed);
  return c;
}

RowMatrix compose_weights(const RowMatrix& shared, std::span<const double> task) {
  if (static_cast<std::size_t>(shared.cols()) != task.size())
    throw std::invalid_argument("compose_weights: task vector length must equal the shared column count");
  RowMatrix out(shared.rows(), shared.cols());
  for (Eigen::Index r = 0; r < shared.rows(); ++r)
    for (Eigen::Index c = 0; c < shared.cols(); ++c) out(r, c) = shared(r, c) * task[static_cast<std::size_t>(c)];
  return out;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("euclidean_distance: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

std::vector<int> PairBatch::pair_labels() const {
  std::vector<int> y;
  y.reserve(pairs.size());
  for (const auto& p : pairs) y.push_back(image_labels.at(p.first) == image_labels.at(p.second) ? 1 : 0);
  return y;
}

void PairBatch::validate(std::size_t task_dim) const {
  if (images.size() != image_labels.size()) throw std::invalid_argument("PairBatch: one label per image required");
  if (task_features.size() != task_labels.size())
    throw std::invalid_argument("PairBatch: one label per task slot required");
  if (pairs.empty()) throw std::invalid_argument("PairBatch: no pairs");
  for (const auto* img : images) {
    if (img == nullptr) throw std::invalid_argument("PairBatch: null image");
  }
  for (const auto& e : task_features) {
    if (e.size() != task_dim) throw std::invalid_argument("PairBatch: task feature dimension mismatch");
  }
  auto sorted = task_labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("PairBatch: task slot labels must be distinct");
  for (const auto& p : pairs) {
    if (p.first >= images.size() || p.second >= images.size() || p.task >= task_features.size())
      throw std::invalid_argument("PairBatch: pair index out of range");
  }
}

struct TaskAwareSiamese::TrunkCache {
  std::vector<std::vector<double>> cols;
  std::vector<std::vector<double>> conv_out;  // post-ReLU
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<double> flat;
};

struct TaskAwareSiamese::TaskCache {
  std::vector<double> input, h1, h2, g1_pre, g2_pre;
  TaskWeights weights;
};

void TaskAwareSiamese::add_parameter(std::string name, std::vector<std::size_t> shape, ParamGroup group) {
  const auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  params_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0), group});
}

TaskAwareSiamese::TaskAwareSiamese(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t ch = 1, h = features::kImageSide, w = features::kImageSide;
  for (std::size_t l = 0; l < cfg_.conv_channels.size(); ++l) {
    ConvLayer layer;
    layer.conv = {ch, cfg_.conv_channels[l], cfg_.conv_kernels[l], cfg_.conv_strides[l], h, w};
    if (!layer.conv.valid()) throw std::invalid_argument("model: conv stack too deep for 105x105 input");
    ch = layer.conv.out_channels;
    h = layer.conv.out_h();
    w = layer.conv.out_w();
    layer.pooled = l + 1 < cfg_.conv_channels.size();
    if (layer.pooled) {
      layer.pool = {ch, h, w, cfg_.pool_size};
      h = layer.pool.out_h();
      w = layer.pool.out_w();
      if (h == 0 || w == 0) throw std::invalid_argument("model: pooling collapses the feature map");
    }
    layers_.push_back(layer);
  }
  flat_ = ch * h * w;
  gen_fc2_ = cfg_.task_aware && cfg_.conditioned_layers >= 1;
  gen_fc1_ = cfg_.task_aware && cfg_.conditioned_layers >= 2;

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& c = layers_[l].conv;
    conv_w_.push_back(params_.size());
    add_parameter("conv" + std::to_string(l + 1) + ".weight", {c.out_channels, c.in_channels, c.kernel, c.kernel},
                  ParamGroup::image);
    conv_b_.push_back(params_.size());
    add_parameter("conv" + std::to_string(l + 1) + ".bias", {c.out_channels}, ParamGroup::image);
  }
  fc1_w_ = params_.size();
  add_parameter("fc1.shared_weight", {flat_, cfg_.fc_hidden}, ParamGroup::image);
  fc1_b_ = params_.size();
  add_parameter("fc1.bias", {cfg_.fc_hidden}, ParamGroup::image);
  fc2_w_ = params_.size();
  add_parameter("fc2.shared_weight", {cfg_.fc_hidden, cfg_.embedding_dim}, ParamGroup::image);
  fc2_b_ = params_.size();
  add_parameter("fc2.bias", {cfg_.embedding_dim}, ParamGroup::image);
  head_w_ = params_.size();
  add_parameter("task_head.weight", {cfg_.embedding_dim}, ParamGroup::image);
  shift_ = params_.size();
  add_parameter("pair.shift", {1}, ParamGroup::image);
  if (cfg_.task_aware) {
    task1_w_ = params_.size();
    add_parameter("task_net.fc1.weight", {cfg_.task_input_dim, cfg_.task_hidden}, ParamGroup::task_embedding);
    task1_b_ = params_.size();
    add_parameter("task_net.fc1.bias", {cfg_.task_hidden}, ParamGroup::task_embedding);
    task2_w_ = params_.size();
    add_parameter("task_net.fc2.weight", {cfg_.task_hidden, cfg_.task_hidden}, ParamGroup::task_embedding);
    task2_b_ = params_.size();
    add_parameter("task_net.fc2.bias", {cfg_.task_hidden}, ParamGroup::task_embedding);
    if (gen_fc1_) {
      gen1_w_ = params_.size();
      add_parameter("generator.fc1.weight", {cfg_.task_hidden, cfg_.fc_hidden}, ParamGroup::image);
      gen1_b_ = params_.size();
      add_parameter("generator.fc1.bias", {cfg_.fc_hidden}, ParamGroup::image);
    }
    if (gen_fc2_) {
      gen2_w_ = params_.size();
      add_parameter("generator.fc2.weight", {cfg_.task_hidden, cfg_.embedding_dim}, ParamGroup::image);
      gen2_b_ = params_.size();
      add_parameter("generator.fc2.bias", {cfg_.embedding_dim}, ParamGroup::image);
    }
  }

  // Seeded uniform fan-in initialization; draw order follows parameter order.
  Rng rng(mix_seed(cfg_.init_seed, 0x1417));
  auto fill = [&](std::size_t idx, double bound) {
    for (auto& v : params_[idx].value) v = uniform(rng, -bound, bound);
  };
  for (std::size_t l = 0; l < layers_.size(); ++l)
    fill(conv_w_[l], std::sqrt(6.0 / static_cast<double>(layers_[l].conv.patch())));
  fill(fc1_w_, std::sqrt(6.0 / static_cast<double>(flat_)));
  fill(fc2_w_, std::sqrt(3.0 / static_cast<double>(cfg_.fc_hidden)));
  fill(head_w_, std::sqrt(3.0 / static_cast<double>(cfg_.embedding_dim)));
  params_[shift_].value[0] = cfg_.initial_shift;
  if (cfg_.task_aware) {
    fill(task1_w_, std::sqrt(6.0 / static_cast<double>(cfg_.task_input_dim)));
    fill(task2_w_, std::sqrt(6.0 / static_cast<double>(cfg_.task_hidden)));
    // Generators start near the identity factorization (outputs close to 1).
    const double gen_bound = 0.1 * std::sqrt(3.0 / static_cast<double>(cfg_.task_hidden));
    if (gen_fc1_) {
      fill(gen1_w_, gen_bound);
      std::fill(params_[gen1_b_].value.begin(), params_[gen1_b_].value.end(), 1.0);
    }
    if (gen_fc2_) {
      fill(gen2_w_, gen_bound);
      std::fill(params_[gen2_b_].value.begin(), params_[gen2_b_].value.end(), 1.0);
    }
  }
}

std::size_t TaskAwareSiamese::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw std::invalid_argument("unknown parameter " + std::string(name));
}

Parameter& TaskAwareSiamese::parameter(std::string_view name) { return params_[index_of(name)]; }
const Parameter& TaskAwareSiamese::parameter(std::string_view name) const { return params_[index_of(name)]; }

std::size_t TaskAwareSiamese::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

double TaskAwareSiamese::shift() const { return params_[shift_].value[0]; }

ParameterGrads TaskAwareSiamese::zero_grads() const {
  ParameterGrads g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

void TaskAwareSiamese::trunk_forward(const features::MalwareImage& x, TrunkCache& cache) const {
  const auto n_layers = layers_.size();
  cache.cols.resize(n_layers);
  cache.conv_out.resize(n_layers);
  cache.argmax.resize(n_layers);
  std::vector<double> cur(x.pixels.size());
  std::transform(x.pixels.begin(), x.pixels.end(), cur.begin(), [&](double v) { return v * cfg_.input_scale; });
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = layers_[l];
    auto& out = cache.conv_out[l];
    out.resize(layer.conv.out_channels * layer.conv.out_h() * layer.conv.out_w());
    nn::conv2d_forward(layer.conv, cur, params_[conv_w_[l]].value, params_[conv_b_[l]].value, out, cache.cols[l]);
    nn::relu_inplace(out);
    if (layer.pooled) {
      cur.resize(layer.pool.channels * layer.pool.out_h() * layer.pool.out_w());
      nn::maxpool_forward(layer.pool, out, cur, cache.argmax[l]);
    } else {
      cur = out;
    }
  }
  cache.flat = std::move(cur);
}

void TaskAwareSiamese::trunk_backward(const TrunkCache& cache, std::span<const double> d_flat,
                                      ParameterGrads& g) const {
  std::vector<double> d(d_flat.begin(), d_flat.end());
  std::vector<double> d_conv, d_in;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& out = cache.conv_out[l];
    if (layer.pooled) {
      d_conv.resize(out.size());
      nn::maxpool_backward(layer.pool, cache.argmax[l], d, d_conv);
    } else {
      d_conv = d;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] <= 0.0) d_conv[i] = 0.0;
    }
    if (l > 0) {
      d_in.resize(layer.conv.in_channels * layer.conv.in_h * layer.conv.in_w);
      nn::conv2d_backward(layer.conv, cache.cols[l], params_[conv_w_[l]].value, d_conv, g[conv_w_[l]],
                          g[conv_b_[l]], d_in);
      d.swap(d_in);
    } else {
      nn::conv2d_backward(layer.conv, cache.cols[l], params_[conv_w_[l]].value, d_conv, g[conv_w_[l]],
                          g[conv_b_[l]], {});
    }
  }
}

void TaskAwareSiamese::task_forward(std::span<const double> e, TaskCache& cache) const {
  if (e.size() != cfg_.task_input_dim)
    throw std::invalid_argument("task feature has dimension " + std::to_string(e.size()) + ", model expects " +
                                std::to_string(cfg_.task_input_dim));
  cache.weights.fc1.assign(cfg_.fc_hidden, 1.0);
  cache.weights.fc2.assign(cfg_.embedding_dim, 1.0);
  if (!cfg_.task_aware) return;
  const auto in = ix(cfg_.task_input_dim);
  const auto hid = ix(cfg_.task_hidden);
  cache.input.assign(e.begin(), e.end());
  cache.h1.resize(cfg_.task_hidden);
  cache.h2.resize(cfg_.task_hidden);
  VectorMap h1(cache.h1.data(), hid);
  h1.noalias() = ConstMatrixMap(params_[task1_w_].value.data(), in, hid).transpose() * ConstVectorMap(e.data(), in);
  h1 += ConstVectorMap(params_[task1_b_].value.data(), hid);
  h1 = h1.cwiseMax(0.0);
  VectorMap h2(cache.h2.data(), hid);
  h2.noalias() = ConstMatrixMap(params_[task2_w_].value.data(), hid, hid).transpose() * h1;
  h2 += ConstVectorMap(params_[task2_b_].value.data(), hid);
  h2 = h2.cwiseMax(0.0);
  auto generate = [&](std::size_t w_idx, std::size_t b_idx, std::size_t out_dim, std::vector<double>& pre,
                      std::vector<double>& out) {
    pre.resize(out_dim);
    VectorMap p(pre.data(), ix(out_dim));
    p.noalias() = ConstMatrixMap(params_[w_idx].value.data(), hid, ix(out_dim)).transpose() * h2;
    p += ConstVectorMap(params_[b_idx].value.data(), ix(out_dim));
    for (std::size_t i = 0; i < out_dim; ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
  };
  if (gen_fc1_) generate(gen1_w_, gen1_b_, cfg_.fc_hidden, cache.g1_pre, cache.weights.fc1);
  if (gen_fc2_) generate(gen2_w_, gen2_b_, cfg_.embedding_dim, cache.g2_pre, cache.weights.fc2);
}

void TaskAwareSiamese::task_backward(const TaskCache& cache, std::span<const double> d_fc1,
                                     std::span<const double> d_fc2, ParameterGrads& g) const {
  if (!cfg_.task_aware) return;
  const auto in = ix(cfg_.task_input_dim);
  const auto hid = ix(cfg_.task_hidden);
  Eigen::VectorXd dh2 = Eigen::VectorXd::Zero(hid);
  ConstVectorMap h2(cache.h2.data(), hid);
  auto generator_backward = [&](std::size_t w_idx, std::size_t b_idx, std::size_t out_dim,
                                const std::vector<double>& pre, std::span<const double> d_out) {
    Eigen::VectorXd dp(ix(out_dim));
    for (std::size_t i = 0; i < out_dim; ++i) dp(ix(i)) = pre[i] > 0.0 ? d_out[i] : 0.0;
    MatrixMap(g[w_idx].data(), hid, ix(out_dim)).noalias() += h2 * dp.transpose();
    VectorMap(g[b_idx].data(), ix(out_dim)) += dp;
    dh2.noalias() += ConstMatrixMap(params_[w_idx].value.data(), hid, ix(out_dim)) * dp;
  };
  if (gen_fc1_) generator_backward(gen1_w_, gen1_b_, cfg_.fc_hidden, cache.g1_pre, d_fc1);
  if (gen_fc2_) generator_backward(gen2_w_, gen2_b_, cfg_.embedding_dim, cache.g2_pre, d_fc2);
  for (Eigen::Index i = 0; i < hid; ++i) {
    if (h2(i) <= 0.0) dh2(i) = 0.0;
  }
  ConstVectorMap h1(cache.h1.data(), hid);
  MatrixMap(g[task2_w_].data(), hid, hid).noalias() += h1 * dh2.transpose();
  VectorMap(g[task2_b_].data(), hid) += dh2;
  Eigen::VectorXd dh1 = ConstMatrixMap(params_[task2_w_].value.data(), hid, hid) * dh2;
  for (Eigen::Index i = 0; i < hid; ++i) {
    if (h1(i) <= 0.0) dh1(i) = 0.0;
  }
  MatrixMap(g[task1_w_].data(), in, hid).noalias() += ConstVectorMap(cache.input.data(), in) * dh1.transpose();
  VectorMap(g[task1_b_].data(), hid) += dh1;
}

TaskWeights TaskAwareSiamese::generate_task_weights(std::span<const double> task_feature) const {
  TaskCache cache;
  task_forward(task_feature, cache);
  return std::move(cache.weights);
}

ImageCode TaskAwareSiamese::encode_image(const features::MalwareImage& x) const {
  TrunkCache cache;
  trunk_forward(x, cache);
  ImageCode code;
  code.fc1_input_product.resize(cfg_.fc_hidden);
  VectorMap(code.fc1_input_product.data(), ix(cfg_.fc_hidden)).noalias() =
      ConstMatrixMap(params_[fc1_w_].value.data(), ix(flat_), ix(cfg_.fc_hidden)).transpose() *
      ConstVectorMap(cache.flat.data(), ix(flat_));
  return code;
}

std::vector<double> TaskAwareSiamese::head(const ImageCode& code, const TaskWeights& task) const {
  const auto hid = ix(cfg_.fc_hidden);
  const auto emb = ix(cfg_.embedding_dim);
  if (code.fc1_input_product.size() != cfg_.fc_hidden || task.fc1.size() != cfg_.fc_hidden ||
      task.fc2.size() != cfg_.embedding_dim)
    throw std::invalid_argument("head: shape mismatch");
  Eigen::VectorXd h = ConstVectorMap(code.fc1_input_product.data(), hid).cwiseProduct(ConstVectorMap(task.fc1.data(), hid)) +
                      ConstVectorMap(params_[fc1_b_].value.data(), hid);
  h = h.cwiseMax(0.0);
  const Eigen::VectorXd q = ConstMatrixMap(params_[fc2_w_].value.data(), hid, emb).transpose() * h;
  std::vector<double> z(cfg_.embedding_dim);
  VectorMap(z.data(), emb) = q.cwiseProduct(ConstVectorMap(task.fc2.data(), emb)) +
                             ConstVectorMap(params_[fc2_b_].value.data(), emb);
  return z;
}

std::vector<double> TaskAwareSiamese::embed(const features::MalwareImage& x,
                                            std::span<const double> task_feature) const {
  return head(encode_image(x), generate_task_weights(task_feature));
}

double TaskAwareSiamese::pair_distance(const features::MalwareImage& x1, const features::MalwareImage& x2,
                                       std::span<const double> task_feature) const {
  const auto task = generate_task_weights(task_feature);
  return euclidean_distance(head(encode_image(x1), task), head(encode_image(x2), task));
}

BatchOutput TaskAwareSiamese::forward_backward(const PairBatch& batch, const ClassCenters& centers,
                                               ParameterGrads* grads) const {
  batch.validate(cfg_.task_input_dim);
  if (centers.dim() != cfg_.embedding_dim || centers.size() < 2)
    throw std::invalid_argument("forward_backward: centers must hold 2 labels of embedding_dim");

  const auto n_img = batch.images.size();
  const auto n_task = batch.task_features.size();
  const auto hid = ix(cfg_.fc_hidden);
  const auto emb = ix(cfg_.embedding_dim);

  // Image trunk and the task-independent fc1 product.
  std::vector<TrunkCache> trunk(n_img);
  RowMatrix feats(ix(n_img), ix(flat_));
  for (std::size_t i = 0; i < n_img; ++i) {
    trunk_forward(*batch.images[i], trunk[i]);
    feats.row(ix(i)) = ConstVectorMap(trunk[i].flat.data(), ix(flat_)).transpose();
  }
  ConstMatrixMap w1(params_[fc1_w_].value.data(), ix(flat_), hid);
  const RowMatrix a = feats * w1;

  std::vector<TaskCache> tasks(n_task);
  for (std::size_t t = 0; t < n_task; ++t) task_forward(batch.task_features[t], tasks[t]);

  // (image, task) combinations that need an embedding.
  std::vector<long> combo_of(n_img * n_task, -1);
  std::vector<std::pair<std::size_t, std::size_t>> combos;
  auto need = [&](std::size_t i, std::size_t t) {
    auto& slot = combo_of[i * n_task + t];
    if (slot < 0) {
      slot = static_cast<long>(combos.size());
      combos.emplace_back(i, t);
    }
    return static_cast<std::size_t>(slot);
  };
  for (const auto& p : batch.pairs) {
    need(p.first, p.task);
    need(p.second, p.task);
  }
  std::vector<std::size_t> le_images;
  std::vector<int> le_targets;
  if (cfg_.beta > 0.0) {
    for (std::size_t i = 0; i < n_img; ++i) {
      const auto it = std::find(batch.task_labels.begin(), batch.task_labels.end(), batch.image_labels[i]);
      if (it == batch.task_labels.end()) continue;
      le_images.push_back(i);
      le_targets.push_back(static_cast<int>(it - batch.task_labels.begin()));
      for (std::size_t t = 0; t < n_task; ++t) need(i, t);
    }
  }

  const auto n_combo = combos.size();
  RowMatrix h_pre(ix(n_combo), hid);
  for (std::size_t c = 0; c < n_combo; ++c) {
    const auto [i, t] = combos[c];
    h_pre.row(ix(c)) = a.row(ix(i)).cwiseProduct(ConstVectorMap(tasks[t].weights.fc1.data(), hid).transpose()) +
                       ConstVectorMap(params_[fc1_b_].value.data(), hid).transpose();
  }
  const RowMatrix h = h_pre.cwiseMax(0.0);
  ConstMatrixMap w2(params_[fc2_w_].value.data(), hid, emb);
  const RowMatrix q = h * w2;
  RowMatrix z(ix(n_combo), emb);
  for (std::size_t c = 0; c < n_combo; ++c) {
    const auto t = combos[c].second;
    z.row(ix(c)) = q.row(ix(c)).cwiseProduct(ConstVectorMap(tasks[t].weights.fc2.data(), emb).transpose()) +
                   ConstVectorMap(params_[fc2_b_].value.data(), emb).transpose();
  }

  // Pair losses.
  BatchOutput out;
  out.pair_labels = batch.pair_labels();
  const auto n_pair = batch.pairs.size();
  RowMatrix diff(ix(n_pair), emb);
  out.distances.resize(n_pair);
  out.distance_features.resize(n_pair * cfg_.embedding_dim);
  for (std::size_t p = 0; p < n_pair; ++p) {
    const auto& pr = batch.pairs[p];
    diff.row(ix(p)) = z.row(ix(need(pr.first, pr.task))) - z.row(ix(need(pr.second, pr.task)));
    out.distances[p] = diff.row(ix(p)).norm();
    for (Eigen::Index k = 0; k < emb; ++k)
      out.distance_features[p * cfg_.embedding_dim + static_cast<std::size_t>(k)] = std::abs(diff(ix(p), k));
  }
  const auto bce = bce_loss(out.distances, out.pair_labels, shift());
  out.probabilities = bce.probability;
  out.binary_loss = bce.loss;
  const auto cl = center_loss(out.distance_features, out.pair_labels, centers);
  out.center_loss = cl.loss;

  ConstVectorMap head_w(params_[head_w_].value.data(), emb);
  EmbeddingLossResult el;
  if (!le_images.empty()) {
    std::vector<double> logits(le_images.size() * n_task);
    for (std::size_t r = 0; r < le_images.size(); ++r)
      for (std::size_t t = 0; t < n_task; ++t)
        logits[r * n_task + t] = z.row(ix(need(le_images[r], t))).dot(head_w.transpose());
    el = embedding_loss(logits, n_task, le_targets);
    out.embedding_loss = el.loss;
  }
  out.loss = hybrid_loss(out.embedding_loss, out.binary_loss, out.center_loss, cfg_.beta, cfg_.center_loss_weight);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
  if (grads == nullptr) return out;

  auto& g = *grads;
  if (g.size() != params_.size()) g = zero_grads();

  RowMatrix dz = RowMatrix::Zero(ix(n_combo), emb);
  const double lambda = cfg_.center_loss_weight;
  for (std::size_t p = 0; p < n_pair; ++p) {
    const auto& pr = batch.pairs[p];
    const double d = out.distances[p];
    const double gd = bce.d_distance[p];
    Eigen::RowVectorXd dp(emb);
    for (Eigen::Index k = 0; k < emb; ++k) {
      const double df = diff(ix(p), k);
      const double sign = df > 0.0 ? 1.0 : (df < 0.0 ? -1.0 : 0.0);
      dp(k) = (d > 0.0 ? gd * df / d : 0.0) +
              lambda * cl.d_features[p * cfg_.embedding_dim + static_cast<std::size_t>(k)] * sign;
    }
    dz.row(ix(need(pr.first, pr.task))) += dp;
    dz.row(ix(need(pr.second, pr.task))) -= dp;
  }
  g[shift_][0] += bce.d_shift;
  if (!le_images.empty()) {
    VectorMap d_head(g[head_w_].data(), emb);
    for (std::size_t r = 0; r < le_images.size(); ++r) {
      for (std::size_t t = 0; t < n_task; ++t) {
        const double gl = cfg_.beta * el.d_logits[r * n_task + t];
        const auto c = ix(need(le_images[r], t));
        dz.row(c) += gl * head_w.transpose();
        d_head += gl * z.row(c).transpose();
      }
    }
  }

  // fc2 with generated column scales.
  RowMatrix dq(ix(n_combo), emb);
  std::vector<Eigen::VectorXd> d_task_fc1(n_task, Eigen::VectorXd::Zero(hid));
  std::vector<Eigen::VectorXd> d_task_fc2(n_task, Eigen::VectorXd::Zero(emb));
  for (std::size_t c = 0; c < n_combo; ++c) {
    const auto t = combos[c].second;
    dq.row(ix(c)) = dz.row(ix(c)).cwiseProduct(ConstVectorMap(tasks[t].weights.fc2.data(), emb).transpose());
    d_task_fc2[t] += dz.row(ix(c)).cwiseProduct(q.row(ix(c))).transpose();
  }
  VectorMap(g[fc2_b_].data(), emb) += dz.colwise().sum().transpose();
  MatrixMap(g[fc2_w_].data(), hid, emb).noalias() += h.transpose() * dq;
  RowMatrix dh = dq * w2.transpose();
  for (Eigen::Index r = 0; r < dh.rows(); ++r)
    for (Eigen::Index k = 0; k < hid; ++k)
      if (h_pre(r, k) <= 0.0) dh(r, k) = 0.0;
  VectorMap(g[fc1_b_].data(), hid) += dh.colwise().sum().transpose();
  RowMatrix da = RowMatrix::Zero(ix(n_img), hid);
  for (std::size_t c = 0; c < n_combo; ++c) {
    const auto [i, t] = combos[c];
    d_task_fc1[t] += dh.row(ix(c)).cwiseProduct(a.row(ix(i))).transpose();
    da.row(ix(i)) += dh.row(ix(c)).cwiseProduct(ConstVectorMap(tasks[t].weights.fc1.data(), hid).transpose());
  }
  MatrixMap(g[fc1_w_].data(), ix(flat_), hid).noalias() += feats.transpose() * da;
  const RowMatrix d_feats = da * w1.transpose();
  std::vector<double> d_flat(flat_);
  for (std::size_t i = 0; i < n_img; ++i) {
    VectorMap(d_flat.data(), ix(flat_)) = d_feats.row(ix(i)).transpose();
    trunk_backward(trunk[i], d_flat, g);
  }
  for (std::size_t t = 0; t < n_task; ++t) {
    task_backward(tasks[t], std::span<const double>(d_task_fc1[t].data(), cfg_.fc_hidden),
                  std::span<const double>(d_task_fc2[t].data(), cfg_.embedding_dim), g);
  }
  return out;
}

}  // namespace tasnn::model
