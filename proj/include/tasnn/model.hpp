#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tasnn/features.hpp"
#include "tasnn/losses.hpp"
#include "tasnn/tensor_ops.hpp"

namespace tasnn::model {

struct ModelConfig {
  std::vector<std::size_t> conv_channels{16, 32, 32, 64};
  std::vector<std::size_t> conv_kernels{5, 3, 3, 3};
  std::vector<std::size_t> conv_strides{2, 1, 1, 1};
  std::size_t pool_size = 2;  // max pooling after every conv layer but the last
  std::size_t fc_hidden = 512;
  std::size_t embedding_dim = 64;
  std::size_t task_input_dim = 256;
  std::size_t task_hidden = 512;
  // How many of the two FC layers (counted from the top) take generated weights.
  std::size_t conditioned_layers = 2;
  // false: task weights are fixed at 1 and no meta-learner exists (plain SNN).
  bool task_aware = true;
  double beta = 0.8;
  double center_loss_weight = 0.5;  // lambda
  double center_update_rate = 0.5;  // alpha
  double input_scale = 1.0 / 255.0;
  double initial_shift = 1.0;
  std::uint64_t init_seed = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup { image, task_embedding };

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  ParamGroup group = ParamGroup::image;
};

using ParameterGrads = std::vector<std::vector<double>>;

// W[r, c] = shared[r, c] * task[c].
nn::RowMatrix compose_weights(const nn::RowMatrix& shared, std::span<const double> task);

double euclidean_distance(std::span<const double> a, std::span<const double> b);

// Generated per-layer column scales for fc1 (fc_hidden) and fc2 (embedding_dim).
// Layers that are not conditioned carry all-ones vectors.
struct TaskWeights {
  std::vector<double> fc1;
  std::vector<double> fc2;
};

// A training batch. Pairs reference images and task slots by index; each pair
// is embedded on both branches under the same task slot.
struct PairBatch {
  struct Pair {
    std::size_t first = 0;
    std::size_t second = 0;
    std::size_t task = 0;
  };

  std::vector<const features::MalwareImage*> images;
  std::vector<int> image_labels;
  std::vector<std::vector<double>> task_features;
  std::vector<int> task_labels;  // class of each task slot, distinct
  std::vector<Pair> pairs;

  // y_d = 1 iff both images of the pair share a class label.
  std::vector<int> pair_labels() const;
  void validate(std::size_t task_dim) const;
};

struct BatchOutput {
  double loss = 0.0;
  double embedding_loss = 0.0;
  double binary_loss = 0.0;
  double center_loss = 0.0;
  std::vector<int> pair_labels;
  std::vector<double> distances;
  std::vector<double> probabilities;
  std::vector<double> distance_features;  // pairs x embedding_dim, |z1 - z2|
};

// Task-independent part of an image's forward pass: the fc1 pre-activation
// before task scaling.
struct ImageCode {
  std::vector<double> fc1_input_product;
};

class TaskAwareSiamese {
 public:
  explicit TaskAwareSiamese(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  std::size_t flat_features() const { return flat_; }
  std::size_t parameter_count() const;

  TaskWeights generate_task_weights(std::span<const double> task_feature) const;

  ImageCode encode_image(const features::MalwareImage& x) const;
  std::vector<double> head(const ImageCode& code, const TaskWeights& task) const;

  std::vector<double> embed(const features::MalwareImage& x, std::span<const double> task_feature) const;
  double pair_distance(const features::MalwareImage& x1, const features::MalwareImage& x2,
                       std::span<const double> task_feature) const;
  double shift() const;

  // Hybrid loss over the batch. When `grads` is non-null it receives
  // gradients shaped like parameters().
  BatchOutput forward_backward(const PairBatch& batch, const ClassCenters& centers,
                               ParameterGrads* grads) const;

  ParameterGrads zero_grads() const;

 private:
  struct ConvLayer {
    nn::ConvShape conv;
    bool pooled = false;
    nn::PoolShape pool;
  };
  struct TrunkCache;
  struct TaskCache;

  void trunk_forward(const features::MalwareImage& x, TrunkCache& cache) const;
  void trunk_backward(const TrunkCache& cache, std::span<const double> d_flat, ParameterGrads& g) const;
  void task_forward(std::span<const double> e, TaskCache& cache) const;
  void task_backward(const TaskCache& cache, std::span<const double> d_fc1, std::span<const double> d_fc2,
                     ParameterGrads& g) const;

  std::size_t index_of(std::string_view name) const;
  void add_parameter(std::string name, std::vector<std::size_t> shape, ParamGroup group);

  ModelConfig cfg_;
  std::vector<ConvLayer> layers_;
  std::size_t flat_ = 0;
  std::vector<Parameter> params_;
  // Indices into params_.
  std::vector<std::size_t> conv_w_, conv_b_;
  std::size_t fc1_w_ = 0, fc1_b_ = 0, fc2_w_ = 0, fc2_b_ = 0, head_w_ = 0, shift_ = 0;
  std::size_t task1_w_ = 0, task1_b_ = 0, task2_w_ = 0, task2_b_ = 0;
  std::size_t gen1_w_ = 0, gen1_b_ = 0, gen2_w_ = 0, gen2_b_ = 0;
  bool gen_fc1_ = false, gen_fc2_ = false;
};

}  // namespace tasnn::model
