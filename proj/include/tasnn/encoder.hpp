#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tasnn/features.hpp"

namespace tasnn::features {

// Maps an entropy graph to the task feature vector consumed by the
// meta-learner. Implementations are read-only after construction, so one
// instance may be shared across threads.
class TaskEncoder {
 public:
  virtual ~TaskEncoder() = default;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<double> encode(const EntropyGraph& graph) const = 0;
  // Stable identity of the encoder weights, folded into artifact digests.
  virtual std::string fingerprint() const = 0;
};

// Small random convolutional extractor standing in for a pretrained backbone:
//   conv 64@3x3 (half the filters see only the centre cell), zero padding
//   -> relu -> global mean and max over the occupied cells
//   -> linear projection to output_dim.
// Only the first source_length cells of the graph hold entropies; the rest
// is padding and is skipped by the pooling. Weights are fixed by the seed and
// never trained.
class SeededConvEncoder final : public TaskEncoder {
 public:
  explicit SeededConvEncoder(std::uint64_t seed, std::size_t output_dim = 4096);

  std::size_t output_dim() const override { return output_dim_; }
  std::vector<double> encode(const EntropyGraph& graph) const override;
  std::string fingerprint() const override;

  // Flattened copy of every weight, for frozen-state checks.
  std::vector<double> parameters() const;

 private:
  std::uint64_t seed_;
  std::size_t output_dim_;
  std::vector<double> conv_w_, conv_b_;  // channels x 9, channels
  std::vector<double> proj_;             // output_dim x (2 * channels)
};

// Encodes and checks the result against the model's task input dimension.
std::vector<double> entropy_encode(const EntropyGraph& graph, const TaskEncoder& encoder,
                                   std::size_t expected_dim);

}  // namespace tasnn::features
