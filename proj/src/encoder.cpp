#include "tasnn/encoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "tasnn/common.hpp"
#include "tasnn/tensor_ops.hpp"

namespace tasnn::features {

namespace {

constexpr std::size_t kChannels = 64;
constexpr std::size_t kPooled = 2 * kChannels;

std::vector<double> uniform_weights(Rng& rng, std::size_t n, std::size_t fan_in) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> w(n);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  return w;
}

}  // namespace

SeededConvEncoder::SeededConvEncoder(std::uint64_t seed, std::size_t output_dim)
    : seed_(seed), output_dim_(output_dim) {
  if (output_dim == 0) throw std::invalid_argument("SeededConvEncoder: output_dim must be positive");
  Rng rng(mix_seed(seed, 0xe1c0));
  conv_w_.assign(kChannels * 9, 0.0);
  conv_b_.resize(kChannels);
  for (std::size_t k = 0; k < kChannels; ++k) {
    const bool point = k % 2 == 1;
    for (std::size_t t = 0; t < 9; ++t) {
      if (point && t != 4) continue;
      conv_w_[k * 9 + t] = uniform(rng, -1.0, 1.0) * (point ? 2.0 : 1.0);
    }
    conv_b_[k] = uniform(rng, -1.0, 1.0);
  }
  proj_ = uniform_weights(rng, output_dim * kPooled, kPooled);
}

std::vector<double> SeededConvEncoder::encode(const EntropyGraph& graph) const {
  const auto& gs = graph.shape;
  if (graph.cells.size() != gs.size() || gs.rows == 0 || gs.cols == 0)
    throw std::invalid_argument("encode: malformed graph");
  const auto occupied = std::min(graph.source_length, graph.cells.size());
  const auto rows = static_cast<long>(gs.rows), cols = static_cast<long>(gs.cols);
  auto cell = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= rows || c >= cols) return 0.0;
    return graph.cells[static_cast<std::size_t>(r * cols + c)] / 8.0;
  };

  std::vector<double> pooled(kPooled, 0.0);
  std::array<double, 9> patch{};
  for (std::size_t i = 0; i < occupied; ++i) {
    const auto r = static_cast<long>(i) / cols, c = static_cast<long>(i) % cols;
    for (long dr = -1; dr <= 1; ++dr)
      for (long dc = -1; dc <= 1; ++dc) patch[static_cast<std::size_t>((dr + 1) * 3 + dc + 1)] = cell(r + dr, c + dc);
    for (std::size_t k = 0; k < kChannels; ++k) {
      double a = conv_b_[k];
      for (std::size_t t = 0; t < 9; ++t) a += conv_w_[k * 9 + t] * patch[t];
      a = std::max(a, 0.0);
      pooled[k] += a;
      pooled[kChannels + k] = i == 0 ? a : std::max(pooled[kChannels + k], a);
    }
  }
  if (occupied > 0)
    for (std::size_t k = 0; k < kChannels; ++k) pooled[k] /= static_cast<double>(occupied);

  std::vector<double> out(output_dim_);
  nn::VectorMap(out.data(), static_cast<Eigen::Index>(output_dim_)).noalias() =
      nn::ConstMatrixMap(proj_.data(), static_cast<Eigen::Index>(output_dim_), kPooled) *
      nn::ConstVectorMap(pooled.data(), kPooled);
  return out;
}

std::string SeededConvEncoder::fingerprint() const {
  return "seeded-conv:" + std::to_string(seed_) + ":" + std::to_string(output_dim_);
}

std::vector<double> SeededConvEncoder::parameters() const {
  std::vector<double> all;
  for (const auto* v : {&conv_w_, &conv_b_, &proj_})
    all.insert(all.end(), v->begin(), v->end());
  return all;
}

std::vector<double> entropy_encode(const EntropyGraph& graph, const TaskEncoder& encoder,
                                   std::size_t expected_dim) {
  if (encoder.output_dim() != expected_dim)
    throw std::invalid_argument("entropy_encode: encoder dimension " + std::to_string(encoder.output_dim()) +
                                " does not match task input dimension " + std::to_string(expected_dim));
  return encoder.encode(graph);
}

}  // namespace tasnn::features
