#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

// Dense kernels shared by the image network and the frozen task encoder.
// Feature maps are C x H x W, row-major, no batch dimension.
namespace tasnn::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct ConvShape {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t in_h = 0;
  std::size_t in_w = 0;

  std::size_t out_h() const { return (in_h - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  bool valid() const { return in_h >= kernel && in_w >= kernel && stride >= 1 && kernel >= 1; }
};

// Valid (unpadded) convolution. `weight` is out_channels x patch() row-major.
// `cols` receives the im2col matrix (patch() x out_h*out_w) for backward.
void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out, std::vector<double>& cols);

// Accumulates into d_weight/d_bias; overwrites d_in unless it is empty.
void conv2d_backward(const ConvShape& s, std::span<const double> cols, std::span<const double> weight,
                     std::span<const double> d_out, std::span<double> d_weight,
                     std::span<double> d_bias, std::span<double> d_in);

struct PoolShape {
  std::size_t channels = 1;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t size = 2;  // window == stride

  std::size_t out_h() const { return in_h / size; }
  std::size_t out_w() const { return in_w / size; }
};

// Ties resolve to the first (row-major) maximum.
void maxpool_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                     std::vector<std::uint32_t>& argmax);
void maxpool_backward(const PoolShape& s, std::span<const std::uint32_t> argmax,
                      std::span<const double> d_out, std::span<double> d_in);

void avgpool_forward(const PoolShape& s, std::span<const double> in, std::span<double> out);

// Max over an out_h x out_w grid of (possibly uneven) regions.
void adaptive_maxpool(std::size_t channels, std::size_t in_h, std::size_t in_w,
                      std::span<const double> in, std::size_t out_h, std::size_t out_w,
                      std::span<double> out);

inline void relu_inplace(std::span<double> x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
}

}  // namespace tasnn::nn
