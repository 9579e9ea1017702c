#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tasnn::features {

// Per-segment Shannon entropies in bits per byte.
struct EntropySeries {
  std::vector<double> values;
  std::size_t segment_length = 256;
};

struct GraphShape {
  std::size_t rows = 254;
  std::size_t cols = 254;
  std::size_t size() const { return rows * cols; }
};

struct EntropyGraph {
  GraphShape shape;
  std::vector<double> cells;  // row-major
  std::size_t source_length = 0;

  double at(std::size_t r, std::size_t c) const { return cells[r * shape.cols + c]; }
};

inline constexpr std::size_t kImageSide = 105;

// Grayscale image, row-major kImageSide x kImageSide. Values lie in [0, 255]
// (or [0, 1] once an augmentation rescale has been applied).
struct MalwareImage {
  std::vector<double> pixels = std::vector<double>(kImageSide * kImageSide, 0.0);

  double at(std::size_t r, std::size_t c) const { return pixels[r * kImageSide + c]; }
  double& at(std::size_t r, std::size_t c) { return pixels[r * kImageSide + c]; }
};

// Entropy of a byte histogram over the whole span; 0 log 0 is taken as 0.
double shannon_entropy(std::span<const std::uint8_t> bytes);

EntropySeries entropy_series(std::span<const std::uint8_t> bytes, std::size_t segment_length = 256);

// Row-major layout; short series are zero-padded, long ones truncated.
EntropyGraph entropy_graph(const EntropySeries& series, GraphShape shape = {});

// Half-pixel-centre bilinear resampling with edge clamping.
std::vector<double> bilinear_resize(std::span<const double> src, std::size_t rows, std::size_t cols,
                                    std::size_t out_rows, std::size_t out_cols);

// Bytes laid out in rows of `width` (last row zero-padded), resized to 105x105.
MalwareImage binary_to_image(std::span<const std::uint8_t> bytes, std::size_t width = 256);

enum class FillMode { wrap, constant, nearest, reflect };

struct AugmentationConfig {
  double rescale = 1.0 / 255.0;
  double zca_epsilon = 1e-6;
  bool zca_whitening = false;
  FillMode fill_mode = FillMode::wrap;
  double rotation_range = 0.1;      // degrees
  double height_shift_range = 0.5;  // fraction of image height
  bool horizontal_flip = true;
};

// ZCA whitening fitted on a set of images. The fit works in the span of the
// samples (Gram-matrix route), so it stays cheap for few images.
class ZcaWhitener {
 public:
  static ZcaWhitener fit(std::span<const MalwareImage> images, double epsilon);
  MalwareImage apply(const MalwareImage& img) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;     // D x r, orthonormal columns
  Eigen::VectorXd inv_sqrt_;  // r
  double null_scale_ = 1.0;
};

// Random rotation, vertical shift and horizontal flip drawn from `seed`, then
// rescale (and ZCA when enabled, which requires `zca`).
MalwareImage augment(const MalwareImage& img, const AugmentationConfig& cfg, std::uint64_t seed,
                     const ZcaWhitener* zca = nullptr);

MalwareImage flip_horizontal(const MalwareImage& img);

}  // namespace tasnn::features
