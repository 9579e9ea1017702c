#include "tasnn/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tasnn/common.hpp"

namespace tasnn::features {

double shannon_entropy(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return 0.0;
  std::array<std::size_t, 256> counts{};
  for (auto b : bytes) ++counts[b];
  const double n = static_cast<double>(bytes.size());
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return std::clamp(h, 0.0, 8.0);
}

EntropySeries entropy_series(std::span<const std::uint8_t> bytes, std::size_t segment_length) {
  if (bytes.empty()) throw std::invalid_argument("entropy_series: empty input");
  if (segment_length < 1) throw std::invalid_argument("entropy_series: segment_length must be >= 1");
  EntropySeries s;
  s.segment_length = segment_length;
  s.values.reserve((bytes.size() + segment_length - 1) / segment_length);
  for (std::size_t off = 0; off < bytes.size(); off += segment_length) {
    const auto len = std::min(segment_length, bytes.size() - off);
    s.values.push_back(shannon_entropy(bytes.subspan(off, len)));
  }
  return s;
}

EntropyGraph entropy_graph(const EntropySeries& series, GraphShape shape) {
  if (series.values.empty()) throw std::invalid_argument("entropy_graph: empty series");
  if (shape.rows == 0 || shape.cols == 0) throw std::invalid_argument("entropy_graph: empty shape");
  EntropyGraph g;
  g.shape = shape;
  g.source_length = series.values.size();
  g.cells.assign(shape.size(), 0.0);
  const auto n = std::min(series.values.size(), shape.size());
  std::copy_n(series.values.begin(), n, g.cells.begin());
  return g;
}

std::vector<double> bilinear_resize(std::span<const double> src, std::size_t rows, std::size_t cols,
                                    std::size_t out_rows, std::size_t out_cols) {
  if (rows == 0 || cols == 0 || src.size() != rows * cols)
    throw std::invalid_argument("bilinear_resize: bad source shape");
  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double pos = (static_cast<double>(o) + 0.5) * scale - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(pos));
      const auto i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, pos - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(rows, out_rows);
  const auto tx = taps(cols, out_cols);
  std::vector<double> out(out_rows * out_cols);
  for (std::size_t y = 0; y < out_rows; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out_cols; ++x) {
      const auto& b = tx[x];
      const double top = src[a.i0 * cols + b.i0] * (1.0 - b.frac) + src[a.i0 * cols + b.i1] * b.frac;
      const double bot = src[a.i1 * cols + b.i0] * (1.0 - b.frac) + src[a.i1 * cols + b.i1] * b.frac;
      out[y * out_cols + x] = top * (1.0 - a.frac) + bot * a.frac;
    }
  }
  return out;
}

MalwareImage binary_to_image(std::span<const std::uint8_t> bytes, std::size_t width) {
  if (bytes.empty()) throw std::invalid_argument("binary_to_image: empty input");
  if (width < 1) throw std::invalid_argument("binary_to_image: width must be >= 1");
  const auto rows = (bytes.size() + width - 1) / width;
  std::vector<double> grid(rows * width, 0.0);
  std::copy(bytes.begin(), bytes.end(), grid.begin());
  MalwareImage img;
  img.pixels = bilinear_resize(grid, rows, width, kImageSide, kImageSide);
  for (auto& p : img.pixels) p = std::clamp(p, 0.0, 255.0);
  return img;
}

MalwareImage flip_horizontal(const MalwareImage& img) {
  MalwareImage out;
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) out.at(r, c) = img.at(r, kImageSide - 1 - c);
  return out;
}

namespace {

// Maps an integer coordinate onto [0, n) under the fill mode; -1 means "use 0".
long map_coord(long i, long n, FillMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case FillMode::wrap: return ((i % n) + n) % n;
    case FillMode::nearest: return std::clamp(i, 0L, n - 1);
    case FillMode::reflect: {
      const long period = 2 * n;
      long m = ((i % period) + period) % period;
      return m < n ? m : period - 1 - m;
    }
    case FillMode::constant: return -1;
  }
  return -1;
}

double sample(const MalwareImage& img, double y, double x, FillMode mode) {
  const long n = static_cast<long>(kImageSide);
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const double wy = y - fy;
  const double wx = x - fx;
  auto px = [&](long yy, long xx) {
    const long my = map_coord(yy, n, mode);
    const long mx = map_coord(xx, n, mode);
    if (my < 0 || mx < 0) return 0.0;
    return img.at(static_cast<std::size_t>(my), static_cast<std::size_t>(mx));
  };
  double v = px(y0, x0) * (1.0 - wy) * (1.0 - wx);
  if (wx > 0.0) v += px(y0, x0 + 1) * (1.0 - wy) * wx;
  if (wy > 0.0) v += px(y0 + 1, x0) * wy * (1.0 - wx);
  if (wx > 0.0 && wy > 0.0) v += px(y0 + 1, x0 + 1) * wy * wx;
  return v;
}

}  // namespace

MalwareImage augment(const MalwareImage& img, const AugmentationConfig& cfg, std::uint64_t seed,
                     const ZcaWhitener* zca) {
  if (cfg.rotation_range < 0.0 || cfg.height_shift_range < 0.0 || cfg.rescale <= 0.0)
    throw std::invalid_argument("augment: invalid configuration");
  if (cfg.zca_whitening && zca == nullptr)
    throw std::invalid_argument("augment: ZCA whitening enabled but no whitener fitted");

  Rng rng(mix_seed(seed, 0xa6));
  // Draw order is fixed so a seed means the same thing under any config.
  const double angle = uniform(rng, -cfg.rotation_range, cfg.rotation_range);
  const double shift = uniform(rng, -cfg.height_shift_range, cfg.height_shift_range) *
                       static_cast<double>(kImageSide);
  const bool flip = cfg.horizontal_flip && uniform01(rng) < 0.5;

  MalwareImage out;
  const double theta = angle * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double centre = (static_cast<double>(kImageSide) - 1.0) / 2.0;
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double dy = static_cast<double>(r) - shift - centre;
      const double dx = static_cast<double>(c) - centre;
      const double sy = cs * dy - sn * dx + centre;
      const double sx = sn * dy + cs * dx + centre;
      out.at(r, c) = std::clamp(sample(img, sy, sx, cfg.fill_mode), 0.0, 255.0);
    }
  }
  if (flip) out = flip_horizontal(out);
  for (auto& p : out.pixels) p *= cfg.rescale;
  if (cfg.zca_whitening) out = zca->apply(out);
  return out;
}

ZcaWhitener ZcaWhitener::fit(std::span<const MalwareImage> images, double epsilon) {
  if (images.size() < 2) throw std::invalid_argument("ZcaWhitener::fit: need at least 2 images");
  if (epsilon <= 0.0) throw std::invalid_argument("ZcaWhitener::fit: epsilon must be positive");
  const auto n = static_cast<Eigen::Index>(images.size());
  const auto d = static_cast<Eigen::Index>(kImageSide * kImageSide);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(images[static_cast<std::size_t>(i)].pixels.data(), d);
  ZcaWhitener z;
  z.mean_ = x.colwise().mean().transpose();
  x.rowwise() -= z.mean_.transpose();
  // Covariance X^T X / n shares its nonzero spectrum with the Gram matrix.
  const Eigen::MatrixXd gram = x * x.transpose() / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (eig.eigenvalues()(k) > 1e-12) keep.push_back(k);
  }
  z.basis_.resize(d, static_cast<Eigen::Index>(keep.size()));
  z.inv_sqrt_.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto k = keep[j];
    const double lambda = eig.eigenvalues()(k);
    const auto col = static_cast<Eigen::Index>(j);
    z.basis_.col(col) = x.transpose() * eig.eigenvectors().col(k) / std::sqrt(lambda * static_cast<double>(n));
    z.inv_sqrt_(col) = 1.0 / std::sqrt(lambda + epsilon);
  }
  z.null_scale_ = 1.0 / std::sqrt(epsilon);
  return z;
}

MalwareImage ZcaWhitener::apply(const MalwareImage& img) const {
  const auto d = static_cast<Eigen::Index>(kImageSide * kImageSide);
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(img.pixels.data(), d) - mean_;
  const Eigen::VectorXd coeff = basis_.transpose() * x;
  const Eigen::VectorXd in_span = basis_ * coeff;
  const Eigen::VectorXd white = basis_ * coeff.cwiseProduct(inv_sqrt_) + (x - in_span) * null_scale_;
  MalwareImage out;
  Eigen::Map<Eigen::VectorXd>(out.pixels.data(), d) = white;
  return out;
}

}  // namespace tasnn::features
