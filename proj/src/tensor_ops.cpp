#include "tasnn/tensor_ops.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tasnn::nn {

namespace {

void im2col(const ConvShape& s, std::span<const double> in, std::vector<double>& cols) {
  const auto oh = s.out_h();
  const auto ow = s.out_w();
  const auto p = oh * ow;
  cols.resize(s.patch() * p);
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    const double* plane = in.data() + c * s.in_h * s.in_w;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx, ++row) {
        double* dst = cols.data() + row * p;
        for (std::size_t y = 0; y < oh; ++y) {
          const double* src = plane + (y * s.stride + ky) * s.in_w + kx;
          if (s.stride == 1) {
            std::copy_n(src, ow, dst + y * ow);
          } else {
            for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[x * s.stride];
          }
        }
      }
    }
  }
}

void col2im(const ConvShape& s, const RowMatrix& dcols, std::span<double> d_in) {
  std::fill(d_in.begin(), d_in.end(), 0.0);
  const auto oh = s.out_h();
  const auto ow = s.out_w();
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    double* plane = d_in.data() + c * s.in_h * s.in_w;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx, ++row) {
        const double* src = dcols.data() + row * dcols.cols();
        for (std::size_t y = 0; y < oh; ++y) {
          double* dst = plane + (y * s.stride + ky) * s.in_w + kx;
          for (std::size_t x = 0; x < ow; ++x) dst[x * s.stride] += src[y * ow + x];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out, std::vector<double>& cols) {
  if (!s.valid()) throw std::invalid_argument("conv2d: kernel larger than input");
  if (in.size() != s.in_channels * s.in_h * s.in_w || weight.size() != s.out_channels * s.patch() ||
      bias.size() != s.out_channels || out.size() != s.out_channels * s.out_h() * s.out_w())
    throw std::invalid_argument("conv2d: shape mismatch");
  im2col(s, in, cols);
  const auto p = static_cast<Eigen::Index>(s.out_h() * s.out_w());
  const auto k = static_cast<Eigen::Index>(s.patch());
  const auto oc = static_cast<Eigen::Index>(s.out_channels);
  ConstMatrixMap w(weight.data(), oc, k);
  ConstMatrixMap c(cols.data(), k, p);
  MatrixMap o(out.data(), oc, p);
  o.noalias() = w * c;
  o.colwise() += ConstVectorMap(bias.data(), oc);
}

void conv2d_backward(const ConvShape& s, std::span<const double> cols, std::span<const double> weight,
                     std::span<const double> d_out, std::span<double> d_weight,
                     std::span<double> d_bias, std::span<double> d_in) {
  const auto p = static_cast<Eigen::Index>(s.out_h() * s.out_w());
  const auto k = static_cast<Eigen::Index>(s.patch());
  const auto oc = static_cast<Eigen::Index>(s.out_channels);
  ConstMatrixMap dout(d_out.data(), oc, p);
  ConstMatrixMap c(cols.data(), k, p);
  MatrixMap dw(d_weight.data(), oc, k);
  dw.noalias() += dout * c.transpose();
  VectorMap(d_bias.data(), oc) += dout.rowwise().sum();
  if (!d_in.empty()) {
    ConstMatrixMap w(weight.data(), oc, k);
    const RowMatrix dcols = w.transpose() * dout;
    col2im(s, dcols, d_in);
  }
}

void maxpool_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                     std::vector<std::uint32_t>& argmax) {
  const auto oh = s.out_h();
  const auto ow = s.out_w();
  argmax.resize(s.channels * oh * ow);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const std::size_t base = c * s.in_h * s.in_w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < s.size; ++dy) {
          for (std::size_t dx = 0; dx < s.size; ++dx) {
            const std::size_t idx = base + (y * s.size + dy) * s.in_w + x * s.size + dx;
            if (in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (c * oh + y) * ow + x;
        out[o] = best;
        argmax[o] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
}

void maxpool_backward(const PoolShape& s, std::span<const std::uint32_t> argmax,
                      std::span<const double> d_out, std::span<double> d_in) {
  std::fill(d_in.begin(), d_in.end(), 0.0);
  (void)s;
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in[argmax[o]] += d_out[o];
}

void avgpool_forward(const PoolShape& s, std::span<const double> in, std::span<double> out) {
  const auto oh = s.out_h();
  const auto ow = s.out_w();
  const double inv = 1.0 / static_cast<double>(s.size * s.size);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const std::size_t base = c * s.in_h * s.in_w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < s.size; ++dy)
          for (std::size_t dx = 0; dx < s.size; ++dx)
            acc += in[base + (y * s.size + dy) * s.in_w + x * s.size + dx];
        out[(c * oh + y) * ow + x] = acc * inv;
      }
    }
  }
}

void adaptive_maxpool(std::size_t channels, std::size_t in_h, std::size_t in_w,
                      std::span<const double> in, std::size_t out_h, std::size_t out_w,
                      std::span<double> out) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t y0 = y * in_h / out_h;
      const std::size_t y1 = std::max(y0 + 1, ((y + 1) * in_h + out_h - 1) / out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t x0 = x * in_w / out_w;
        const std::size_t x1 = std::max(x0 + 1, ((x + 1) * in_w + out_w - 1) / out_w);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) best = std::max(best, in[(c * in_h + yy) * in_w + xx]);
        out[(c * out_h + y) * out_w + x] = best;
      }
    }
  }
}

}  // namespace tasnn::nn
