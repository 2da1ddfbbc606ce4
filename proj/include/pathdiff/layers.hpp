#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pathdiff::layers {

// Activations are channel-major (C, H, W) buffers. Backward functions
// accumulate (+=) into parameter gradients and overwrite input gradients.

/// Dot product with eight independent partial sums; the fixed lane split
/// keeps the result deterministic while letting the compiler vectorize.
template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
  std::array<Real, 8> acc{};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  Real tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename Real>
void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  int in_channels;
  int out_channels;
  int height;
  int width;

  std::size_t pixels() const { return std::size_t(height) * width; }
  std::size_t weight_size() const { return std::size_t(out_channels) * in_channels * 9; }
};

/// col[(ci*9 + ky*3 + kx) * HW + p] = in[ci] shifted by (ky-1, kx-1), zero padded.
template <typename Real>
void im2col3x3(const ConvGeometry& g, const Real* in, std::vector<Real>& col) {
  const int H = g.height, W = g.width;
  const std::size_t hw = g.pixels();
  col.assign(std::size_t(g.in_channels) * 9 * hw, Real(0));
  for (int ci = 0; ci < g.in_channels; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        Real* dst = col.data() + (std::size_t(ci) * 9 + ky * 3 + kx) * hw;
        const Real* src = in + std::size_t(ci) * hw;
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int x = x0; x < x1; ++x) dst[std::size_t(y) * W + x] = src[std::size_t(sy) * W + x + dx];
        }
      }
}

template <typename Real>
void col2im3x3_add(const ConvGeometry& g, const std::vector<Real>& col, Real* in_grad) {
  const int H = g.height, W = g.width;
  const std::size_t hw = g.pixels();
  for (int ci = 0; ci < g.in_channels; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Real* src = col.data() + (std::size_t(ci) * 9 + ky * 3 + kx) * hw;
        Real* dst = in_grad + std::size_t(ci) * hw;
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int x = x0; x < x1; ++x) dst[std::size_t(sy) * W + x + dx] += src[std::size_t(y) * W + x];
        }
      }
}

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatrixMap = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;

/// 3x3 convolution, stride 1, zero padding 1. weight is (Cout, Cin, 3, 3).
template <typename Real>
void conv3x3_forward(const ConvGeometry& g, const Real* in, const Real* weight, const Real* bias, Real* out,
                     std::vector<Real>& col) {
  im2col3x3(g, in, col);
  const Eigen::Index hw = Eigen::Index(g.pixels()), k = Eigen::Index(g.in_channels) * 9, co = g.out_channels;
  MatrixMap<Real> o(out, co, hw);
  o.noalias() = ConstMatrixMap<Real>(weight, co, k) * ConstMatrixMap<Real>(col.data(), k, hw);
  for (Eigen::Index c = 0; c < co; ++c) o.row(c).array() += bias[c];
}

/// in_grad may be null when the input gradient is not needed.
template <typename Real>
void conv3x3_backward(const ConvGeometry& g, const Real* in, const Real* weight, const Real* out_grad, Real* weight_grad,
                      Real* bias_grad, Real* in_grad, std::vector<Real>& col) {
  im2col3x3(g, in, col);
  const Eigen::Index hw = Eigen::Index(g.pixels()), k = Eigen::Index(g.in_channels) * 9, co = g.out_channels;
  ConstMatrixMap<Real> go(out_grad, co, hw);
  // Plain loop: Eigen's vectorised sum() peels by alignment, which would make
  // the rounding depend on where the buffer happens to live.
  for (Eigen::Index c = 0; c < co; ++c) {
    Real s = 0;
    for (Eigen::Index i = 0; i < hw; ++i) s += out_grad[c * hw + i];
    bias_grad[c] += s;
  }
  MatrixMap<Real>(weight_grad, co, k).noalias() += go * ConstMatrixMap<Real>(col.data(), k, hw).transpose();
  if (!in_grad) return;
  // Reuse col as the column-space gradient.
  MatrixMap<Real>(col.data(), k, hw).noalias() = ConstMatrixMap<Real>(weight, co, k).transpose() * go;
  std::fill(in_grad, in_grad + std::size_t(g.in_channels) * hw, Real(0));
  col2im3x3_add(g, col, in_grad);
}

template <typename Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <typename Real>
void silu_forward(std::span<const Real> in, std::span<Real> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * sigmoid(in[i]);
}

/// in_grad[i] = out_grad[i] * silu'(in[i]).
template <typename Real>
void silu_backward(std::span<const Real> in, std::span<const Real> out_grad, std::span<Real> in_grad) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Real s = sigmoid(in[i]);
    in_grad[i] = out_grad[i] * s * (Real(1) + in[i] * (Real(1) - s));
  }
}

/// y = W x + b with W (out, in).
template <typename Real>
void linear_forward(int in_dim, int out_dim, const Real* x, const Real* weight, const Real* bias, Real* y) {
  for (int o = 0; o < out_dim; ++o) y[o] = bias[o] + dot(weight + std::size_t(o) * in_dim, x, std::size_t(in_dim));
}

template <typename Real>
void linear_backward(int in_dim, int out_dim, const Real* x, const Real* weight, const Real* y_grad, Real* weight_grad,
                     Real* bias_grad, Real* x_grad) {
  for (int o = 0; o < out_dim; ++o) {
    bias_grad[o] += y_grad[o];
    axpy(y_grad[o], x, weight_grad + std::size_t(o) * in_dim, std::size_t(in_dim));
  }
  if (!x_grad) return;
  std::fill(x_grad, x_grad + in_dim, Real(0));
  for (int o = 0; o < out_dim; ++o) axpy(y_grad[o], weight + std::size_t(o) * in_dim, x_grad, std::size_t(in_dim));
}

/// 2x2 average pooling on (C, H, W) with even H, W.
template <typename Real>
void avgpool2_forward(int channels, int height, int width, const Real* in, Real* out) {
  const int oh = height / 2, ow = width / 2;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const Real* p = in + (std::size_t(c) * height + 2 * y) * width + 2 * x;
        out[(std::size_t(c) * oh + y) * ow + x] = Real(0.25) * ((p[0] + p[1]) + (p[width] + p[width + 1]));
      }
}

template <typename Real>
void avgpool2_backward(int channels, int height, int width, const Real* out_grad, Real* in_grad) {
  const int oh = height / 2, ow = width / 2;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const Real g = Real(0.25) * out_grad[(std::size_t(c) * oh + y) * ow + x];
        Real* p = in_grad + (std::size_t(c) * height + 2 * y) * width + 2 * x;
        p[0] = g;
        p[1] = g;
        p[width] = g;
        p[width + 1] = g;
      }
}

/// Nearest-neighbour 2x upsampling of (C, H, W) to (C, 2H, 2W).
template <typename Real>
void upsample2_forward(int channels, int height, int width, const Real* in, Real* out) {
  const int ow = 2 * width;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < 2 * height; ++y)
      for (int x = 0; x < ow; ++x)
        out[(std::size_t(c) * 2 * height + y) * ow + x] = in[(std::size_t(c) * height + y / 2) * width + x / 2];
}

template <typename Real>
void upsample2_backward(int channels, int height, int width, const Real* out_grad, Real* in_grad) {
  const int ow = 2 * width;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const Real* p = out_grad + (std::size_t(c) * 2 * height + 2 * y) * ow + 2 * x;
        in_grad[(std::size_t(c) * height + y) * width + x] = (p[0] + p[1]) + (p[ow] + p[ow + 1]);
      }
}

/// Interleaved sinusoidal embedding: out[2i] = sin(t f_i), out[2i+1] = cos(t f_i),
/// f_i = 10000^(-i / (dim/2)).
template <typename Real>
void sinusoidal_embedding(double t, int dim, Real* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[2 * i] = Real(std::sin(t * freq));
    out[2 * i + 1] = Real(std::cos(t * freq));
  }
}

}  // namespace pathdiff::layers
