#pragma once

// Layer kernels over NHWC batches. Convolutions and pools use valid padding;
// convolution runs as im2col followed by one GEMM against the
// [k*k*c_in, filters] weight matrix.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "privleak/tensor.hpp"

namespace privleak::kernels {

struct Window {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  Index kernel = 0;
  Index stride = 1;

  Index out_height() const { return (height - kernel) / stride + 1; }
  Index out_width() const { return (width - kernel) / stride + 1; }
};

/// Patch matrix with one row per (example, out_y, out_x) and columns ordered
/// (ky, kx, c).
template <typename Scalar>
RowMat<Scalar> im2col(const Tensor<Scalar>& x, const Window& w) {
  const Index batch = x.dim(0);
  const Index oh = w.out_height(), ow = w.out_width();
  const Index patch = w.kernel * w.kernel * w.channels;
  RowMat<Scalar> cols(batch * oh * ow, patch);
  const Scalar* src = x.ptr();
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar* dst = cols.row((b * oh + oy) * ow + ox).data();
        for (Index ky = 0; ky < w.kernel; ++ky) {
          const Scalar* line =
              src + ((b * w.height + oy * w.stride + ky) * w.width + ox * w.stride) * w.channels;
          std::copy(line, line + w.kernel * w.channels, dst + ky * w.kernel * w.channels);
        }
      }
  return cols;
}

/// Adjoint of im2col: scatter-adds patch gradients back onto the input grid.
template <typename Scalar>
Tensor<Scalar> col2im(const RowMat<Scalar>& dcols, const Window& w, Index batch) {
  Tensor<Scalar> dx({batch, w.height, w.width, w.channels});
  const Index oh = w.out_height(), ow = w.out_width();
  Scalar* dst = dx.ptr();
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Scalar* row = dcols.row((b * oh + oy) * ow + ox).data();
        for (Index ky = 0; ky < w.kernel; ++ky) {
          Scalar* line = dst + ((b * w.height + oy * w.stride + ky) * w.width + ox * w.stride) * w.channels;
          const Scalar* g = row + ky * w.kernel * w.channels;
          for (Index k = 0; k < w.kernel * w.channels; ++k) line[k] += g[k];
        }
      }
  return dx;
}

/// Window max per channel; `argmax` receives the flat input index of each
/// selected element.
template <typename Scalar>
Tensor<Scalar> maxpool_forward(const Tensor<Scalar>& x, const Window& w, std::vector<Index>& argmax) {
  const Index batch = x.dim(0), oh = w.out_height(), ow = w.out_width(), c = w.channels;
  Tensor<Scalar> y({batch, oh, ow, c});
  argmax.assign(static_cast<std::size_t>(y.size()), 0);
  Index o = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ch = 0; ch < c; ++ch, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_at = -1;
          for (Index ky = 0; ky < w.kernel; ++ky)
            for (Index kx = 0; kx < w.kernel; ++kx) {
              const Index at = ((b * w.height + oy * w.stride + ky) * w.width + ox * w.stride + kx) * c + ch;
              if (best_at < 0 || x[at] > best) {
                best = x[at];
                best_at = at;
              }
            }
          y[o] = best;
          argmax[static_cast<std::size_t>(o)] = best_at;
        }
  return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const Tensor<Scalar>& dy, const std::vector<Index>& argmax, const Shape& in_shape) {
  Tensor<Scalar> dx(in_shape);
  for (Index o = 0; o < dy.size(); ++o) dx[argmax[static_cast<std::size_t>(o)]] += dy[o];
  return dx;
}

template <typename Scalar>
Tensor<Scalar> avgpool_forward(const Tensor<Scalar>& x, const Window& w) {
  const Index batch = x.dim(0), oh = w.out_height(), ow = w.out_width(), c = w.channels;
  Tensor<Scalar> y({batch, oh, ow, c});
  const Scalar scale = Scalar(1) / static_cast<Scalar>(w.kernel * w.kernel);
  Index o = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ch = 0; ch < c; ++ch, ++o) {
          Scalar sum = 0;
          for (Index ky = 0; ky < w.kernel; ++ky)
            for (Index kx = 0; kx < w.kernel; ++kx)
              sum += x[((b * w.height + oy * w.stride + ky) * w.width + ox * w.stride + kx) * c + ch];
          y[o] = sum * scale;
        }
  return y;
}

template <typename Scalar>
Tensor<Scalar> avgpool_backward(const Tensor<Scalar>& dy, const Window& w, const Shape& in_shape) {
  Tensor<Scalar> dx(in_shape);
  const Index batch = in_shape[0], oh = w.out_height(), ow = w.out_width(), c = w.channels;
  const Scalar scale = Scalar(1) / static_cast<Scalar>(w.kernel * w.kernel);
  Index o = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ch = 0; ch < c; ++ch, ++o)
          for (Index ky = 0; ky < w.kernel; ++ky)
            for (Index kx = 0; kx < w.kernel; ++kx)
              dx[((b * w.height + oy * w.stride + ky) * w.width + ox * w.stride + kx) * c + ch] += dy[o] * scale;
  return dx;
}

/// Row-wise softmax with the max subtracted for stability.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& z) {
  for (Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    row.array() -= row.maxCoeff();
    row = row.unaryExpr([](auto v) { return std::exp(v); });
    row /= row.sum();
  }
}

}  // namespace privleak::kernels
