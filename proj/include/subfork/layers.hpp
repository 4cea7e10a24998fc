#pragma once

// Forward/backward primitives for the segmentation network. Activations use a
// channel-major [C][B][H][W] layout so a whole batch goes through one GEMM and
// batch-norm statistics are contiguous per channel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "subfork/error.hpp"

namespace subfork::layers {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Tensor {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int b, int h, int w)
      : channels(c), batch(b), height(h), width(w), data(static_cast<std::size_t>(c) * b * h * w, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  /// Elements per channel across the batch.
  std::size_t plane() const { return static_cast<std::size_t>(batch) * pixels(); }
  std::size_t size() const { return data.size(); }

  double& at(int c, int n, int y, int x) {
    return data[(static_cast<std::size_t>(c) * batch + n) * pixels() + static_cast<std::size_t>(y) * width + x];
  }
  double at(int c, int n, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * batch + n) * pixels() + static_cast<std::size_t>(y) * width + x];
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
  }
};

// --- convolution (same zero padding, stride 1) -------------------------------

inline void im2col(const Tensor& x, int k, RowMat& cols) {
  const int pad = k / 2;
  const int H = x.height, W = x.width, B = x.batch;
  cols.resize(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(x.plane()));
  for (int c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int n = 0; n < B; ++n)
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            double* dst = row + (static_cast<std::size_t>(n) * H + y) * W;
            if (sy < 0 || sy >= H) {
              std::fill(dst, dst + W, 0.0);
              continue;
            }
            const double* src = &x.data[(static_cast<std::size_t>(c) * B + n) * x.pixels() + static_cast<std::size_t>(sy) * W];
            for (int xx = 0; xx < W; ++xx) {
              const int sx = xx + kx - pad;
              dst[xx] = (sx < 0 || sx >= W) ? 0.0 : src[sx];
            }
          }
      }
}

inline void col2im_add(const RowMat& cols, int k, Tensor& dx) {
  const int pad = k / 2;
  const int H = dx.height, W = dx.width, B = dx.batch;
  for (int c = 0; c < dx.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int n = 0; n < B; ++n)
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            const double* src = row + (static_cast<std::size_t>(n) * H + y) * W;
            double* dst = &dx.data[(static_cast<std::size_t>(c) * B + n) * dx.pixels() + static_cast<std::size_t>(sy) * W];
            for (int xx = 0; xx < W; ++xx) {
              const int sx = xx + kx - pad;
              if (sx >= 0 && sx < W) dst[sx] += src[xx];
            }
          }
      }
}

/// weight: out x in x k x k, bias: out.
inline Tensor conv_forward(std::span<const double> weight, std::span<const double> bias, const Tensor& x, int out_ch,
                           int k) {
  if (weight.size() != static_cast<std::size_t>(out_ch) * x.channels * k * k || bias.size() != static_cast<std::size_t>(out_ch))
    throw ShapeError("conv: parameter size mismatch");
  RowMat cols;
  im2col(x, k, cols);
  Tensor y(out_ch, x.batch, x.height, x.width);
  ConstMatMap w(weight.data(), out_ch, static_cast<Eigen::Index>(x.channels) * k * k);
  MatMap out(y.data.data(), out_ch, static_cast<Eigen::Index>(y.plane()));
  // One product per sample keeps each sample's result independent of its batch position.
  const auto px = static_cast<Eigen::Index>(x.pixels());
  for (int n = 0; n < x.batch; ++n) out.middleCols(n * px, px).noalias() = w * cols.middleCols(n * px, px);
  for (int o = 0; o < out_ch; ++o) out.row(o).array() += bias[o];
  return y;
}

/// Accumulates into dweight/dbias and returns the input gradient.
inline Tensor conv_backward(std::span<const double> weight, const Tensor& x, const Tensor& dy, int k,
                            std::span<double> dweight, std::span<double> dbias) {
  const int out_ch = dy.channels;
  RowMat cols;
  im2col(x, k, cols);
  ConstMatMap w(weight.data(), out_ch, cols.rows());
  ConstMatMap g(dy.data.data(), out_ch, static_cast<Eigen::Index>(dy.plane()));
  MatMap dw(dweight.data(), out_ch, cols.rows());
  const auto px = static_cast<Eigen::Index>(dy.pixels());
  RowMat dcols(cols.rows(), cols.cols());
  for (int n = 0; n < dy.batch; ++n) {
    dw.noalias() += g.middleCols(n * px, px) * cols.middleCols(n * px, px).transpose();
    dcols.middleCols(n * px, px).noalias() = w.transpose() * g.middleCols(n * px, px);
  }
  // Plain loop: Eigen's vectorized reductions depend on pointer alignment.
  for (int o = 0; o < out_ch; ++o) {
    const double* row = &dy.data[static_cast<std::size_t>(o) * dy.plane()];
    double s = 0;
    for (std::size_t i = 0; i < dy.plane(); ++i) s += row[i];
    dbias[o] += s;
  }
  Tensor dx(x.channels, x.batch, x.height, x.width);
  col2im_add(dcols, k, dx);
  return dx;
}

// --- transposed convolution, kernel 2, stride 2 ------------------------------

/// weight: out x in x 2 x 2 -> matrix rows (o, a, b), columns c.
inline RowMat deconv_matrix(std::span<const double> weight, int out_ch, int in_ch) {
  RowMat m(static_cast<Eigen::Index>(out_ch) * 4, in_ch);
  for (int o = 0; o < out_ch; ++o)
    for (int c = 0; c < in_ch; ++c)
      for (int ab = 0; ab < 4; ++ab) m(o * 4 + ab, c) = weight[(static_cast<std::size_t>(o) * in_ch + c) * 4 + ab];
  return m;
}

inline Tensor deconv_forward(std::span<const double> weight, std::span<const double> bias, const Tensor& x, int out_ch) {
  if (weight.size() != static_cast<std::size_t>(out_ch) * x.channels * 4 || bias.size() != static_cast<std::size_t>(out_ch))
    throw ShapeError("deconv: parameter size mismatch");
  const RowMat wm = deconv_matrix(weight, out_ch, x.channels);
  ConstMatMap xin(x.data.data(), x.channels, static_cast<Eigen::Index>(x.plane()));
  const auto px = static_cast<Eigen::Index>(x.pixels());
  RowMat z(wm.rows(), xin.cols());
  for (int n = 0; n < x.batch; ++n) z.middleCols(n * px, px).noalias() = wm * xin.middleCols(n * px, px);
  Tensor y(out_ch, x.batch, 2 * x.height, 2 * x.width);
  for (int o = 0; o < out_ch; ++o)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const double* zr = z.row(o * 4 + a * 2 + b).data();
        for (int n = 0; n < x.batch; ++n)
          for (int yy = 0; yy < x.height; ++yy)
            for (int xx = 0; xx < x.width; ++xx)
              y.at(o, n, 2 * yy + a, 2 * xx + b) =
                  zr[(static_cast<std::size_t>(n) * x.height + yy) * x.width + xx] + bias[o];
      }
  return y;
}

inline Tensor deconv_backward(std::span<const double> weight, const Tensor& x, const Tensor& dy,
                              std::span<double> dweight, std::span<double> dbias) {
  const int out_ch = dy.channels;
  const RowMat wm = deconv_matrix(weight, out_ch, x.channels);
  RowMat dz(static_cast<Eigen::Index>(out_ch) * 4, static_cast<Eigen::Index>(x.plane()));
  for (int o = 0; o < out_ch; ++o) {
    double s = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        double* zr = dz.row(o * 4 + a * 2 + b).data();
        for (int n = 0; n < x.batch; ++n)
          for (int yy = 0; yy < x.height; ++yy)
            for (int xx = 0; xx < x.width; ++xx) {
              const double g = dy.at(o, n, 2 * yy + a, 2 * xx + b);
              zr[(static_cast<std::size_t>(n) * x.height + yy) * x.width + xx] = g;
              s += g;
            }
      }
    dbias[o] += s;
  }
  ConstMatMap xin(x.data.data(), x.channels, static_cast<Eigen::Index>(x.plane()));
  const auto px = static_cast<Eigen::Index>(x.pixels());
  RowMat dwm = RowMat::Zero(dz.rows(), x.channels);
  for (int n = 0; n < x.batch; ++n) dwm.noalias() += dz.middleCols(n * px, px) * xin.middleCols(n * px, px).transpose();
  for (int o = 0; o < out_ch; ++o)
    for (int c = 0; c < x.channels; ++c)
      for (int ab = 0; ab < 4; ++ab) dweight[(static_cast<std::size_t>(o) * x.channels + c) * 4 + ab] += dwm(o * 4 + ab, c);
  Tensor dx(x.channels, x.batch, x.height, x.width);
  MatMap dxm(dx.data.data(), x.channels, static_cast<Eigen::Index>(x.plane()));
  for (int n = 0; n < x.batch; ++n) dxm.middleCols(n * px, px).noalias() = wm.transpose() * dz.middleCols(n * px, px);
  return dx;
}

// --- batch normalization -----------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;

struct BatchNormCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;  ///< per channel
  std::vector<double> mean;     ///< batch mean per channel
  std::vector<double> var;      ///< biased batch variance per channel
};

/// Normalizes with batch statistics (population variance).
inline Tensor batchnorm_forward_train(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                                      BatchNormCache& cache) {
  const std::size_t m = x.plane();
  Tensor y(x.channels, x.batch, x.height, x.width);
  cache.xhat.resize(x.size());
  cache.inv_std.assign(x.channels, 0.0);
  cache.mean.assign(x.channels, 0.0);
  cache.var.assign(x.channels, 0.0);
  for (int c = 0; c < x.channels; ++c) {
    const double* xs = &x.data[c * m];
    double mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<double>(m);
    double var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
    double* xh = &cache.xhat[c * m];
    double* ys = &y.data[c * m];
    for (std::size_t i = 0; i < m; ++i) {
      xh[i] = (xs[i] - mean) * inv;
      ys[i] = gamma[c] * xh[i] + beta[c];
    }
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.inv_std[c] = inv;
  }
  return y;
}

inline Tensor batchnorm_forward_eval(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                                     std::span<const double> running_mean, std::span<const double> running_var) {
  const std::size_t m = x.plane();
  Tensor y(x.channels, x.batch, x.height, x.width);
  for (int c = 0; c < x.channels; ++c) {
    const double scale = gamma[c] / std::sqrt(running_var[c] + kBatchNormEps);
    const double shift = beta[c] - running_mean[c] * scale;
    const double* xs = &x.data[c * m];
    double* ys = &y.data[c * m];
    for (std::size_t i = 0; i < m; ++i) ys[i] = xs[i] * scale + shift;
  }
  return y;
}

inline Tensor batchnorm_backward(const Tensor& dy, std::span<const double> gamma, const BatchNormCache& cache,
                                 std::span<double> dgamma, std::span<double> dbeta) {
  const std::size_t m = dy.plane();
  const double md = static_cast<double>(m);
  Tensor dx(dy.channels, dy.batch, dy.height, dy.width);
  for (int c = 0; c < dy.channels; ++c) {
    const double* g = &dy.data[c * m];
    const double* xh = &cache.xhat[c * m];
    double sum_g = 0, sum_gx = 0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    dgamma[c] += sum_gx;
    dbeta[c] += sum_g;
    const double k = gamma[c] * cache.inv_std[c] / md;
    double* d = &dx.data[c * m];
    for (std::size_t i = 0; i < m; ++i) d[i] = k * (md * g[i] - sum_g - xh[i] * sum_gx);
  }
  return dx;
}

// --- pointwise / structural --------------------------------------------------

inline Tensor relu_forward(Tensor x) {
  for (double& v : x.data) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Gradient given the layer's output.
inline Tensor relu_backward(const Tensor& y, Tensor dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
  return dy;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor sigmoid_forward(Tensor x) {
  for (double& v : x.data) v = sigmoid(v);
  return x;
}

inline Tensor sigmoid_backward(const Tensor& y, Tensor dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] *= y.data[i] * (1.0 - y.data[i]);
  return dy;
}

struct MaxPoolResult {
  Tensor out;
  std::vector<std::uint32_t> argmax;  ///< flat input index per output element
};

inline MaxPoolResult maxpool_forward(const Tensor& x) {
  if (x.height % 2 || x.width % 2) throw ShapeError("max-pool needs even spatial dims");
  MaxPoolResult r{Tensor(x.channels, x.batch, x.height / 2, x.width / 2), {}};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int y = 0; y < r.out.height; ++y)
        for (int xx = 0; xx < r.out.width; ++xx, ++o) {
          const std::size_t base = (static_cast<std::size_t>(c) * x.batch + n) * x.pixels();
          std::size_t best = base + static_cast<std::size_t>(2 * y) * x.width + 2 * xx;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
              const std::size_t i = base + static_cast<std::size_t>(2 * y + a) * x.width + 2 * xx + b;
              if (x.data[i] > x.data[best]) best = i;
            }
          r.out.data[o] = x.data[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

inline Tensor maxpool_backward(const Tensor& x_shape, const std::vector<std::uint32_t>& argmax, const Tensor& dy) {
  Tensor dx(x_shape.channels, x_shape.batch, x_shape.height, x_shape.width);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

/// Channel concatenation; contiguous in the channel-major layout.
inline Tensor concat_forward(const Tensor& a, const Tensor& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width) throw ShapeError("concat: spatial mismatch");
  Tensor y(a.channels + b.channels, a.batch, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

inline std::pair<Tensor, Tensor> concat_backward(const Tensor& dy, int channels_a) {
  Tensor da(channels_a, dy.batch, dy.height, dy.width);
  Tensor db(dy.channels - channels_a, dy.batch, dy.height, dy.width);
  std::copy(dy.data.begin(), dy.data.begin() + static_cast<std::ptrdiff_t>(da.size()), da.data.begin());
  std::copy(dy.data.begin() + static_cast<std::ptrdiff_t>(da.size()), dy.data.end(), db.data.begin());
  return {std::move(da), std::move(db)};
}

}  // namespace subfork::layers
