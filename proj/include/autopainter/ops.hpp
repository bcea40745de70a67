#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "autopainter/errors.hpp"
#include "autopainter/tensor.hpp"

// Differentiable building blocks over NCHW tensors. Each forward has a matching backward that
// takes the saved forward inputs and returns input/parameter gradients.
namespace autopainter::ops {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int kernel = 4;
  int stride = 2;
  int pad = 1;

  std::int64_t out_size(std::int64_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
  std::int64_t transposed_out_size(std::int64_t in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw InferenceError(std::string(what) + ": expected NCHW tensor, got " + shape_string(s));
}

/// Output positions [lo, hi) along one axis whose input index o*stride - pad + k lies in [0, n).
inline std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t n, std::int64_t out, int stride, int pad,
                                                         std::int64_t k) {
  // o*stride >= pad - k  and  o*stride <= n - 1 + pad - k
  const std::int64_t lo_num = pad - k;
  std::int64_t lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const std::int64_t hi_num = n - 1 + pad - k;
  std::int64_t hi = hi_num < 0 ? 0 : hi_num / stride + 1;
  return {std::min(lo, out), std::clamp(hi, std::min(lo, out), out)};
}

/// Unfolds x (N,C,H,W) into a (C*k*k, N*Ho*Wo) column matrix.
template <typename T>
RowMatrix<T> im2col(const Tensor<T>& x, ConvGeometry g, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t k = g.kernel, plane = out_h * out_w;
  const std::int64_t s = g.stride;
  RowMatrix<T> cols(c * k * k, n * plane);
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky) {
      const auto [oy0, oy1] = valid_range(h, out_h, g.stride, g.pad, ky);
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto [ox0, ox1] = valid_range(w, out_w, g.stride, g.pad, kx);
        T* row = cols.data() + ((ci * k + ky) * k + kx) * n * plane;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* src = x.data() + (b * c + ci) * h * w;
          T* dst = row + b * plane;
          std::fill(dst, dst + oy0 * out_w, T(0));
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            T* d = dst + oy * out_w;
            const T* srow = src + (oy * s - g.pad + ky) * w - g.pad + kx;
            std::fill(d, d + ox0, T(0));
            if (s == 1) {
              std::copy(srow + ox0, srow + ox1, d + ox0);
            } else {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) d[ox] = srow[ox * s];
            }
            std::fill(d + ox1, d + out_w, T(0));
          }
          std::fill(dst + oy1 * out_w, dst + plane, T(0));
        }
      }
    }
  return cols;
}

/// Adjoint of im2col: scatters-and-adds columns back into an (N,C,H,W) tensor.
template <typename T>
Tensor<T> col2im(const RowMatrix<T>& cols, const Shape& image_shape, ConvGeometry g, std::int64_t out_h,
                 std::int64_t out_w) {
  Tensor<T> x(image_shape);
  const std::int64_t n = image_shape[0], c = image_shape[1], h = image_shape[2], w = image_shape[3];
  const std::int64_t k = g.kernel, plane = out_h * out_w;
  const std::int64_t s = g.stride;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky) {
      const auto [oy0, oy1] = valid_range(h, out_h, g.stride, g.pad, ky);
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto [ox0, ox1] = valid_range(w, out_w, g.stride, g.pad, kx);
        const T* row = cols.data() + ((ci * k + ky) * k + kx) * n * plane;
        for (std::int64_t b = 0; b < n; ++b) {
          T* dst = x.data() + (b * c + ci) * h * w;
          const T* src = row + b * plane;
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const T* srow = src + oy * out_w;
            T* drow = dst + (oy * s - g.pad + ky) * w - g.pad + kx;
            if (s == 1) {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) drow[ox] += srow[ox];
            } else {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) drow[ox * s] += srow[ox];
            }
          }
        }
      }
    }
  return x;
}

/// (N,C,H,W) -> (C, N*H*W) matrix.
template <typename T>
RowMatrix<T> channels_major(const Tensor<T>& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  RowMatrix<T> m(c, n * plane);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci)
      std::copy_n(x.data() + (b * c + ci) * plane, plane, m.data() + ci * n * plane + b * plane);
  return m;
}

/// (C, N*H*W) matrix -> (N,C,H,W).
template <typename T>
Tensor<T> from_channels_major(const RowMatrix<T>& m, std::int64_t n, std::int64_t h, std::int64_t w) {
  const std::int64_t c = m.rows(), plane = h * w;
  Tensor<T> x({n, c, h, w});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci)
      std::copy_n(m.data() + ci * n * plane + b * plane, plane, x.data() + (b * c + ci) * plane);
  return x;
}

template <typename T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::int64_t n = y.dim(0), c = y.dim(1), plane = y.dim(2) * y.dim(3);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      T* p = y.data() + (b * c + ci) * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] += bias[ci];
    }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& dy) {
  const std::int64_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  Tensor<T> db({c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* p = dy.data() + (b * c + ci) * plane;
      T acc{0};
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      db[ci] += acc;
    }
  return db;
}

/// Convolution with weight (Cout, Cin, k, k) and optional bias (Cout).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, ConvGeometry g) {
  require_rank4(x.shape(), "conv2d");
  const std::int64_t cout = weight.dim(0), cin = weight.dim(1);
  if (x.dim(1) != cin || weight.dim(2) != g.kernel || weight.dim(3) != g.kernel)
    throw InferenceError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  const std::int64_t oh = g.out_size(x.dim(2)), ow = g.out_size(x.dim(3));
  if (oh < 1 || ow < 1) throw InferenceError("conv2d: input " + shape_string(x.shape()) + " too small");
  const RowMatrix<T> cols = im2col(x, g, oh, ow);
  const ConstMatrixMap<T> wm(weight.data(), cout, cin * g.kernel * g.kernel);
  RowMatrix<T> out(cout, cols.cols());
  out.noalias() = wm * cols;
  Tensor<T> y = from_channels_major(out, x.dim(0), oh, ow);
  if (bias) add_channel_bias(y, *bias);
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;  // empty when the layer has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias, const Tensor<T>& dy,
                             ConvGeometry g, bool need_input_grad = true, bool need_param_grad = true) {
  const std::int64_t cout = weight.dim(0), cin = weight.dim(1), kk = g.kernel * g.kernel;
  const std::int64_t oh = dy.dim(2), ow = dy.dim(3);
  const RowMatrix<T> dym = channels_major(dy);
  ConvGrads<T> grads;
  if (need_param_grad) {
    const RowMatrix<T> cols = im2col(x, g, oh, ow);
    grads.weight = Tensor<T>(weight.shape());
    MatrixMap<T> dw(grads.weight.data(), cout, cin * kk);
    dw.noalias() = dym * cols.transpose();
    if (has_bias) grads.bias = channel_sums(dy);
  }
  if (need_input_grad) {
    const ConstMatrixMap<T> wm(weight.data(), cout, cin * kk);
    RowMatrix<T> dcols(cin * kk, dym.cols());
    dcols.noalias() = wm.transpose() * dym;
    grads.input = col2im(dcols, x.shape(), g, oh, ow);
  }
  return grads;
}

/// Transposed convolution with weight (Cin, Cout, k, k) and optional bias (Cout).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, ConvGeometry g) {
  require_rank4(x.shape(), "conv_transpose2d");
  const std::int64_t cin = weight.dim(0), cout = weight.dim(1), kk = g.kernel * g.kernel;
  if (x.dim(1) != cin)
    throw InferenceError("conv_transpose2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  const std::int64_t n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  const std::int64_t oh = g.transposed_out_size(ih), ow = g.transposed_out_size(iw);
  const RowMatrix<T> xm = channels_major(x);
  const ConstMatrixMap<T> wm(weight.data(), cin, cout * kk);
  RowMatrix<T> cols(cout * kk, xm.cols());
  cols.noalias() = wm.transpose() * xm;
  Tensor<T> y = col2im(cols, {n, cout, oh, ow}, g, ih, iw);
  if (bias) add_channel_bias(y, *bias);
  return y;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias,
                                       const Tensor<T>& dy, ConvGeometry g) {
  const std::int64_t cin = weight.dim(0), cout = weight.dim(1), kk = g.kernel * g.kernel;
  const std::int64_t n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  const RowMatrix<T> dcols = im2col(dy, g, ih, iw);
  const RowMatrix<T> xm = channels_major(x);
  ConvGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  MatrixMap<T> dw(grads.weight.data(), cin, cout * kk);
  dw.noalias() = xm * dcols.transpose();
  if (has_bias) grads.bias = channel_sums(dy);
  const ConstMatrixMap<T> wm(weight.data(), cin, cout * kk);
  RowMatrix<T> dx(cin, dcols.cols());
  dx.noalias() = wm * dcols;
  grads.input = from_channels_major(dx, n, ih, iw);
  return grads;
}

/// Per-sample, per-channel normalisation with affine scale/shift.
template <typename T>
struct InstanceNormCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
};

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        InstanceNormCache<T>* cache, T eps = T(1e-5)) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv(static_cast<std::size_t>(n * c));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* p = x.data() + (b * c + ci) * plane;
      T mean{0};
      for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
      mean /= T(plane);
      T var{0};
      for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
      var /= T(plane);
      const T inv_std = T(1) / std::sqrt(var + eps);
      inv[b * c + ci] = inv_std;
      T* h = xhat.data() + (b * c + ci) * plane;
      T* q = y.data() + (b * c + ci) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mean) * inv_std;
        q[i] = h[i] * gamma[ci] + beta[ci];
      }
    }
  if (cache) *cache = {std::move(xhat), std::move(inv)};
  return y;
}

template <typename T>
struct NormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
NormGrads<T> instance_norm_backward(const InstanceNormCache<T>& cache, const Tensor<T>& gamma,
                                    const Tensor<T>& dy) {
  const std::int64_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  NormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>({c}), Tensor<T>({c})};
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const std::int64_t off = (b * c + ci) * plane;
      const T* d = dy.data() + off;
      const T* h = cache.normalized.data() + off;
      T sum_d{0}, sum_dh{0};
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_d += d[i];
        sum_dh += d[i] * h[i];
      }
      g.beta[ci] += sum_d;
      g.gamma[ci] += sum_dh;
      const T scale = gamma[ci] * cache.inv_std[b * c + ci] / T(plane);
      T* dx = g.input.data() + off;
      for (std::int64_t i = 0; i < plane; ++i) dx[i] = scale * (T(plane) * d[i] - sum_d - h[i] * sum_dh);
    }
  return g;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, T slope) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : slope * dy[i];
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  return leaky_relu_backward(x, dy, T(0));
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

/// Takes the forward *output*.
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i])) : std::exp(x[i]) / (T(1) + std::exp(x[i]));
  return y;
}

/// Concatenates two NCHW tensors along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat");
  require_rank4(b.shape(), "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw InferenceError("concat: incompatible " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<T> y({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.data() + s * ca * plane, ca * plane, y.data() + s * (ca + cb) * plane);
    std::copy_n(b.data() + s * cb * plane, cb * plane, y.data() + (s * (ca + cb) + ca) * plane);
  }
  return y;
}

/// Splits channel-concatenated gradients back into the two operands.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, std::int64_t first_channels) {
  const std::int64_t n = y.dim(0), c = y.dim(1), plane = y.dim(2) * y.dim(3);
  const std::int64_t cb = c - first_channels;
  Tensor<T> a({n, first_channels, y.dim(2), y.dim(3)});
  Tensor<T> b({n, cb, y.dim(2), y.dim(3)});
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(y.data() + s * c * plane, first_channels * plane, a.data() + s * first_channels * plane);
    std::copy_n(y.data() + (s * c + first_channels) * plane, cb * plane, b.data() + s * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

/// 2x2 max pooling, stride 2. `argmax` records the winning flat input index per output.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x, std::vector<std::size_t>* argmax) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor<T> y({n, c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = static_cast<std::size_t>(((b * c + ci) * h + 2 * oy) * w + 2 * ox);
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::size_t>(((b * c + ci) * h + 2 * oy + dy) * w + 2 * ox + dx);
              if (x[idx] > x[best]) best = idx;
            }
          y[o] = x[best];
          if (argmax) (*argmax)[o] = best;
        }
  return y;
}

template <typename T>
Tensor<T> max_pool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

}  // namespace autopainter::ops
