#pragma once

// Dense C×H×W arrays and the differentiable primitives the network is built
// from. Every primitive comes with a hand-derived vector-Jacobian product.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "unseg/error.hpp"

namespace unseg {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Row-major dense array. Images and feature maps use channels/height/width
/// order; conv kernels are out×in×3×3.
template <typename T>
class DenseArray {
 public:
  using value_type = T;

  DenseArray() = default;
  explicit DenseArray(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  DenseArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw InvalidArgument("DenseArray: buffer of " + std::to_string(data_.size()) +
                            " values does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& buffer() noexcept { return data_; }
  const std::vector<T>& buffer() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 accessors (c, y, x).
  T& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Contiguous plane of channel c in a C×H×W array.
  std::span<T> channel(std::size_t c) noexcept {
    const std::size_t n = shape_[1] * shape_[2];
    return std::span<T>(data_).subspan(c * n, n);
  }
  std::span<const T> channel(std::size_t c) const noexcept {
    const std::size_t n = shape_[1] * shape_[2];
    return std::span<const T>(data_).subspan(c * n, n);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  DenseArray<U> cast() const {
    DenseArray<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(DenseArray<T>& a, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMatrix<T>>(a.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
}
template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const DenseArray<T>& a, std::size_t rows,
                                         std::size_t cols) {
  return Eigen::Map<const RowMatrix<T>>(a.data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
}

namespace detail {

inline void require_rank3(const Shape& s, const char* what) {
  if (s.size() != 3) throw InvalidArgument(std::string(what) + ": expected C×H×W, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: 3×3 kernels, stride 1, one pixel of padding (size preserving).
// ---------------------------------------------------------------------------

/// Border handling for 3×3 convolutions. Zero padding is the primitive's
/// default; replicate padding keeps spatially constant inputs constant.
enum class Padding { zero, replicate };

namespace detail {

/// Source index for a tap at offset `pos` (may be -1 or n); -1 means padding zero.
inline std::ptrdiff_t pad_index(std::ptrdiff_t pos, std::size_t n, Padding pad) {
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  if (pos >= 0 && pos <= last) return pos;
  if (pad == Padding::zero) return -1;
  return pos < 0 ? 0 : last;
}

}  // namespace detail

/// Unfolds a C×H×W array into a (C·9)×(H·W) patch matrix so that a 3×3
/// convolution becomes one matrix product. Row index is c·9 + dy·3 + dx.
template <typename T>
DenseArray<T> im2col3x3(const DenseArray<T>& input, Padding pad = Padding::zero) {
  detail::require_rank3(input.shape(), "im2col3x3");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  DenseArray<T> cols({C * 9, H * W});
  T* out = cols.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) {
        T* row = out + ((c * 3 + dy) * 3 + dx) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const auto sy = detail::pad_index(static_cast<std::ptrdiff_t>(y + dy) - 1, H, pad);
          for (std::size_t x = 0; x < W; ++x) {
            const auto sx = detail::pad_index(static_cast<std::ptrdiff_t>(x + dx) - 1, W, pad);
            row[y * W + x] = (sy < 0 || sx < 0)
                                 ? T(0)
                                 : input.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
        }
      }
  return cols;
}

/// Adjoint of im2col3x3: scatters patch-matrix gradients back onto the image.
template <typename T>
DenseArray<T> col2im3x3(const DenseArray<T>& cols, std::size_t C, std::size_t H, std::size_t W,
                        Padding pad = Padding::zero) {
  DenseArray<T> img({C, H, W});
  const T* in = cols.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) {
        const T* row = in + ((c * 3 + dy) * 3 + dx) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const auto sy = detail::pad_index(static_cast<std::ptrdiff_t>(y + dy) - 1, H, pad);
          if (sy < 0) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const auto sx = detail::pad_index(static_cast<std::ptrdiff_t>(x + dx) - 1, W, pad);
            if (sx < 0) continue;
            img.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += row[y * W + x];
          }
        }
      }
  return img;
}

namespace detail {

template <typename T>
void check_conv_shapes(const Shape& in, const DenseArray<T>& kernels, const DenseArray<T>& bias) {
  require_rank3(in, "conv2d input");
  const Shape& k = kernels.shape();
  if (k.size() != 4 || k[2] != 3 || k[3] != 3)
    throw InvalidArgument("conv2d: kernels must be O×C×3×3, got " + shape_str(k));
  if (k[1] != in[0])
    throw InvalidArgument("conv2d: kernel expects " + std::to_string(k[1]) +
                          " input channels, input has " + std::to_string(in[0]));
  if (bias.rank() != 1 || bias.dim(0) != k[0])
    throw InvalidArgument("conv2d: bias must have " + std::to_string(k[0]) + " entries, got " +
                          shape_str(bias.shape()));
}

}  // namespace detail

/// out(O×N) = a(O×K) · b(K×N), all row-major. Every output column sees the
/// same sequence of multiply-adds, so identical input columns give bitwise
/// identical output columns (a blocked GEMM rounds edge tiles differently).
template <typename T>
void columnwise_product(const T* a, const T* b, T* out, std::size_t O, std::size_t K, std::size_t N) {
  constexpr std::size_t tile = 256;
  std::fill(out, out + O * N, T(0));
  for (std::size_t n0 = 0; n0 < N; n0 += tile) {
    const std::size_t n1 = std::min(N, n0 + tile);
    std::size_t o = 0;
    for (; o + 4 <= O; o += 4) {
      T* r0 = out + o * N;
      T* r1 = r0 + N;
      T* r2 = r1 + N;
      T* r3 = r2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a0 = a[o * K + k], a1 = a[(o + 1) * K + k], a2 = a[(o + 2) * K + k], a3 = a[(o + 3) * K + k];
        const T* bk = b + k * N;
        for (std::size_t n = n0; n < n1; ++n) {
          const T v = bk[n];
          r0[n] += a0 * v;
          r1[n] += a1 * v;
          r2[n] += a2 * v;
          r3[n] += a3 * v;
        }
      }
    }
    for (; o < O; ++o) {
      T* r = out + o * N;
      for (std::size_t k = 0; k < K; ++k) {
        const T ak = a[o * K + k];
        const T* bk = b + k * N;
        for (std::size_t n = n0; n < n1; ++n) r[n] += ak * bk[n];
      }
    }
  }
}

/// Forward from a precomputed patch matrix (see im2col3x3).
template <typename T>
DenseArray<T> conv2d_cols(const DenseArray<T>& cols, const DenseArray<T>& kernels,
                          const DenseArray<T>& bias, std::size_t H, std::size_t W) {
  const std::size_t O = kernels.dim(0), K = kernels.dim(1) * 9;
  DenseArray<T> out({O, H, W});
  columnwise_product(kernels.data(), cols.data(), out.data(), O, K, H * W);
  for (std::size_t o = 0; o < O; ++o)
    for (T& v : out.channel(o)) v += bias[o];
  return out;
}

template <typename T>
DenseArray<T> conv2d(const DenseArray<T>& input, const DenseArray<T>& kernels, const DenseArray<T>& bias,
                     Padding pad = Padding::zero) {
  detail::check_conv_shapes(input.shape(), kernels, bias);
  return conv2d_cols(im2col3x3(input, pad), kernels, bias, input.dim(1), input.dim(2));
}

template <typename T>
struct ConvGrads {
  DenseArray<T> input;  // empty when not requested
  DenseArray<T> kernels;
  DenseArray<T> bias;
};

/// VJP given the patch matrix of the forward input. The input gradient is
/// skipped when `want_input` is false (first layer of the network).
template <typename T>
ConvGrads<T> conv2d_vjp_cols(const DenseArray<T>& cols, const DenseArray<T>& kernels,
                             const DenseArray<T>& upstream, std::size_t C, std::size_t H,
                             std::size_t W, bool want_input = true, Padding pad = Padding::zero) {
  const std::size_t O = kernels.dim(0), K = C * 9, N = H * W;
  if (upstream.shape() != Shape{O, H, W})
    throw InvalidArgument("conv2d_vjp: upstream shape " + shape_str(upstream.shape()) +
                          " does not match output " + shape_str({O, H, W}));
  ConvGrads<T> g;
  const auto up = as_matrix(upstream, O, N);
  g.kernels = DenseArray<T>(kernels.shape());
  as_matrix(g.kernels, O, K).noalias() = up * as_matrix(cols, K, N).transpose();
  g.bias = DenseArray<T>({O});
  for (std::size_t o = 0; o < O; ++o) {
    double s = 0.0;
    for (T v : upstream.channel(o)) s += v;
    g.bias[o] = static_cast<T>(s);
  }
  if (want_input) {
    DenseArray<T> gcols({K, N});
    as_matrix(gcols, K, N).noalias() = as_matrix(kernels, O, K).transpose() * up;
    g.input = col2im3x3(gcols, C, H, W, pad);
  }
  return g;
}

template <typename T>
ConvGrads<T> conv2d_vjp(const DenseArray<T>& input, const DenseArray<T>& kernels,
                        const DenseArray<T>& bias, const DenseArray<T>& upstream,
                        Padding pad = Padding::zero) {
  detail::check_conv_shapes(input.shape(), kernels, bias);
  return conv2d_vjp_cols(im2col3x3(input, pad), kernels, upstream, input.dim(0), input.dim(1),
                         input.dim(2), true, pad);
}

// ---------------------------------------------------------------------------
// Per-pixel linear map (1×1 convolution without bias): out[:, n] = W · in[:, n].
// ---------------------------------------------------------------------------

template <typename T>
DenseArray<T> linear_channels(const DenseArray<T>& input, const DenseArray<T>& weight) {
  detail::require_rank3(input.shape(), "linear_channels");
  if (weight.rank() != 2 || weight.dim(1) != input.dim(0))
    throw InvalidArgument("linear_channels: weight " + shape_str(weight.shape()) +
                          " incompatible with input " + shape_str(input.shape()));
  const std::size_t Q = weight.dim(0), P = weight.dim(1), N = input.dim(1) * input.dim(2);
  DenseArray<T> out({Q, input.dim(1), input.dim(2)});
  columnwise_product(weight.data(), input.data(), out.data(), Q, P, N);
  return out;
}

template <typename T>
struct LinearGrads {
  DenseArray<T> input;
  DenseArray<T> weight;
};

template <typename T>
LinearGrads<T> linear_channels_vjp(const DenseArray<T>& input, const DenseArray<T>& weight,
                                   const DenseArray<T>& upstream) {
  const std::size_t Q = weight.dim(0), P = weight.dim(1), N = input.dim(1) * input.dim(2);
  if (upstream.shape() != Shape{Q, input.dim(1), input.dim(2)})
    throw InvalidArgument("linear_channels_vjp: upstream shape " + shape_str(upstream.shape()));
  LinearGrads<T> g{DenseArray<T>(input.shape()), DenseArray<T>(weight.shape())};
  const auto up = as_matrix(upstream, Q, N);
  as_matrix(g.weight, Q, P).noalias() = up * as_matrix(input, P, N).transpose();
  as_matrix(g.input, P, N).noalias() = as_matrix(weight, Q, P).transpose() * up;
  return g;
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient at exactly zero is 0.
// ---------------------------------------------------------------------------

template <typename T>
DenseArray<T> relu(const DenseArray<T>& input) {
  DenseArray<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
DenseArray<T> relu_vjp(const DenseArray<T>& input, const DenseArray<T>& upstream) {
  if (input.shape() != upstream.shape())
    throw InvalidArgument("relu_vjp: upstream shape " + shape_str(upstream.shape()) +
                          " does not match input " + shape_str(input.shape()));
  DenseArray<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T(0) ? upstream[i] : T(0);
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over the H·W pixels of one image, per channel.
// ---------------------------------------------------------------------------

inline constexpr double kDefaultBatchNormEps = 1e-5;

template <typename T>
struct BatchNormSaved {
  DenseArray<T> normalized;  // (x - mean) / sqrt(var + eps)
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormResult {
  DenseArray<T> output;
  BatchNormSaved<T> saved;
};

template <typename T>
BatchNormResult<T> batch_norm_channels(const DenseArray<T>& input, const DenseArray<T>& gamma,
                                       const DenseArray<T>& beta, double eps = kDefaultBatchNormEps) {
  detail::require_rank3(input.shape(), "batch_norm_channels");
  const std::size_t C = input.dim(0), N = input.dim(1) * input.dim(2);
  if (N == 0) throw InvalidArgument("batch_norm_channels: empty spatial extent");
  if (!(eps > 0.0)) throw InvalidArgument("batch_norm_channels: eps must be positive");
  if (gamma.size() != C || beta.size() != C)
    throw InvalidArgument("batch_norm_channels: gamma/beta must have " + std::to_string(C) + " entries");

  BatchNormResult<T> r{DenseArray<T>(input.shape()),
                       {DenseArray<T>(input.shape()), std::vector<T>(C), std::vector<T>(C)}};
  for (std::size_t c = 0; c < C; ++c) {
    const auto x = input.channel(c);
    double mean = 0.0;
    for (T v : x) mean += v;
    mean /= static_cast<double>(N);
    double var = 0.0;
    for (T v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(N);
    const double inv_std = 1.0 / std::sqrt(var + eps);

    auto xhat = r.saved.normalized.channel(c);
    auto y = r.output.channel(c);
    const double g = gamma[c], b = beta[c];
    for (std::size_t i = 0; i < N; ++i) {
      const double h = (x[i] - mean) * inv_std;
      xhat[i] = static_cast<T>(h);
      y[i] = static_cast<T>(g * h + b);
    }
    r.saved.mean[c] = static_cast<T>(mean);
    r.saved.inv_std[c] = static_cast<T>(inv_std);
  }
  return r;
}

template <typename T>
struct BatchNormGrads {
  DenseArray<T> input;
  DenseArray<T> gamma;
  DenseArray<T> beta;
};

/// dx = gamma·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂)), the exact gradient
/// through both batch statistics.
template <typename T>
BatchNormGrads<T> batch_norm_channels_vjp(const BatchNormSaved<T>& saved, const DenseArray<T>& gamma,
                                          const DenseArray<T>& upstream) {
  const DenseArray<T>& xhat = saved.normalized;
  if (upstream.shape() != xhat.shape())
    throw InvalidArgument("batch_norm_channels_vjp: upstream shape " + shape_str(upstream.shape()) +
                          " does not match " + shape_str(xhat.shape()));
  const std::size_t C = xhat.dim(0), N = xhat.dim(1) * xhat.dim(2);
  BatchNormGrads<T> g{DenseArray<T>(xhat.shape()), DenseArray<T>({C}), DenseArray<T>({C})};
  for (std::size_t c = 0; c < C; ++c) {
    const auto dy = upstream.channel(c);
    const auto h = xhat.channel(c);
    double sum_dy = 0.0, sum_dy_h = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      sum_dy += dy[i];
      sum_dy_h += static_cast<double>(dy[i]) * h[i];
    }
    g.beta[c] = static_cast<T>(sum_dy);
    g.gamma[c] = static_cast<T>(sum_dy_h);
    const double scale = static_cast<double>(gamma[c]) * saved.inv_std[c] / static_cast<double>(N);
    auto dx = g.input.channel(c);
    for (std::size_t i = 0; i < N; ++i)
      dx[i] = static_cast<T>(scale * (static_cast<double>(N) * dy[i] - sum_dy - h[i] * sum_dy_h));
  }
  return g;
}

}  // namespace unseg
