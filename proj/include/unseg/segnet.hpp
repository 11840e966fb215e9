#pragma once

// The segmentation network: M × (conv3×3 → ReLU → batch norm), a bias-free
// per-pixel linear classifier into q responses, batch norm over the response
// axes, and argmax label assignment. Parameters are templated on the scalar
// so training runs in float and gradient checks in double.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "unseg/hyperparams.hpp"
#include "unseg/labels.hpp"
#include "unseg/tensor.hpp"

namespace unseg {

/// Conv layers pad by replicating edge pixels so a constant image stays
/// constant through every layer.
inline constexpr Padding kNetworkPadding = Padding::replicate;

/// One buffer per trainable array. Also used for gradients and momentum.
template <typename T>
struct ParamSet {
  std::vector<DenseArray<T>> conv_kernels;  // layer 1: p×3×3×3, then p×p×3×3
  std::vector<DenseArray<T>> conv_biases;   // p each
  std::vector<DenseArray<T>> bn_gamma;      // M feature instances (p) + response instance (q)
  std::vector<DenseArray<T>> bn_beta;
  DenseArray<T> classifier;  // q×p

  /// Visits arrays in model-file order: kernels/biases layer by layer,
  /// batch-norm gamma/beta in forward order, classifier.
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t m = 0; m < conv_kernels.size(); ++m) {
      f("conv_kernels[" + std::to_string(m) + "]", conv_kernels[m]);
      f("conv_biases[" + std::to_string(m) + "]", conv_biases[m]);
    }
    for (std::size_t m = 0; m < bn_gamma.size(); ++m) {
      f("bn_gamma[" + std::to_string(m) + "]", bn_gamma[m]);
      f("bn_beta[" + std::to_string(m) + "]", bn_beta[m]);
    }
    f(std::string("classifier"), classifier);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ParamSet*>(this)->for_each([&](const std::string& name, DenseArray<T>& a) {
      f(name, static_cast<const DenseArray<T>&>(a));
    });
  }

  /// Zero-filled set with the same shapes.
  ParamSet zeros_like() const {
    ParamSet z;
    auto zero = [](const std::vector<DenseArray<T>>& v) {
      std::vector<DenseArray<T>> out;
      for (const auto& a : v) out.emplace_back(a.shape());
      return out;
    };
    z.conv_kernels = zero(conv_kernels);
    z.conv_biases = zero(conv_biases);
    z.bn_gamma = zero(bn_gamma);
    z.bn_beta = zero(bn_beta);
    z.classifier = DenseArray<T>(classifier.shape());
    return z;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    auto conv = [](const std::vector<DenseArray<T>>& v) {
      std::vector<DenseArray<U>> r;
      for (const auto& a : v) r.push_back(a.template cast<U>());
      return r;
    };
    out.conv_kernels = conv(conv_kernels);
    out.conv_biases = conv(conv_biases);
    out.bn_gamma = conv(bn_gamma);
    out.bn_beta = conv(bn_beta);
    out.classifier = classifier.template cast<U>();
    return out;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

template <typename T>
using ParamGrads = ParamSet<T>;

template <typename T>
struct NetworkParams {
  ParamSet<T> weights;
  ParamSet<T> momentum;
  /// Bumped on every update; forward caches record it to detect staleness.
  std::uint64_t generation = 0;

  std::size_t layers() const { return weights.conv_kernels.size(); }
  std::size_t feature_dim() const { return weights.classifier.dim(1); }
  std::size_t clusters() const { return weights.classifier.dim(0); }

  template <typename U>
  NetworkParams<U> cast() const {
    return {weights.template cast<U>(), momentum.template cast<U>(), generation};
  }
};

/// Largest absolute difference over all weight buffers (shapes must agree).
template <typename T>
double max_param_distance(const ParamSet<T>& a, const ParamSet<T>& b) {
  std::vector<const DenseArray<T>*> lhs, rhs;
  a.for_each([&](const std::string&, const DenseArray<T>& x) { lhs.push_back(&x); });
  b.for_each([&](const std::string&, const DenseArray<T>& x) { rhs.push_back(&x); });
  if (lhs.size() != rhs.size()) throw InvalidArgument("max_param_distance: parameter sets differ in layout");
  double d = 0.0;
  for (std::size_t k = 0; k < lhs.size(); ++k) {
    if (lhs[k]->shape() != rhs[k]->shape())
      throw InvalidArgument("max_param_distance: shape mismatch at buffer " + std::to_string(k));
    for (std::size_t i = 0; i < lhs[k]->size(); ++i)
      d = std::max(d, std::abs(static_cast<double>((*lhs[k])[i]) - static_cast<double>((*rhs[k])[i])));
  }
  return d;
}

/// Shapes implied by (M, p, q); zero-filled.
template <typename T>
ParamSet<T> make_param_shapes(std::size_t layers, std::size_t p, std::size_t q) {
  ParamSet<T> s;
  for (std::size_t m = 0; m < layers; ++m) {
    const std::size_t in = m == 0 ? 3 : p;
    s.conv_kernels.emplace_back(Shape{p, in, 3, 3});
    s.conv_biases.emplace_back(Shape{p});
  }
  for (std::size_t m = 0; m <= layers; ++m) {
    const std::size_t c = m < layers ? p : q;
    s.bn_gamma.emplace_back(Shape{c}, T(1));
    s.bn_beta.emplace_back(Shape{c});
  }
  s.classifier = DenseArray<T>({q, p});
  return s;
}

/// Xavier-uniform kernels and classifier (bound sqrt(6/(fan_in+fan_out)),
/// conv fans count the 3×3 taps), zero biases, unit gamma, zero beta, zero
/// momentum. Samples are drawn in double so float and double parameter sets
/// from the same seed agree up to rounding.
template <typename T = float>
NetworkParams<T> init_params(const HyperParams& hp) {
  hp.validate();
  const auto M = static_cast<std::size_t>(hp.layers);
  const auto p = static_cast<std::size_t>(hp.feature_dim);
  const auto q = static_cast<std::size_t>(hp.max_clusters);
  NetworkParams<T> net;
  net.weights = make_param_shapes<T>(M, p, q);
  std::mt19937_64 rng(hp.seed);
  auto xavier = [&rng](DenseArray<T>& a, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : a.values()) v = static_cast<T>(dist(rng));
  };
  for (std::size_t m = 0; m < M; ++m) {
    auto& k = net.weights.conv_kernels[m];
    xavier(k, static_cast<double>(k.dim(1) * 9), static_cast<double>(k.dim(0) * 9));
  }
  xavier(net.weights.classifier, static_cast<double>(p), static_cast<double>(q));
  net.momentum = net.weights.zeros_like();
  return net;
}

/// Response map, raw ({r_n}) or after intra-axis normalization ({r'_n}).
template <typename T>
struct ResponseMap {
  DenseArray<T> values;  // q×H×W
  bool normalized = false;

  std::size_t clusters() const { return values.dim(0); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

template <typename T>
struct LayerCache {
  DenseArray<T> cols;  // im2col of the layer input
  DenseArray<T> pre;   // conv output before ReLU
  BatchNormSaved<T> bn;
};

template <typename T>
struct ForwardCache {
  std::uint64_t generation = 0;
  Shape image_shape;
  std::vector<LayerCache<T>> layers;
  DenseArray<T> features;  // x_n, p×H×W
  DenseArray<T> raw_response;
  BatchNormSaved<T> response_bn;
};

template <typename T>
struct ForwardResult {
  DenseArray<T> features;
  ResponseMap<T> response;  // normalized
  ForwardCache<T> cache;
};

namespace detail {

template <typename T>
void check_dims(const NetworkParams<T>& net, const HyperParams& hp) {
  if (net.layers() != static_cast<std::size_t>(hp.layers) ||
      net.feature_dim() != static_cast<std::size_t>(hp.feature_dim) ||
      net.clusters() != static_cast<std::size_t>(hp.max_clusters))
    throw InvalidArgument("network has M=" + std::to_string(net.layers()) + " p=" +
                          std::to_string(net.feature_dim()) + " q=" + std::to_string(net.clusters()) +
                          " but hyperparameters ask for M=" + std::to_string(hp.layers) + " p=" +
                          std::to_string(hp.feature_dim) + " q=" + std::to_string(hp.max_clusters));
}

}  // namespace detail

template <typename T>
ForwardResult<T> forward(const DenseArray<T>& image, const NetworkParams<T>& net, const HyperParams& hp) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw InvalidArgument("forward: expected a 3×H×W image, got " + shape_str(image.shape()));
  if (image.dim(1) < 1 || image.dim(2) < 1) throw InvalidArgument("forward: image smaller than 1×1");
  detail::check_dims(net, hp);

  const std::size_t H = image.dim(1), W = image.dim(2);
  const auto& w = net.weights;
  ForwardResult<T> r;
  r.cache.generation = net.generation;
  r.cache.image_shape = image.shape();

  DenseArray<T> x = image;
  for (std::size_t m = 0; m < net.layers(); ++m) {
    LayerCache<T> lc;
    lc.cols = im2col3x3(x, kNetworkPadding);
    lc.pre = conv2d_cols(lc.cols, w.conv_kernels[m], w.conv_biases[m], H, W);
    auto bn = batch_norm_channels(relu(lc.pre), w.bn_gamma[m], w.bn_beta[m], hp.eps);
    lc.bn = std::move(bn.saved);
    x = std::move(bn.output);
    r.cache.layers.push_back(std::move(lc));
  }
  r.cache.features = x;
  r.cache.raw_response = linear_channels(x, w.classifier);
  auto bn = batch_norm_channels(r.cache.raw_response, w.bn_gamma.back(), w.bn_beta.back(), hp.eps);
  r.cache.response_bn = std::move(bn.saved);
  r.features = std::move(x);
  r.response = ResponseMap<T>{std::move(bn.output), true};
  return r;
}

/// c_n = argmax_i r'_{n,i}; ties go to the lowest index.
template <typename T>
LabelMap assign_labels(const ResponseMap<T>& response) {
  if (!response.normalized) throw InvalidArgument("assign_labels: response map is not normalized");
  const std::size_t Q = response.clusters(), H = response.height(), W = response.width();
  LabelMap labels(H, W);
  std::vector<T> best(response.values.channel(0).begin(), response.values.channel(0).end());
  for (std::size_t i = 1; i < Q; ++i) {
    const auto ch = response.values.channel(i);
    for (std::size_t n = 0; n < H * W; ++n)
      if (ch[n] > best[n]) {
        best[n] = ch[n];
        labels.data[n] = static_cast<std::int32_t>(i);
      }
  }
  return labels;
}

/// Exact parameter cotangents of the composed forward map for the given
/// gradient with respect to the normalized response.
template <typename T>
ParamGrads<T> backward(const DenseArray<T>& image, const NetworkParams<T>& net, const ForwardCache<T>& cache,
                       const DenseArray<T>& grad_response) {
  if (cache.generation != net.generation || cache.layers.size() != net.layers())
    throw InvalidState("backward: forward cache is stale (generation " + std::to_string(cache.generation) +
                       ", parameters at " + std::to_string(net.generation) + ")");
  if (cache.image_shape != image.shape())
    throw InvalidState("backward: forward cache was computed for image " + shape_str(cache.image_shape) +
                       ", got " + shape_str(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (grad_response.shape() != Shape{net.clusters(), H, W})
    throw InvalidArgument("backward: grad_response shape " + shape_str(grad_response.shape()));

  const auto& w = net.weights;
  ParamGrads<T> g = w.zeros_like();
  const std::size_t M = net.layers();

  auto bn_r = batch_norm_channels_vjp(cache.response_bn, w.bn_gamma[M], grad_response);
  g.bn_gamma[M] = std::move(bn_r.gamma);
  g.bn_beta[M] = std::move(bn_r.beta);
  auto lin = linear_channels_vjp(cache.features, w.classifier, bn_r.input);
  g.classifier = std::move(lin.weight);

  DenseArray<T> up = std::move(lin.input);
  for (std::size_t m = M; m-- > 0;) {
    const auto& lc = cache.layers[m];
    auto bn = batch_norm_channels_vjp(lc.bn, w.bn_gamma[m], up);
    g.bn_gamma[m] = std::move(bn.gamma);
    g.bn_beta[m] = std::move(bn.beta);
    const DenseArray<T> grad_pre = relu_vjp(lc.pre, bn.input);
    const std::size_t C = w.conv_kernels[m].dim(1);
    auto conv = conv2d_vjp_cols(lc.cols, w.conv_kernels[m], grad_pre, C, H, W, m > 0, kNetworkPadding);
    g.conv_kernels[m] = std::move(conv.kernels);
    g.conv_biases[m] = std::move(conv.bias);
    up = std::move(conv.input);
  }
  return g;
}

/// v ← momentum·v + g; θ ← θ − lr·v. Gradients are validated before any
/// buffer is touched.
template <typename T>
void sgd_momentum_step(NetworkParams<T>& net, const ParamGrads<T>& grads, double lr, double momentum) {
  std::vector<const DenseArray<T>*> gs;
  grads.for_each([&](const std::string& name, const DenseArray<T>& a) {
    if (!a.all_finite()) throw NumericError("sgd_momentum_step: non-finite gradient in " + name);
    gs.push_back(&a);
  });
  std::vector<DenseArray<T>*> thetas, vs;
  std::vector<std::string> names;
  net.weights.for_each([&](const std::string& name, DenseArray<T>& a) {
    thetas.push_back(&a);
    names.push_back(name);
  });
  net.momentum.for_each([&](const std::string&, DenseArray<T>& a) { vs.push_back(&a); });
  if (gs.size() != thetas.size() || vs.size() != thetas.size())
    throw InvalidArgument("sgd_momentum_step: gradient layout does not match parameters");
  for (std::size_t k = 0; k < thetas.size(); ++k)
    if (gs[k]->shape() != thetas[k]->shape() || vs[k]->shape() != thetas[k]->shape())
      throw InvalidArgument("sgd_momentum_step: shape mismatch for " + names[k]);

  for (std::size_t k = 0; k < thetas.size(); ++k) {
    DenseArray<T>& theta = *thetas[k];
    DenseArray<T>& v = *vs[k];
    const DenseArray<T>& g = *gs[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = static_cast<T>(momentum * v[i] + g[i]);
      theta[i] = static_cast<T>(theta[i] - lr * v[i]);
    }
  }
  ++net.generation;
}

}  // namespace unseg
