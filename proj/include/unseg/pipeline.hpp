#pragma once

// Training loops around the network: per-image optimization (optionally with
// scribbles), single-pass reference training, fixed-weight application, and
// connected-component segment extraction.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unseg/hyperparams.hpp"
#include "unseg/labels.hpp"
#include "unseg/losses.hpp"
#include "unseg/segnet.hpp"

namespace unseg {

/// Loss terms of one iteration (the gradient is not retained).
struct IterationRecord {
  int iteration = 0;  // 1-based
  double sim = 0.0;
  double con = 0.0;
  double scr = 0.0;
  double total = 0.0;
  std::size_t unique_labels = 0;
};

template <typename T = float>
struct SegmentationResult {
  LabelMap labels;
  std::size_t unique_label_count = 0;
  std::vector<IterationRecord> loss_history;
  int iterations_run = 0;
  NetworkParams<T> params;
};

template <typename T>
struct StepOutcome {
  LabelMap labels;
  IterationRecord record;
};

/// One forward → assign → loss → backward → update iteration.
template <typename T>
StepOutcome<T> train_step(NetworkParams<T>& net, const DenseArray<T>& image, const HyperParams& hp,
                          const std::optional<Scribbles>& scr, int iteration) {
  auto fwd = forward(image, net, hp);
  LabelMap labels = assign_labels(fwd.response);
  auto loss = total_loss(fwd.response, labels, scr, hp.mu, hp.nu, hp.tv_bounds);
  IterationRecord rec{iteration, loss.sim, loss.con, loss.scr, loss.total, labels.unique_count()};
  if (!std::isfinite(loss.total) || !loss.grad_response.all_finite()) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << iteration << ": sim=" << loss.sim << " con=" << loss.con
       << " scr=" << loss.scr << " total=" << loss.total;
    throw NumericError(os.str());
  }
  const auto grads = backward(image, net, fwd.cache, loss.grad_response);
  sgd_momentum_step(net, grads, hp.lr, hp.momentum);
  return {std::move(labels), rec};
}

namespace detail {

inline void check_scribbles(const Scribbles& s, std::size_t H, std::size_t W, int q) {
  if (s.mask.height != H || s.mask.width != W || s.labels.height != H || s.labels.width != W)
    throw InvalidArgument("scribbles are " + std::to_string(s.mask.height) + "x" + std::to_string(s.mask.width) +
                          " but the image is " + std::to_string(H) + "x" + std::to_string(W));
  for (std::size_t n = 0; n < s.mask.size(); ++n)
    if (s.mask.data[n] && (s.labels.data[n] < 0 || s.labels.data[n] >= q))
      throw InvalidArgument("scribble label " + std::to_string(s.labels.data[n]) + " outside [0, q)");
}

}  // namespace detail

/// Optimizes a freshly initialized network on one image for up to
/// hp.max_iters iterations, stopping once the label count drops to
/// hp.min_labels or below. The returned labels come from the last iteration.
template <typename T = float>
SegmentationResult<T> segment(const DenseArray<T>& image, const HyperParams& hp,
                              const std::optional<Scribbles>& scr = std::nullopt) {
  hp.validate();
  require_image_shape(image);
  if (scr) detail::check_scribbles(*scr, image.dim(1), image.dim(2), hp.max_clusters);

  SegmentationResult<T> result;
  result.params = init_params<T>(hp);
  for (int t = 1; t <= hp.max_iters; ++t) {
    auto step = train_step(result.params, image, hp, scr, t);
    result.loss_history.push_back(step.record);
    result.labels = std::move(step.labels);
    result.unique_label_count = step.record.unique_labels;
    result.iterations_run = t;
    if (result.unique_label_count <= static_cast<std::size_t>(hp.min_labels)) break;
  }
  return result;
}

/// Reference-image training: one update per image, in the given order, for
/// `epochs` passes. No early stopping.
template <typename T = float>
NetworkParams<T> train_reference(const std::vector<DenseArray<T>>& images, const HyperParams& hp, int epochs = 1) {
  hp.validate();
  if (images.empty()) throw InvalidArgument("train_reference: no reference images");
  if (epochs < 1) throw InvalidArgument("train_reference: epochs must be >= 1");
  for (const auto& img : images) require_image_shape(img);
  NetworkParams<T> net = init_params<T>(hp);
  int t = 0;
  for (int e = 0; e < epochs; ++e)
    for (const auto& img : images) train_step(net, img, hp, std::nullopt, ++t);
  return net;
}

/// Labels an image with frozen weights. Batch statistics come from the image
/// itself; the parameters are not modified.
template <typename T = float>
LabelMap apply_fixed(const NetworkParams<T>& params, const DenseArray<T>& image, const HyperParams& hp) {
  require_image_shape(image);
  return assign_labels(forward(image, params, hp).response);
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

struct SegmentSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Mask> masks;
  std::vector<std::int32_t> source_labels;  // label each mask was cut from

  std::size_t size() const { return masks.size(); }
};

namespace detail {

inline std::uint32_t uf_find(std::vector<std::uint32_t>& parent, std::uint32_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

inline void uf_union(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b) {
  a = uf_find(parent, a);
  b = uf_find(parent, b);
  if (a == b) return;
  if (a < b) parent[b] = a;
  else parent[a] = b;
}

}  // namespace detail

/// 4-connected components of equal label. Component IDs are dense and
/// ordered by the scanline position of each component's first pixel.
/// Two-pass union-find labelling.
inline LabelMap connected_components(const LabelMap& labels) {
  const std::size_t H = labels.height, W = labels.width, N = H * W;
  std::vector<std::uint32_t> parent(N);
  std::iota(parent.begin(), parent.end(), 0u);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto n = static_cast<std::uint32_t>(y * W + x);
      if (x > 0 && labels.data[n - 1] == labels.data[n]) detail::uf_union(parent, n - 1, n);
      if (y > 0 && labels.data[n - W] == labels.data[n])
        detail::uf_union(parent, n - static_cast<std::uint32_t>(W), n);
    }
  // Union always keeps the smaller index as root, so each root is the first
  // pixel of its component in scanline order.
  LabelMap out(H, W, -1);
  std::vector<std::int32_t> id(N, -1);
  std::int32_t next = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const auto r = detail::uf_find(parent, static_cast<std::uint32_t>(n));
    if (id[r] < 0) id[r] = next++;
    out.data[n] = id[r];
  }
  return out;
}

inline SegmentSet extract_segments(const LabelMap& labels) {
  const LabelMap comp = connected_components(labels);
  SegmentSet s;
  s.height = labels.height;
  s.width = labels.width;
  std::int32_t count = 0;
  for (auto c : comp.data) count = std::max(count, c + 1);
  s.masks.assign(static_cast<std::size_t>(count), Mask(labels.height, labels.width));
  s.source_labels.assign(static_cast<std::size_t>(count), 0);
  for (std::size_t n = 0; n < comp.size(); ++n) {
    const auto c = static_cast<std::size_t>(comp.data[n]);
    s.masks[c].data[n] = 1;
    s.source_labels[c] = labels.data[n];
  }
  return s;
}

}  // namespace unseg
