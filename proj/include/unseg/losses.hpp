#pragma once

// Loss terms on the normalized response map and their gradients:
//   sim: cross entropy between softmax(r'_n) and the argmax pseudo-target c_n
//   con: anisotropic L1 total variation of r'
//   scr: partial cross entropy on scribbled pixels
// All reductions are means: over pixels for sim/scr, over scalar difference
// terms for con.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unseg/hyperparams.hpp"
#include "unseg/labels.hpp"
#include "unseg/segnet.hpp"

namespace unseg {

struct Scribbles {
  Mask mask;        // u_n
  LabelMap labels;  // s_n, meaningful where mask is set

  std::size_t scribbled_count() const { return mask.count(); }
};

template <typename T>
struct LossValue {
  double value = 0.0;
  DenseArray<T> grad;  // q×H×W
};

template <typename T>
struct LossBreakdown {
  double sim = 0.0;
  double con = 0.0;
  double scr = 0.0;
  double total = 0.0;
  bool has_scribbles = false;
  DenseArray<T> grad_response;
};

namespace detail {

/// Mean over selected pixels of −log softmax(r'_n)[target_n]. `selected`
/// null means every pixel.
template <typename T>
LossValue<T> partial_cross_entropy(const DenseArray<T>& r, const std::vector<std::int32_t>& target,
                                   const std::vector<std::uint8_t>* selected) {
  const std::size_t Q = r.dim(0), N = r.dim(1) * r.dim(2);
  LossValue<T> out{0.0, DenseArray<T>(r.shape())};
  std::size_t count = 0;
  for (std::size_t n = 0; n < N; ++n)
    if (!selected || (*selected)[n]) ++count;
  if (count == 0) return out;

  // rest = Σ exp(r − max) over all channels but the (first) maximal one, so
  // log-sum-exp = max + log1p(rest) keeps full precision for confident pixels.
  std::vector<double> maxv(N, -INFINITY), rest(N, 0.0);
  std::vector<std::size_t> argmax(N, 0);
  for (std::size_t i = 0; i < Q; ++i) {
    const auto ch = r.channel(i);
    for (std::size_t n = 0; n < N; ++n)
      if (ch[n] > maxv[n]) {
        maxv[n] = ch[n];
        argmax[n] = i;
      }
  }
  for (std::size_t i = 0; i < Q; ++i) {
    const auto ch = r.channel(i);
    for (std::size_t n = 0; n < N; ++n)
      if (i != argmax[n]) rest[n] += std::exp(ch[n] - maxv[n]);
  }
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (selected && !(*selected)[n]) continue;
    total += (maxv[n] - r.channel(static_cast<std::size_t>(target[n]))[n]) + std::log1p(rest[n]);
  }
  for (std::size_t i = 0; i < Q; ++i) {
    const auto ch = r.channel(i);
    auto g = out.grad.channel(i);
    for (std::size_t n = 0; n < N; ++n) {
      if (selected && !(*selected)[n]) continue;
      const double softmax = std::exp(ch[n] - maxv[n]) / (1.0 + rest[n]);
      const double onehot = static_cast<std::size_t>(target[n]) == i ? 1.0 : 0.0;
      g[n] = static_cast<T>((softmax - onehot) * inv);
    }
  }
  out.value = total * inv;
  return out;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Feature-similarity loss. Labels are constants (no gradient through argmax).
template <typename T>
LossValue<T> sim_loss(const ResponseMap<T>& response, const LabelMap& labels) {
  const std::size_t Q = response.clusters();
  if (labels.height != response.height() || labels.width != response.width())
    throw InvalidArgument("sim_loss: label map is " + std::to_string(labels.height) + "x" +
                          std::to_string(labels.width) + ", response is " + shape_str(response.values.shape()));
  for (auto c : labels.data)
    if (c < 0 || static_cast<std::size_t>(c) >= Q)
      throw InvalidArgument("sim_loss: label " + std::to_string(c) + " outside [0, q)");
  return detail::partial_cross_entropy(response.values, labels.data, nullptr);
}

/// Spatial-continuity loss: mean absolute difference over neighbour pairs,
/// gradient sign(·) with sign(0) = 0.
template <typename T>
LossValue<T> con_loss(const ResponseMap<T>& response, TvBounds bounds = TvBounds::full) {
  const std::size_t Q = response.clusters(), H = response.height(), W = response.width();
  LossValue<T> out{0.0, DenseArray<T>(response.values.shape())};
  // Horizontal pairs (y, x)-(y, x+1) run over rows [0, hrows); vertical pairs
  // (y, x)-(y+1, x) over columns [0, vcols).
  const std::size_t hrows = bounds == TvBounds::full ? H : (H > 0 ? H - 1 : 0);
  const std::size_t vcols = bounds == TvBounds::full ? W : (W > 0 ? W - 1 : 0);
  const std::size_t terms = Q * (hrows * (W - 1) + (H - 1) * vcols);
  if (terms == 0) return out;

  const double inv = 1.0 / static_cast<double>(terms);
  double sum = 0.0;
  for (std::size_t i = 0; i < Q; ++i) {
    const auto r = response.values.channel(i);
    auto g = out.grad.channel(i);
    for (std::size_t y = 0; y < hrows; ++y)
      for (std::size_t x = 0; x + 1 < W; ++x) {
        const std::size_t a = y * W + x, b = a + 1;
        const double d = static_cast<double>(r[b]) - r[a];
        sum += std::abs(d);
        const double s = detail::sign(d) * inv;
        g[b] = static_cast<T>(g[b] + s);
        g[a] = static_cast<T>(g[a] - s);
      }
    for (std::size_t y = 0; y + 1 < H; ++y)
      for (std::size_t x = 0; x < vcols; ++x) {
        const std::size_t a = y * W + x, b = a + W;
        const double d = static_cast<double>(r[b]) - r[a];
        sum += std::abs(d);
        const double s = detail::sign(d) * inv;
        g[b] = static_cast<T>(g[b] + s);
        g[a] = static_cast<T>(g[a] - s);
      }
  }
  out.value = sum * inv;
  return out;
}

/// Scribble loss: mean over scribbled pixels; zero when nothing is scribbled.
template <typename T>
LossValue<T> scr_loss(const ResponseMap<T>& response, const Scribbles& scr) {
  const std::size_t Q = response.clusters(), H = response.height(), W = response.width();
  if (scr.mask.height != H || scr.mask.width != W || scr.labels.height != H || scr.labels.width != W)
    throw InvalidArgument("scr_loss: scribble shape does not match response " + shape_str(response.values.shape()));
  std::vector<std::int32_t> targets(H * W, 0);
  for (std::size_t n = 0; n < H * W; ++n) {
    if (!scr.mask.data[n]) continue;
    const auto s = scr.labels.data[n];
    if (s < 0 || static_cast<std::size_t>(s) >= Q)
      throw InvalidArgument("scr_loss: scribble label " + std::to_string(s) + " at pixel (" +
                            std::to_string(n / W) + ", " + std::to_string(n % W) + ") is outside [0, " +
                            std::to_string(Q) + ")");
    targets[n] = s;
  }
  return detail::partial_cross_entropy(response.values, targets, &scr.mask.data);
}

/// L = sim + mu·con (+ nu·scr when scribbles are given).
template <typename T>
LossBreakdown<T> total_loss(const ResponseMap<T>& response, const LabelMap& labels,
                            const std::optional<Scribbles>& scr, double mu, double nu,
                            TvBounds bounds = TvBounds::full) {
  auto sim = sim_loss(response, labels);
  auto con = con_loss(response, bounds);
  LossBreakdown<T> out;
  out.sim = sim.value;
  out.con = con.value;
  out.grad_response = std::move(sim.grad);
  auto& g = out.grad_response;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(g[i] + mu * con.grad[i]);
  out.total = out.sim + mu * out.con;
  if (scr) {
    auto s = scr_loss(response, *scr);
    out.scr = s.value;
    out.has_scribbles = true;
    out.total += nu * out.scr;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(g[i] + nu * s.grad[i]);
  }
  return out;
}

}  // namespace unseg
