#pragma once

// Classical comparison methods: k-means on windowed RGB features and
// Felzenszwalb–Huttenlocher graph-based segmentation (GS).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "unseg/labels.hpp"

namespace unseg {

// ---------------------------------------------------------------------------
// Windowed features
// ---------------------------------------------------------------------------

struct PixelFeatures {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::size_t window = 0;
  std::vector<double> data;  // rows × dim, row-major

  const double* row(std::size_t i) const { return data.data() + i * dim; }
  double* row(std::size_t i) { return data.data() + i * dim; }
};

/// Concatenated RGB of the w×w neighbourhood of every pixel (row-major
/// window order, clamp-to-edge outside the image).
inline PixelFeatures window_features(const Image& image, std::size_t w) {
  require_image_shape(image, "window_features");
  if (w == 0 || w % 2 == 0) throw InvalidArgument("window_features: window must be odd and >= 1");
  const std::size_t H = image.dim(1), W = image.dim(2);
  const auto r = static_cast<std::ptrdiff_t>(w / 2);
  PixelFeatures f{H * W, 3 * w * w, w, std::vector<double>(H * W * 3 * w * w)};
  auto clamp = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double* out = f.row(y * W + x);
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const std::size_t sy = clamp(static_cast<std::ptrdiff_t>(y) + dy, H);
          const std::size_t sx = clamp(static_cast<std::ptrdiff_t>(x) + dx, W);
          for (std::size_t c = 0; c < 3; ++c) *out++ = image.at(c, sy, sx);
        }
    }
  return f;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<std::int32_t> labels;
  std::vector<double> centroids;  // k × dim
  std::vector<double> objective_history;  // after each assignment step
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

/// Nearest centroid per point, ties to the lowest index. Returns the objective.
inline double assign_nearest(const PixelFeatures& f, const std::vector<double>& centroids, std::size_t k,
                             std::vector<std::int32_t>& labels) {
  double obj = 0.0;
  for (std::size_t i = 0; i < f.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = sqdist(f.row(i), centroids.data() + j * f.dim, f.dim);
      if (d < best) {
        best = d;
        arg = static_cast<std::int32_t>(j);
      }
    }
    labels[i] = arg;
    obj += best;
  }
  return obj;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeding. Stops at an assignment fixpoint
/// (then every point sits with its nearest centroid and every centroid is
/// the mean of its points) or after max_iter updates. An emptied cluster is
/// re-seeded at the point farthest from its current centroid.
inline KMeansResult kmeans(const PixelFeatures& f, std::size_t k, std::uint64_t seed = 0, int max_iter = 100) {
  if (k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (k > f.rows)
    throw InvalidArgument("kmeans: k=" + std::to_string(k) + " exceeds the number of points " + std::to_string(f.rows));
  if (max_iter < 1) throw InvalidArgument("kmeans: max_iter must be >= 1");
  const std::size_t N = f.rows, D = f.dim;

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KMeansResult res;
  res.centroids.assign(k * D, 0.0);
  std::vector<double> d2(N, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(N)) % N;
  for (std::size_t j = 0; j < k; ++j) {
    std::copy_n(f.row(pick), D, res.centroids.begin() + static_cast<std::ptrdiff_t>(j * D));
    if (j + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      d2[i] = std::min(d2[i], detail::sqdist(f.row(i), f.row(pick), D));
      total += d2[i];
    }
    if (total <= 0.0) {
      // Every point coincides with a chosen centre; fall back to index order.
      pick = (pick + 1) % N;
      continue;
    }
    double target = unit(rng) * total, acc = 0.0;
    pick = N - 1;
    for (std::size_t i = 0; i < N; ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }

  res.labels.assign(N, 0);
  res.objective_history.push_back(detail::assign_nearest(f, res.centroids, k, res.labels));
  std::vector<std::int32_t> next(N);
  std::vector<std::size_t> counts(k);
  for (int it = 1; it <= max_iter; ++it) {
    res.iterations = it;
    std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < N; ++i) {
      const auto c = static_cast<std::size_t>(res.labels[i]);
      ++counts[c];
      double* dst = res.centroids.data() + c * D;
      for (std::size_t d = 0; d < D; ++d) dst[d] += f.row(i)[d];
    }
    bool reseeded = false;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t d = 0; d < D; ++d) res.centroids[j * D + d] /= static_cast<double>(counts[j]);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = detail::sqdist(f.row(i), res.centroids.data() + static_cast<std::size_t>(res.labels[i]) * D, D);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      std::copy_n(f.row(far), D, res.centroids.begin() + static_cast<std::ptrdiff_t>(j * D));
      res.labels[far] = static_cast<std::int32_t>(j);
      reseeded = true;
    }
    res.objective_history.push_back(detail::assign_nearest(f, res.centroids, k, next));
    if (!reseeded && next == res.labels) {
      res.converged = true;
      break;
    }
    res.labels.swap(next);
  }
  return res;
}

/// Sum of squared distances to the assigned centroids.
inline double kmeans_objective(const PixelFeatures& f, const KMeansResult& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.rows; ++i)
    s += detail::sqdist(f.row(i), r.centroids.data() + static_cast<std::size_t>(r.labels[i]) * f.dim, f.dim);
  return s;
}

// ---------------------------------------------------------------------------
// Graph-based segmentation
// ---------------------------------------------------------------------------

struct GsConfig {
  double tau = 500.0;
  double sigma = 1.0;
  std::size_t min_size = 0;

  void validate() const {
    if (!(tau > 0.0)) throw InvalidArgument("gs: tau must be > 0");
    if (!(sigma >= 0.0)) throw InvalidArgument("gs: sigma must be >= 0");
  }
};

/// Normalized discrete Gaussian, truncated at radius ceil(4σ).
inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * t * t / (sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable per-channel Gaussian blur with replicate borders. σ = 0 is the
/// identity.
inline DenseArray<double> gaussian_smooth(const DenseArray<double>& img, double sigma) {
  if (sigma <= 0.0) return img;
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  auto clamp = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  DenseArray<double> tmp(img.shape()), out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t t = -r; t <= r; ++t)
          s += k[static_cast<std::size_t>(t + r)] * img.at(c, y, clamp(static_cast<std::ptrdiff_t>(x) + t, W));
        tmp.at(c, y, x) = s;
      }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t t = -r; t <= r; ++t)
          s += k[static_cast<std::size_t>(t + r)] * tmp.at(c, clamp(static_cast<std::ptrdiff_t>(y) + t, H), x);
        out.at(c, y, x) = s;
      }
  return out;
}

namespace detail {

struct GraphEdge {
  std::uint32_t a;
  std::uint32_t b;
  double w;
};

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0u); }

  std::uint32_t find(std::uint32_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }
  /// Links two roots; returns the surviving root.
  std::uint32_t join(std::uint32_t a, std::uint32_t b) {
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }
  std::size_t size(std::uint32_t root) const { return size_[root]; }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace detail

/// GS: smooth, build the 8-connected grid graph weighted by RGB distance,
/// Kruskal-merge while w ≤ min(Int(C1) + τ/|C1|, Int(C2) + τ/|C2|), then
/// optionally absorb components smaller than min_size. Labels are dense in
/// scanline order of first appearance.
inline LabelMap felzenszwalb(const Image& image, const GsConfig& cfg = {}) {
  require_image_shape(image, "felzenszwalb");
  cfg.validate();
  const std::size_t H = image.dim(1), W = image.dim(2), N = H * W;
  const DenseArray<double> sm = gaussian_smooth(image.cast<double>(), cfg.sigma);

  auto dist = [&](std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = sm.at(c, y0, x0) - sm.at(c, y1, x1);
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<detail::GraphEdge> edges;
  edges.reserve(N * 4);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto n = static_cast<std::uint32_t>(y * W + x);
      auto add = [&](std::size_t y1, std::size_t x1) {
        edges.push_back({n, static_cast<std::uint32_t>(y1 * W + x1), dist(y, x, y1, x1)});
      };
      if (x + 1 < W) add(y, x + 1);
      if (y + 1 < H) add(y + 1, x);
      if (x + 1 < W && y + 1 < H) add(y + 1, x + 1);
      if (x > 0 && y + 1 < H) add(y + 1, x - 1);
    }
  std::stable_sort(edges.begin(), edges.end(), [](const auto& l, const auto& r) { return l.w < r.w; });

  detail::DisjointSets sets(N);
  std::vector<double> threshold(N, cfg.tau);
  for (const auto& e : edges) {
    const auto a = sets.find(e.a), b = sets.find(e.b);
    if (a == b) continue;
    if (e.w <= threshold[a] && e.w <= threshold[b]) {
      const auto root = sets.join(a, b);
      threshold[root] = e.w + cfg.tau / static_cast<double>(sets.size(root));
    }
  }
  if (cfg.min_size > 0)
    for (const auto& e : edges) {
      const auto a = sets.find(e.a), b = sets.find(e.b);
      if (a != b && (sets.size(a) < cfg.min_size || sets.size(b) < cfg.min_size)) sets.join(a, b);
    }

  LabelMap labels(H, W);
  std::vector<std::int32_t> id(N, -1);
  std::int32_t next = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const auto r = sets.find(static_cast<std::uint32_t>(n));
    if (id[r] < 0) id[r] = next++;
    labels.data[n] = id[r];
  }
  return labels;
}

}  // namespace unseg
