#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "unseg/error.hpp"
#include "unseg/tensor.hpp"

namespace unseg {

/// Which adjacent pairs the continuity loss sums over. `full` uses every
/// horizontal and vertical neighbour pair; `paper` drops the last row's
/// horizontal pairs and the last column's vertical pairs (joint index bounds).
enum class TvBounds { full, paper };

inline const char* to_string(TvBounds b) { return b == TvBounds::full ? "full" : "paper"; }

inline TvBounds parse_tv_bounds(const std::string& s) {
  if (s == "full") return TvBounds::full;
  if (s == "paper") return TvBounds::paper;
  throw InvalidArgument("tv_bounds must be 'full' or 'paper', got '" + s + "'");
}

struct HyperParams {
  int layers = 3;          // M conv/relu/bn components
  int feature_dim = 100;   // p
  int max_clusters = 100;  // q
  double lr = 0.1;
  double momentum = 0.9;
  double mu = 5.0;  // continuity weight
  double nu = 0.5;  // scribble weight
  int max_iters = 500;
  int min_labels = 3;
  std::uint64_t seed = 0;
  double eps = kDefaultBatchNormEps;
  TvBounds tv_bounds = TvBounds::full;

  void validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("hyperparameters: " + m); };
    if (layers < 1) fail("layers must be >= 1");
    if (feature_dim < 2) fail("p (feature_dim) must be >= 2");
    if (max_clusters < 2) fail("q (max_clusters) must be >= 2");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(mu >= 0.0) || !std::isfinite(mu)) fail("mu must be >= 0");
    if (!(nu >= 0.0) || !std::isfinite(nu)) fail("nu must be >= 0");
    if (max_iters < 1) fail("iters must be >= 1");
    if (min_labels < 1 || min_labels > max_clusters) fail("min_labels must lie in [1, q]");
    if (!(eps > 0.0)) fail("eps must be > 0");
  }
};

}  // namespace unseg
