#pragma once

// Deterministic test images. Values are quantized to multiples of 1/255 so a
// generated image survives an 8-bit PNG round trip unchanged.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "unseg/labels.hpp"
#include "unseg/losses.hpp"

namespace unseg::synthetic {

inline float quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0) / 255.0);
}

inline Image constant_image(std::size_t height, std::size_t width, std::array<float, 3> rgb) {
  Image img({3, height, width});
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : img.channel(c)) v = quantize8(rgb[c]);
  return img;
}

/// Region membership of the two-region scene: 1 inside a disc of radius
/// 0.3·size centred in the image (shifted right by `shift` pixels), 0 elsewhere.
inline LabelMap two_region_truth(std::size_t size, double shift = 0.0) {
  LabelMap truth(size, size);
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  const double radius = 0.3 * static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - centre, dx = static_cast<double>(x) - centre - shift;
      truth(y, x) = dy * dy + dx * dx <= radius * radius ? 1 : 0;
    }
  return truth;
}

/// Blue-ish background with an orange disc, plus seeded uniform per-pixel
/// noise of amplitude `noise` on every channel.
inline Image two_region(std::size_t size = 64, std::uint64_t seed = 0, double noise = 0.1, double shift = 0.0) {
  static constexpr std::array<double, 3> kBackground{0.20, 0.35, 0.75};
  static constexpr std::array<double, 3> kDisc{0.90, 0.55, 0.15};
  const LabelMap truth = two_region_truth(size, shift);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  Image img({3, size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const auto& base = truth(y, x) ? kDisc : kBackground;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = quantize8(base[c] + jitter(rng));
    }
  return img;
}

/// Two short horizontal strokes for the two-region scene: label 0 in the
/// background near the top-left, label 1 through the disc centre.
inline Scribbles two_region_scribbles(std::size_t size) {
  Scribbles s{Mask(size, size), LabelMap(size, size)};
  const std::size_t e = std::max<std::size_t>(1, size / 8);
  for (std::size_t x = e; x < 3 * e; ++x) {
    s.mask.set(e, x);
    s.labels(e, x) = 0;
  }
  const std::size_t c = size / 2;
  for (std::size_t x = c - e; x < c + e; ++x) {
    s.mask.set(c, x);
    s.labels(c, x) = 1;
  }
  return s;
}

}  // namespace unseg::synthetic
