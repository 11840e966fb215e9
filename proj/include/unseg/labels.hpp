#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "unseg/error.hpp"
#include "unseg/tensor.hpp"

namespace unseg {

/// RGB image, 3×H×W, channel values in [0, 1].
using Image = DenseArray<float>;

/// Per-pixel integer IDs in scanline order.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::int32_t& operator()(std::size_t y, std::size_t x) noexcept { return data[y * width + x]; }
  std::int32_t operator()(std::size_t y, std::size_t x) const noexcept { return data[y * width + x]; }

  std::size_t unique_count() const {
    std::vector<std::int32_t> v = data;
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Binary H×W pixel mask.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool fill = false) : height(h), width(w), data(h * w, fill ? 1 : 0) {}

  std::size_t size() const noexcept { return data.size(); }
  bool operator()(std::size_t y, std::size_t x) const noexcept { return data[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v = true) noexcept { data[y * width + x] = v ? 1 : 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline std::size_t image_height(const Image& img) { return img.dim(1); }
inline std::size_t image_width(const Image& img) { return img.dim(2); }

template <typename T>
void require_image_shape(const DenseArray<T>& img, const char* what = "image") {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw InvalidArgument(std::string(what) + ": expected a 3×H×W RGB image, got " + shape_str(img.shape()));
  if (img.dim(1) < 1 || img.dim(2) < 1) throw InvalidArgument(std::string(what) + ": image is empty");
}

}  // namespace unseg
