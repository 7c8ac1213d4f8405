#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace lrcr {

// Single-channel image, intensities in [0,1], row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0)
      : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }

  void clamp01() {
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
  }
};

// Per-pixel real disparity with validity mask. Invalid pixels carry 0.
struct DisparityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  DisparityMap() = default;
  DisparityMap(int h, int w, double fill = 0.0, bool all_valid = true)
      : height(h),
        width(w),
        values(static_cast<std::size_t>(h) * w, fill),
        valid(static_cast<std::size_t>(h) * w, all_valid ? 1 : 0) {}

  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
  double& at(int y, int x) { return values[idx(y, x)]; }
  double at(int y, int x) const { return values[idx(y, x)]; }
  bool is_valid(int y, int x) const { return valid[idx(y, x)] != 0; }
  void invalidate(int y, int x) {
    valid[idx(y, x)] = 0;
    values[idx(y, x)] = 0.0;
  }
  std::size_t count_valid() const {
    std::size_t n = 0;
    for (auto b : valid) n += b != 0;
    return n;
  }
};

}  // namespace lrcr
