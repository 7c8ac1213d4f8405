#include "lrcr/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace lrcr::geom {

WarpResult warp_disparity(const DisparityMap& src, WarpDirection direction) {
  WarpResult out;
  out.map = DisparityMap(src.height, src.width, 0.0, /*all_valid=*/false);
  out.src_index.assign(src.values.size(), -1);
  const int sign = direction == WarpDirection::RightToLeft ? 1 : -1;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      if (!src.is_valid(y, x)) continue;
      double d = src.at(y, x);
      int tx = x + sign * static_cast<int>(std::lround(d));
      if (tx < 0 || tx >= src.width) continue;
      if (!out.map.is_valid(y, tx) || d > out.map.at(y, tx)) {
        out.map.at(y, tx) = d;
        out.map.valid[out.map.idx(y, tx)] = 1;
        out.src_index[out.map.idx(y, tx)] = static_cast<std::ptrdiff_t>(src.idx(y, x));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> lr_consistency_check(const DisparityMap& d_left,
                                               const WarpResult& induced,
                                               double threshold) {
  if (d_left.height != induced.map.height || d_left.width != induced.map.width)
    throw ad::DimensionError("lr_consistency_check: shape mismatch");
  if (threshold <= 0.0) throw ad::ContractError("lr_consistency_check: threshold must be > 0");
  std::vector<std::uint8_t> mask(d_left.values.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!induced.map.valid[i] ||
        std::fabs(d_left.values[i] - induced.map.values[i]) > threshold)
      mask[i] = 1;
  }
  return mask;
}

DisparityMap interpolate_mismatched(const DisparityMap& d,
                                    const std::vector<std::uint8_t>& mask) {
  if (mask.size() != d.values.size())
    throw ad::DimensionError("interpolate_mismatched: mask size mismatch");
  bool any_unflagged = false;
  std::vector<double> unflagged;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) {
      any_unflagged = true;
      unflagged.push_back(d.values[i]);
    }
  if (!any_unflagged)
    throw ad::ContractError("interpolate_mismatched: every pixel is flagged");
  std::nth_element(unflagged.begin(), unflagged.begin() + unflagged.size() / 2,
                   unflagged.end());
  const double global_median = unflagged[unflagged.size() / 2];

  DisparityMap out = d;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!mask[d.idx(y, x)]) continue;
      double left = std::numeric_limits<double>::quiet_NaN();
      double right = std::numeric_limits<double>::quiet_NaN();
      for (int xx = x - 1; xx >= 0; --xx)
        if (!mask[d.idx(y, xx)]) {
          left = d.at(y, xx);
          break;
        }
      for (int xx = x + 1; xx < d.width; ++xx)
        if (!mask[d.idx(y, xx)]) {
          right = d.at(y, xx);
          break;
        }
      double fill;
      if (std::isnan(left) && std::isnan(right))
        fill = global_median;
      else if (std::isnan(left))
        fill = right;
      else if (std::isnan(right))
        fill = left;
      else
        fill = std::min(left, right);
      out.at(y, x) = fill;
      out.valid[out.idx(y, x)] = 1;
    }
  }
  return out;
}

DisparityMap subpixel_enhance(const ad::Tensor& costs, const DisparityMap& wta) {
  if (costs.rank() != 3) throw ad::DimensionError("subpixel_enhance: costs must be [D,H,W]");
  const int dmax = costs.shape()[0], h = costs.shape()[1], w = costs.shape()[2];
  if (h != wta.height || w != wta.width)
    throw ad::DimensionError("subpixel_enhance: shape mismatch");
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  DisparityMap out = wta;
  for (std::size_t p = 0; p < npix; ++p) {
    if (!wta.valid[p]) continue;
    int d = static_cast<int>(std::lround(wta.values[p]));
    if (d < 1 || d > dmax - 2) continue;
    double cm = costs.data()[(d - 1) * npix + p];
    double c0 = costs.data()[d * npix + p];
    double cp = costs.data()[(d + 1) * npix + p];
    double denom = 2.0 * (cm + cp - 2.0 * c0);
    if (denom > 1e-9) {
      double offset = std::clamp((cm - cp) / denom, -0.5, 0.5);
      out.values[p] = d + offset;
    }
  }
  return out;
}

DisparityMap median_filter(const DisparityMap& d, int k) {
  if (k < 3 || k % 2 == 0)
    throw ad::ConfigError("median_filter: window must be odd and >= 3");
  const int r = k / 2;
  DisparityMap out = d;
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x)) continue;
      window.clear();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int yy = std::clamp(y + dy, 0, d.height - 1);
          int xx = std::clamp(x + dx, 0, d.width - 1);
          if (d.is_valid(yy, xx)) window.push_back(d.at(yy, xx));
        }
      std::nth_element(window.begin(), window.begin() + window.size() / 2,
                       window.end());
      out.at(y, x) = window[window.size() / 2];
    }
  }
  return out;
}

}  // namespace lrcr::geom
