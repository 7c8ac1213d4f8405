#pragma once

// View-coordinate conversion of disparity maps, the offline left-right
// consistency baseline, and classical post-processing.

#include "lrcr/image.hpp"
#include "lrcr/tensor.hpp"

namespace lrcr::geom {

enum class WarpDirection { RightToLeft, LeftToRight };

// Forward-warped disparity map in the target view. Pixels that received no
// source are holes (valid == 0). src_index records, per target pixel, the
// flat index of the source pixel that won the deposit (-1 for holes), so a
// caller can re-route differentiable values along the same paths.
struct WarpResult {
  DisparityMap map;
  std::vector<std::ptrdiff_t> src_index;
};

// Forward warp: every valid source pixel deposits its disparity at the
// disparity-shifted target column (nearest integer). Collisions keep the
// larger disparity (nearest surface); out-of-bounds deposits are dropped.
WarpResult warp_disparity(const DisparityMap& src, WarpDirection direction);

// Mismatch mask: pixel flagged iff the induced map has a hole there or the
// absolute difference exceeds the threshold.
std::vector<std::uint8_t> lr_consistency_check(const DisparityMap& d_left,
                                               const WarpResult& induced,
                                               double threshold);

// Occlusion-style fill: each flagged pixel takes the minimum of the nearest
// unflagged disparities along its row; rows with no unflagged pixel fall
// back to the global unflagged median.
DisparityMap interpolate_mismatched(const DisparityMap& d,
                                    const std::vector<std::uint8_t>& mask);

// Parabola fit around the WTA minimum; offset clamped to +-0.5, boundary
// disparities and degenerate neighborhoods unchanged.
DisparityMap subpixel_enhance(const ad::Tensor& costs, const DisparityMap& wta);

// k x k median over valid neighbors, edge replication; validity preserved.
DisparityMap median_filter(const DisparityMap& d, int k);

}  // namespace lrcr::geom
