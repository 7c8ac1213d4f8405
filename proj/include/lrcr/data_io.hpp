#pragma once

// Synthetic stereo-pair generation with analytic ground truth for both
// views, plus PFM/PGM file IO and dataset directory handling.

#include <cstdint>
#include <string>
#include <vector>

#include "lrcr/image.hpp"

namespace lrcr::io {

struct StereoSample {
  GrayImage left, right;
  // Ground truth with occluded/unknown pixels marked invalid.
  DisparityMap gt_left, gt_right;
  // All-valid surface disparities (occlusions included); not serialized,
  // regenerate from the seed when needed.
  DisparityMap gt_left_full, gt_right_full;
  std::uint64_t seed = 0;
};

struct SceneParams {
  int height = 64;
  int width = 64;
  int d_max = 16;
  int d_bg = 3;            // background plane disparity
  int rect_count = 2;      // K fronto-parallel rectangles
  int rect_d_min = 6;      // per-rectangle disparity range (inclusive)
  int rect_d_max = 12;
  double noise_amplitude = 0.35;

  void validate() const;
};

// Deterministic given the seed. Background texture at d_bg, K textured
// rectangles at larger disparities layered nearest-last; the right image is
// rendered analytically with nearest-surface occlusion resolution. Pixels
// occluded in the opposite view are invalid in that view's ground truth.
StereoSample generate_sample(const SceneParams& params, std::uint64_t seed);

// Grayscale PFM ("Pf", scale -1.0 => little-endian, rows bottom-to-top,
// 32-bit floats). Invalid pixels are stored as +Inf and restored as invalid.
void write_pfm(const DisparityMap& d, const std::string& path);
DisparityMap read_pfm(const std::string& path);

// Binary PGM (P5), maxval 255, linear [0,1] <-> [0,255].
void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);

// Deterministic disjoint exhaustive split of ids 0..n_total-1.
std::pair<std::vector<int>, std::vector<int>> make_split(int n_total, int n_val,
                                                         std::uint64_t seed);

// Dataset layout: <dir>/sample_%04d/{left.pgm,right.pgm,gt_left.pfm,gt_right.pfm}
void save_sample(const StereoSample& s, const std::string& dir, int index);
StereoSample load_sample(const std::string& dir, int index);
int count_samples(const std::string& dir);

}  // namespace lrcr::io
