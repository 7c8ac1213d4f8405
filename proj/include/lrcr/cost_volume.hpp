#pragma once

// Matching cost volumes for both views: census-based (fixed, default) or a
// small learnable siamese dot-product matcher trained with a hinge loss.

#include <cstdint>
#include <string>
#include <vector>

#include "lrcr/data_io.hpp"
#include "lrcr/image.hpp"
#include "lrcr/tensor.hpp"

namespace lrcr::cost {

enum class View { Left, Right };

// Per-pixel matching cost over candidate disparities 0..d_max-1.
// Lower is a better match.
struct CostVolume {
  View view = View::Left;
  ad::Tensor values;  // [D,H,W]
  int d_max = 0;

  int height() const { return values.shape()[1]; }
  int width() const { return values.shape()[2]; }
};

// Shared 3-layer conv feature extractor (1 -> 8 -> 8 -> 8, 3x3 kernels,
// padding 1, tanh after each layer). Both views use the same parameters.
struct SiameseWeights {
  ad::Tensor w1, b1, w2, b2, w3, b3;

  static SiameseWeights init(std::uint64_t seed);
  std::vector<ad::Tensor> params();
};

// One bit per non-center neighbor, row-major, 1 iff neighbor < center.
// Window is odd, >= 3, and at most 7 (descriptor capped at 63 bits);
// image borders use edge replication.
std::vector<std::uint64_t> census_transform(const GrayImage& img, int window);

std::pair<CostVolume, CostVolume> census_cost_volume(const GrayImage& left,
                                                     const GrayImage& right,
                                                     int d_max, int window);

// Per-pixel cost = 1 - cosine(featL, featR shifted by d), in [0,2];
// out-of-bounds candidates carry cost 2. Differentiable w.r.t. weights.
std::pair<CostVolume, CostVolume> siamese_cost_volume(const GrayImage& left,
                                                      const GrayImage& right,
                                                      SiameseWeights& weights,
                                                      int d_max);

// Feature map [8,H,W] of one image under the shared extractor.
ad::Tensor siamese_features(const GrayImage& img, SiameseWeights& weights);

struct MatcherTrainConfig {
  double margin = 0.2;
  int epochs = 10;
  double lr = 0.05;
  int d_max = 16;
  std::uint64_t seed = 0;
};

// Hinge training of the siamese matcher: per labeled pixel,
// max(0, margin + s_neg - s_pos) with the negative disparity drawn
// uniformly among candidates at least 2 away from the truth.
// Returns the per-epoch mean training losses.
std::vector<double> train_matcher(const std::vector<io::StereoSample>& dataset,
                                  SiameseWeights& weights,
                                  const MatcherTrainConfig& cfg);

// Affine min-max rescale to [0,1]; a constant volume maps to all 0.5.
CostVolume normalize_cost_volume(const CostVolume& v);

// Flat binary export: 3 little-endian u32 (D,H,W) then D*H*W little-endian
// f32 values in (d,y,x) order.
void write_cost_volume(const CostVolume& v, const std::string& path);

}  // namespace lrcr::cost
