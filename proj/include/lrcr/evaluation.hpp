#pragma once

// Metrics, classical baselines and per-step reporting.

#include <map>
#include <string>
#include <vector>

#include "lrcr/cost_volume.hpp"
#include "lrcr/image.hpp"
#include "lrcr/model.hpp"

namespace lrcr::eval {

struct StepMetrics {
  double epe = 0.0;
  std::map<double, double> bad_k;  // threshold -> percentage
  std::size_t n_pixels = 0;
};

struct MetricsReport {
  std::vector<StepMetrics> per_step;  // one entry for baselines, T for LRCR
};

double end_point_error(const DisparityMap& pred, const DisparityMap& gt);
double bad_pixel_rate(const DisparityMap& pred, const DisparityMap& gt, double k);

// Per-pixel argmin over disparity, ties broken toward the smallest d.
DisparityMap wta_disparity(const cost::CostVolume& costs);

inline const std::vector<double> kBadThresholds = {1.0, 2.0, 3.0, 5.0};

struct EvalSample {
  cost::CostVolume cost_left, cost_right;
  DisparityMap gt_left, gt_right;
};

// Left-view metrics per recurrent step, pixel-weighted across samples.
MetricsReport evaluate_lrcr(model::LrcrWeights& weights,
                            const std::vector<EvalSample>& dataset, int steps);

enum class BaselineKind { Wta, WtaRefined };  // refined: +subpixel+median+LR chain

MetricsReport evaluate_baseline(const std::vector<EvalSample>& dataset,
                                BaselineKind kind, double lr_threshold = 1.0);

// Classical chain on one sample's volumes: WTA -> subpixel -> median ->
// LR-check -> interpolate -> median.
DisparityMap baseline_refined(const cost::CostVolume& cost_left,
                              const cost::CostVolume& cost_right,
                              double lr_threshold = 1.0);

// CSV: step,epe,bad1,bad2,bad3,bad5
void write_report_csv(const MetricsReport& report, const std::string& path);

// |pred - gt| and attention heat images, linearly scaled to [0,255].
GrayImage error_heat_image(const DisparityMap& pred, const DisparityMap& gt);
GrayImage attention_heat_image(const ad::Tensor& attention);
GrayImage disparity_image(const DisparityMap& d, int d_max);

}  // namespace lrcr::eval
