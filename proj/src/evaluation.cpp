#include "lrcr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lrcr/geometry.hpp"

namespace lrcr::eval {

static void check_labeled(const DisparityMap& pred, const DisparityMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ad::DimensionError("metrics: shape mismatch");
  if (gt.count_valid() == 0)
    throw ad::ContractError("metrics: ground truth has no labeled pixels");
}

double end_point_error(const DisparityMap& pred, const DisparityMap& gt) {
  check_labeled(pred, gt);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid[i]) continue;
    sum += std::fabs(pred.values[i] - gt.values[i]);
    ++n;
  }
  return sum / static_cast<double>(n);
}

double bad_pixel_rate(const DisparityMap& pred, const DisparityMap& gt, double k) {
  check_labeled(pred, gt);
  if (k <= 0.0) throw ad::ContractError("bad_pixel_rate: k must be > 0");
  std::size_t bad = 0, n = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid[i]) continue;
    if (std::fabs(pred.values[i] - gt.values[i]) > k) ++bad;
    ++n;
  }
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

DisparityMap wta_disparity(const cost::CostVolume& costs) {
  const int d_max = costs.values.shape()[0];
  const int h = costs.height(), w = costs.width();
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  DisparityMap out(h, w);
  const double* v = costs.values.data().data();
  for (std::size_t p = 0; p < npix; ++p) {
    int best = 0;
    double best_cost = v[p];
    for (int d = 1; d < d_max; ++d)
      if (v[d * npix + p] < best_cost) {
        best_cost = v[d * npix + p];
        best = d;
      }
    out.values[p] = best;
  }
  return out;
}

namespace {

struct Accumulator {
  double abs_sum = 0.0;
  std::map<double, std::size_t> bad;
  std::size_t n = 0;

  Accumulator() {
    for (double k : kBadThresholds) bad[k] = 0;
  }
  void add(const DisparityMap& pred, const DisparityMap& gt) {
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
      if (!gt.valid[i]) continue;
      double e = std::fabs(pred.values[i] - gt.values[i]);
      abs_sum += e;
      for (double k : kBadThresholds)
        if (e > k) ++bad[k];
      ++n;
    }
  }
  StepMetrics finish() const {
    if (n == 0) throw ad::ContractError("metrics: no labeled pixels in dataset");
    StepMetrics m;
    m.epe = abs_sum / static_cast<double>(n);
    for (auto& [k, c] : bad)
      m.bad_k[k] = 100.0 * static_cast<double>(c) / static_cast<double>(n);
    m.n_pixels = n;
    return m;
  }
};

}  // namespace

MetricsReport evaluate_lrcr(model::LrcrWeights& weights,
                            const std::vector<EvalSample>& dataset, int steps) {
  if (dataset.empty()) throw ad::ContractError("evaluate_lrcr: empty dataset");
  std::vector<Accumulator> acc(steps);
  for (const auto& s : dataset) {
    auto outs = model::lrcr_unroll(weights, s.cost_left, s.cost_right, steps);
    for (int t = 0; t < steps; ++t)
      acc[t].add(model::to_disparity_map(outs[t].disp_left), s.gt_left);
  }
  MetricsReport r;
  for (auto& a : acc) r.per_step.push_back(a.finish());
  return r;
}

DisparityMap baseline_refined(const cost::CostVolume& cost_left,
                              const cost::CostVolume& cost_right,
                              double lr_threshold) {
  DisparityMap wl = wta_disparity(cost_left);
  DisparityMap wr = wta_disparity(cost_right);
  wl = geom::subpixel_enhance(cost_left.values, wl);
  wr = geom::subpixel_enhance(cost_right.values, wr);
  wl = geom::median_filter(wl, 3);
  wr = geom::median_filter(wr, 3);
  auto induced = geom::warp_disparity(wr, geom::WarpDirection::RightToLeft);
  auto mask = geom::lr_consistency_check(wl, induced, lr_threshold);
  DisparityMap filled = geom::interpolate_mismatched(wl, mask);
  return geom::median_filter(filled, 3);
}

MetricsReport evaluate_baseline(const std::vector<EvalSample>& dataset,
                                BaselineKind kind, double lr_threshold) {
  if (dataset.empty()) throw ad::ContractError("evaluate_baseline: empty dataset");
  Accumulator acc;
  for (const auto& s : dataset) {
    DisparityMap pred = kind == BaselineKind::Wta
                            ? wta_disparity(s.cost_left)
                            : baseline_refined(s.cost_left, s.cost_right, lr_threshold);
    acc.add(pred, s.gt_left);
  }
  MetricsReport r;
  r.per_step.push_back(acc.finish());
  return r;
}

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "step,epe,bad1,bad2,bad3,bad5\n";
  for (std::size_t t = 0; t < report.per_step.size(); ++t) {
    const auto& m = report.per_step[t];
    f << (t + 1) << "," << m.epe;
    for (double k : kBadThresholds) f << "," << m.bad_k.at(k);
    f << "\n";
  }
}

GrayImage error_heat_image(const DisparityMap& pred, const DisparityMap& gt) {
  check_labeled(pred, gt);
  GrayImage img(pred.height, pred.width);
  double mx = 1e-12;
  std::vector<double> err(pred.values.size(), 0.0);
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (!gt.valid[i]) continue;
    err[i] = std::fabs(pred.values[i] - gt.values[i]);
    mx = std::max(mx, err[i]);
  }
  for (std::size_t i = 0; i < err.size(); ++i) img.v[i] = err[i] / mx;
  return img;
}

GrayImage attention_heat_image(const ad::Tensor& attention) {
  if (attention.rank() != 2)
    throw ad::DimensionError("attention_heat_image: expected [H,W]");
  GrayImage img(attention.shape()[0], attention.shape()[1]);
  img.v = attention.data();
  img.clamp01();
  return img;
}

GrayImage disparity_image(const DisparityMap& d, int d_max) {
  GrayImage img(d.height, d.width);
  for (std::size_t i = 0; i < d.values.size(); ++i)
    img.v[i] = d.valid[i] ? d.values[i] / std::max(1, d_max - 1) : 0.0;
  img.clamp01();
  return img;
}

}  // namespace lrcr::eval
