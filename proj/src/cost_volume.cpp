#include "lrcr/cost_volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>

namespace lrcr::cost {

using ad::Tensor;

static Tensor uniform_init(ad::Shape shape, int fan_in, std::mt19937_64& rng) {
  double bound = std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
  for (double& v : t.data()) v = u(rng);
  return t;
}

SiameseWeights SiameseWeights::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SiameseWeights w;
  w.w1 = uniform_init({8, 1, 3, 3}, 1 * 9, rng);
  w.b1 = Tensor::zeros({8}, true);
  w.w2 = uniform_init({8, 8, 3, 3}, 8 * 9, rng);
  w.b2 = Tensor::zeros({8}, true);
  w.w3 = uniform_init({8, 8, 3, 3}, 8 * 9, rng);
  w.b3 = Tensor::zeros({8}, true);
  return w;
}

std::vector<Tensor> SiameseWeights::params() {
  return {w1, b1, w2, b2, w3, b3};
}

std::vector<std::uint64_t> census_transform(const GrayImage& img, int window) {
  if (window % 2 == 0 || window < 3)
    throw ad::ConfigError("census window must be odd and >= 3");
  if (window > 7) throw ad::ConfigError("census descriptor capped at 63 bits (window <= 7)");
  if (img.height < 8 || img.width < 8)
    throw ad::ConfigError("census requires images of at least 8x8");
  const int r = window / 2;
  std::vector<std::uint64_t> out(img.v.size(), 0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double center = img.at(y, x);
      std::uint64_t bits = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          int yy = std::clamp(y + dy, 0, img.height - 1);
          int xx = std::clamp(x + dx, 0, img.width - 1);
          bits = (bits << 1) | (img.at(yy, xx) < center ? 1u : 0u);
        }
      }
      out[static_cast<std::size_t>(y) * img.width + x] = bits;
    }
  }
  return out;
}

std::pair<CostVolume, CostVolume> census_cost_volume(const GrayImage& left,
                                                     const GrayImage& right,
                                                     int d_max, int window) {
  if (left.height != right.height || left.width != right.width)
    throw ad::DimensionError("census_cost_volume: image shape mismatch");
  if (d_max < 2 || d_max > left.width / 2)
    throw ad::ConfigError("census_cost_volume: need 2 <= d_max <= width/2");
  const int h = left.height, w = left.width;
  const double bits = window * window - 1;
  auto cl = census_transform(left, window);
  auto cr = census_transform(right, window);

  std::vector<double> lvol(static_cast<std::size_t>(d_max) * h * w, 1.0);
  std::vector<double> rvol(static_cast<std::size_t>(d_max) * h * w, 1.0);
  for (int d = 0; d < d_max; ++d) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::size_t p = static_cast<std::size_t>(y) * w + x;
        std::size_t o = static_cast<std::size_t>(d) * h * w + p;
        if (x - d >= 0)
          lvol[o] = std::popcount(cl[p] ^ cr[p - d]) / bits;
        if (x + d < w)
          rvol[o] = std::popcount(cr[p] ^ cl[p + d]) / bits;
      }
    }
  }
  CostVolume l{View::Left, Tensor::from({d_max, h, w}, std::move(lvol)), d_max};
  CostVolume r{View::Right, Tensor::from({d_max, h, w}, std::move(rvol)), d_max};
  return {std::move(l), std::move(r)};
}

ad::Tensor siamese_features(const GrayImage& img, SiameseWeights& w) {
  Tensor x = Tensor::from({1, img.height, img.width}, img.v);
  x = ad::tanh_op(ad::conv2d(x, w.w1, w.b1, 1));
  x = ad::tanh_op(ad::conv2d(x, w.w2, w.b2, 1));
  x = ad::tanh_op(ad::conv2d(x, w.w3, w.b3, 1));
  return x;
}

static constexpr double kCosEps = 1e-8;

// [H,W] cosine similarity between fa and fb_shifted, per pixel over channels.
static Tensor cosine_map(const Tensor& fa, const Tensor& fb_shifted,
                         const Tensor& inv_norm_a) {
  Tensor dot = ad::channel_sum(ad::hadamard(fa, fb_shifted));
  Tensor nb = ad::channel_sum(ad::hadamard(fb_shifted, fb_shifted));
  return ad::hadamard(dot, ad::hadamard(inv_norm_a, ad::rsqrt_eps(nb, kCosEps)));
}

static Tensor inv_norm(const Tensor& f) {
  return ad::rsqrt_eps(ad::channel_sum(ad::hadamard(f, f)), kCosEps);
}

std::pair<CostVolume, CostVolume> siamese_cost_volume(const GrayImage& left,
                                                      const GrayImage& right,
                                                      SiameseWeights& weights,
                                                      int d_max) {
  if (left.height != right.height || left.width != right.width)
    throw ad::DimensionError("siamese_cost_volume: image shape mismatch");
  if (d_max < 2 || d_max > left.width / 2)
    throw ad::ConfigError("siamese_cost_volume: need 2 <= d_max <= width/2");
  const int h = left.height, w = left.width;
  Tensor fl = siamese_features(left, weights);
  Tensor fr = siamese_features(right, weights);
  Tensor inl = inv_norm(fl);
  Tensor inr = inv_norm(fr);

  std::vector<Tensor> lslices, rslices;
  for (int d = 0; d < d_max; ++d) {
    // left view: compare pixel x with right-view pixel x-d
    Tensor cos_l = cosine_map(fl, ad::shift_x(fr, -d), inl);
    Tensor cos_r = cosine_map(fr, ad::shift_x(fl, +d), inr);
    Tensor mask_l = Tensor::zeros({h, w});
    Tensor mask_r = Tensor::zeros({h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (x - d >= 0) mask_l.data()[static_cast<std::size_t>(y) * w + x] = 1.0;
        if (x + d < w) mask_r.data()[static_cast<std::size_t>(y) * w + x] = 1.0;
      }
    // cost = 1 - cos in bounds, 2 out of bounds
    Tensor off_l = Tensor::from({h, w}, [&] {
      std::vector<double> v(static_cast<std::size_t>(h) * w);
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = mask_l.data()[i] == 1.0 ? 0.0 : 2.0;
      return v;
    }());
    Tensor off_r = Tensor::from({h, w}, [&] {
      std::vector<double> v(static_cast<std::size_t>(h) * w);
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = mask_r.data()[i] == 1.0 ? 0.0 : 2.0;
      return v;
    }());
    lslices.push_back(
        ad::add(ad::hadamard(ad::add_scalar(ad::scale(cos_l, -1.0), 1.0), mask_l), off_l));
    rslices.push_back(
        ad::add(ad::hadamard(ad::add_scalar(ad::scale(cos_r, -1.0), 1.0), mask_r), off_r));
  }
  CostVolume l{View::Left, ad::stack_maps(lslices), d_max};
  CostVolume r{View::Right, ad::stack_maps(rslices), d_max};
  return {std::move(l), std::move(r)};
}

std::vector<double> train_matcher(const std::vector<io::StereoSample>& dataset,
                                  SiameseWeights& weights,
                                  const MatcherTrainConfig& cfg) {
  if (dataset.empty()) throw ad::ContractError("train_matcher: empty dataset");
  if (cfg.margin <= 0.0) throw ad::ContractError("train_matcher: margin must be > 0");
  for (const auto& s : dataset)
    if (s.gt_left.count_valid() == 0)
      throw ad::ContractError("train_matcher: sample without labeled left pixels");

  std::mt19937_64 rng(cfg.seed);

  // Per-sample fixed positive/negative disparity choices (kept constant
  // across epochs so epoch losses are comparable).
  struct PixelChoices {
    std::vector<int> d_pos, d_neg;  // -1 where unusable
    double n_labeled = 0;
  };
  std::vector<PixelChoices> choices(dataset.size());
  for (std::size_t si = 0; si < dataset.size(); ++si) {
    const auto& gt = dataset[si].gt_left;
    auto& ch = choices[si];
    ch.d_pos.assign(gt.values.size(), -1);
    ch.d_neg.assign(gt.values.size(), -1);
    for (int y = 0; y < gt.height; ++y) {
      for (int x = 0; x < gt.width; ++x) {
        std::size_t i = gt.idx(y, x);
        if (!gt.valid[i]) continue;
        int dt = static_cast<int>(std::lround(gt.values[i]));
        if (dt < 0 || dt >= cfg.d_max || x - dt < 0) continue;
        std::vector<int> candidates;
        for (int d = 0; d <= std::min(cfg.d_max - 1, x); ++d)
          if (std::abs(d - dt) >= 2) candidates.push_back(d);
        if (candidates.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        ch.d_pos[i] = dt;
        ch.d_neg[i] = candidates[pick(rng)];
        ch.n_labeled += 1.0;
      }
    }
    if (ch.n_labeled == 0)
      throw ad::ContractError("train_matcher: sample with no usable labeled pixels");
  }

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t si = 0; si < dataset.size(); ++si) {
      const auto& s = dataset[si];
      const auto& ch = choices[si];
      const int h = s.left.height, w = s.left.width;
      const std::size_t npix = static_cast<std::size_t>(h) * w;

      // group pixels by requested disparity
      std::vector<std::vector<double>> pos_mask(cfg.d_max), neg_mask(cfg.d_max);
      std::vector<bool> needed(cfg.d_max, false);
      std::vector<double> labeled(npix, 0.0);
      for (std::size_t i = 0; i < npix; ++i) {
        if (ch.d_pos[i] < 0) continue;
        labeled[i] = 1.0;
        for (int which = 0; which < 2; ++which) {
          int d = which == 0 ? ch.d_pos[i] : ch.d_neg[i];
          if (!needed[d]) {
            pos_mask[d].assign(npix, 0.0);
            neg_mask[d].assign(npix, 0.0);
            needed[d] = true;
          }
        }
        pos_mask[ch.d_pos[i]][i] = 1.0;
        neg_mask[ch.d_neg[i]][i] = 1.0;
      }

      ad::Tape tape;
      Tensor fl = siamese_features(s.left, weights);
      Tensor fr = siamese_features(s.right, weights);
      Tensor inl = inv_norm(fl);
      Tensor s_pos = Tensor::zeros({h, w});
      Tensor s_neg = Tensor::zeros({h, w});
      for (int d = 0; d < cfg.d_max; ++d) {
        if (!needed[d]) continue;
        Tensor cos_d = cosine_map(fl, ad::shift_x(fr, -d), inl);
        s_pos = ad::add(s_pos, ad::hadamard(cos_d, Tensor::from({h, w}, pos_mask[d])));
        s_neg = ad::add(s_neg, ad::hadamard(cos_d, Tensor::from({h, w}, neg_mask[d])));
      }
      Tensor hinge = ad::relu(ad::add_scalar(ad::sub(s_neg, s_pos), cfg.margin));
      Tensor loss = ad::scale(
          ad::sum(ad::hadamard(hinge, Tensor::from({h, w}, labeled))),
          1.0 / ch.n_labeled);
      total += loss.value();
      for (auto& p : weights.params()) p.zero_grad();
      tape.backward(loss);
      for (auto& p : weights.params())
        for (std::size_t i = 0; i < p.size(); ++i)
          p.data()[i] -= cfg.lr * p.grad()[i];
    }
    epoch_losses.push_back(total / dataset.size());
  }
  return epoch_losses;
}

CostVolume normalize_cost_volume(const CostVolume& v) {
  const auto& data = v.values.data();
  double lo = data[0], hi = data[0];
  for (double x : data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<double> out(data.size());
  if (hi - lo < 1e-12) {
    std::fill(out.begin(), out.end(), 0.5);
  } else {
    double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = (data[i] - lo) * inv;
  }
  return {v.view, Tensor::from(v.values.shape(), std::move(out)), v.d_max};
}

void write_cost_volume(const CostVolume& v, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(v.values.shape()[0]),
                           static_cast<std::uint32_t>(v.values.shape()[1]),
                           static_cast<std::uint32_t>(v.values.shape()[2])};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  std::vector<float> vals(v.values.data().begin(), v.values.data().end());
  f.write(reinterpret_cast<const char*>(vals.data()),
          static_cast<std::streamsize>(vals.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write: " + path);
}

}  // namespace lrcr::cost
