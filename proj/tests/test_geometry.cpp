#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "lrcr/geometry.hpp"

using namespace lrcr;
using namespace lrcr::geom;
using lrcr::ad::Tensor;

TEST_CASE("warp_disparity: zero disparity is the identity") {
  DisparityMap src(3, 6, 0.0);
  auto res = warp_disparity(src, WarpDirection::RightToLeft);
  for (std::size_t i = 0; i < src.values.size(); ++i) {
    CHECK(res.map.valid[i] == 1);
    CHECK(res.map.values[i] == 0.0);
  }
}

TEST_CASE("warp_disparity: constant shift leaves holes at the border") {
  DisparityMap src(1, 8, 2.0);
  auto res = warp_disparity(src, WarpDirection::RightToLeft);
  for (int x = 0; x < 8; ++x) {
    if (x < 2) {
      CHECK(!res.map.is_valid(0, x));
    } else {
      CHECK(res.map.is_valid(0, x));
      CHECK(res.map.at(0, x) == 2.0);
    }
  }
}

TEST_CASE("warp_disparity: collision keeps the larger disparity") {
  // x=2 with d=3 and x=0 with d=5 both land on target column 5
  DisparityMap src(1, 8, 0.0, false);
  src.values[2] = 3.0;
  src.valid[2] = 1;
  src.values[0] = 5.0;
  src.valid[0] = 1;
  auto res = warp_disparity(src, WarpDirection::RightToLeft);
  CHECK(res.map.is_valid(0, 5));
  CHECK(res.map.at(0, 5) == 5.0);
}

TEST_CASE("warp round trip on a constant map restores it where valid") {
  DisparityMap src(4, 10, 3.0);
  auto to_left = warp_disparity(src, WarpDirection::RightToLeft);
  auto back = warp_disparity(to_left.map, WarpDirection::LeftToRight);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 10; ++x)
      if (back.map.is_valid(y, x) && src.is_valid(y, x))
        CHECK(back.map.at(y, x) == src.at(y, x));
}

TEST_CASE("lr_consistency_check semantics") {
  DisparityMap d(1, 5, 4.0);
  WarpResult induced;
  induced.map = d;
  auto mask = lr_consistency_check(d, induced, 1.0);
  CHECK(std::count(mask.begin(), mask.end(), 1) == 0);

  induced.map.values[2] = 5.5;  // |diff| = 1.5
  CHECK(lr_consistency_check(d, induced, 1.0)[2] == 1);
  CHECK(lr_consistency_check(d, induced, 2.0)[2] == 0);

  induced.map.invalidate(0, 3);
  CHECK(lr_consistency_check(d, induced, 100.0)[3] == 1);  // holes always flag
}

TEST_CASE("lr_consistency_check: larger threshold flags a subset") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 8);
  DisparityMap d(6, 6);
  WarpResult induced;
  induced.map = DisparityMap(6, 6);
  for (auto& v : d.values) v = u(rng);
  for (auto& v : induced.map.values) v = u(rng);
  auto loose = lr_consistency_check(d, induced, 3.0);
  auto tight = lr_consistency_check(d, induced, 1.0);
  for (std::size_t i = 0; i < loose.size(); ++i)
    if (loose[i]) CHECK(tight[i] == 1);
}

TEST_CASE("interpolate_mismatched: min of nearest unflagged row neighbors") {
  DisparityMap d(1, 5);
  d.values = {5, 5, 9, 7, 7};
  std::vector<std::uint8_t> mask = {0, 0, 1, 0, 0};
  auto out = interpolate_mismatched(d, mask);
  CHECK(out.values[2] == 5.0);  // min(5, 7)
  CHECK(out.values[0] == 5.0);  // unflagged untouched
  CHECK(out.values[3] == 7.0);
}

TEST_CASE("interpolate_mismatched: edge pixel takes the one-sided neighbor") {
  DisparityMap d(1, 4);
  d.values = {9, 6, 6, 6};
  std::vector<std::uint8_t> mask = {1, 0, 0, 0};
  auto out = interpolate_mismatched(d, mask);
  CHECK(out.values[0] == 6.0);
}

TEST_CASE("interpolate_mismatched: no flags is the identity, all flags errors") {
  DisparityMap d(2, 3, 2.5);
  std::vector<std::uint8_t> none(6, 0), all(6, 1);
  auto out = interpolate_mismatched(d, none);
  CHECK(out.values == d.values);
  CHECK_THROWS_AS(interpolate_mismatched(d, all), ad::ContractError);
}

TEST_CASE("interpolate_mismatched: fully flagged row falls back to global median") {
  DisparityMap d(2, 3);
  d.values = {1, 1, 1, 4, 4, 4};
  std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0, 0};
  auto out = interpolate_mismatched(d, mask);
  for (int x = 0; x < 3; ++x) CHECK(out.at(0, x) == 4.0);
}

TEST_CASE("subpixel_enhance cases") {
  // single pixel, D=3 volume with controllable neighborhood
  auto vol = [](double cm, double c0, double cp) {
    return Tensor::from({3, 1, 1}, {cm, c0, cp});
  };
  DisparityMap wta(1, 1, 1.0);

  auto sym = subpixel_enhance(vol(2, 1, 2), wta);
  CHECK(sym.values[0] == doctest::Approx(1.0).epsilon(1e-15));

  auto skew = subpixel_enhance(vol(3, 1, 2), wta);
  CHECK(std::fabs(skew.values[0] - (1.0 + 1.0 / 6.0)) < 1e-12);

  auto flat = subpixel_enhance(vol(1, 1, 1), wta);
  CHECK(flat.values[0] == 1.0);  // degenerate denominator guard
}

TEST_CASE("subpixel offsets stay within +-0.5 and boundaries are untouched") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  const int d_max = 6, h = 4, w = 5;
  std::vector<double> costs(static_cast<std::size_t>(d_max) * h * w);
  for (auto& c : costs) c = u(rng);
  Tensor vol = Tensor::from({d_max, h, w}, costs);
  // WTA by brute force
  DisparityMap wta(h, w);
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < npix; ++p) {
    int best = 0;
    for (int d = 1; d < d_max; ++d)
      if (costs[d * npix + p] < costs[best * npix + p]) best = d;
    wta.values[p] = best;
  }
  auto out = subpixel_enhance(vol, wta);
  for (std::size_t p = 0; p < npix; ++p) {
    CHECK(std::fabs(out.values[p] - wta.values[p]) <= 0.5);
    int d = static_cast<int>(wta.values[p]);
    if (d == 0 || d == d_max - 1) CHECK(out.values[p] == wta.values[p]);
  }
}

TEST_CASE("median_filter: constants unchanged, spikes removed") {
  DisparityMap d(5, 5, 2.0);
  auto out = median_filter(d, 3);
  CHECK(out.values == d.values);

  d.at(2, 2) = 50.0;
  auto despiked = median_filter(d, 3);
  CHECK(despiked.at(2, 2) == 2.0);

  CHECK_THROWS_AS(median_filter(d, 4), ad::ConfigError);
}

TEST_CASE("median_filter matches sort-based oracle on random maps") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 10);
  DisparityMap d(7, 9);
  for (auto& v : d.values) v = u(rng);
  auto out = median_filter(d, 3);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      std::vector<double> window;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          window.push_back(d.at(std::clamp(y + dy, 0, d.height - 1),
                                std::clamp(x + dx, 0, d.width - 1)));
      std::sort(window.begin(), window.end());
      CHECK(out.at(y, x) == window[window.size() / 2]);
    }
}
