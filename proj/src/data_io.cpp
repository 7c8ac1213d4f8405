#include "lrcr/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "lrcr/tensor.hpp"

namespace fs = std::filesystem;

namespace lrcr::io {

void SceneParams::validate() const {
  if (height < 8 || width < 8)
    throw ad::ConfigError("scene: height and width must be >= 8");
  if (d_max < 2 || d_max > width / 2)
    throw ad::ConfigError("scene: need 2 <= d_max <= width/2");
  if (d_bg < 0 || d_bg > d_max - 1)
    throw ad::ConfigError("scene: d_bg out of range");
  if (rect_count < 0) throw ad::ConfigError("scene: rect_count must be >= 0");
  if (rect_count > 0) {
    if (rect_d_min <= d_bg)
      throw ad::ConfigError("scene: rectangle disparities must exceed d_bg");
    if (rect_d_min > rect_d_max || rect_d_max > d_max - 1)
      throw ad::ConfigError("scene: rectangle disparity range invalid");
  }
  if (noise_amplitude < 0.0 || noise_amplitude > 1.0)
    throw ad::ConfigError("scene: noise_amplitude must be in [0,1]");
}

namespace {

struct Layer {
  int x0, x1, y0, y1;  // left-view footprint, half-open
  int d;
  GrayImage texture;  // indexed in left-view coordinates
};

GrayImage make_texture(std::mt19937_64& rng, int h, int w, double base,
                       double amplitude) {
  GrayImage raw(h, w);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (double& v : raw.v) v = u01(rng);
  // one box-blur pass for coarse structure; keep part of the raw noise so
  // every pixel stays census-distinguishable from its neighbors
  GrayImage noise(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          s += raw.at(std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
      noise.at(y, x) = 0.6 * (s / 9.0) + 0.4 * raw.at(y, x);
    }
  for (double& v : noise.v) v = base + amplitude * (v - 0.5) * 2.0;
  noise.clamp01();
  return noise;
}

// Index of the visible layer at a left-view pixel: largest disparity wins,
// later layers break ties.
int visible_left(const std::vector<Layer>& layers, int y, int x) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const Layer& l = layers[i];
    if (y >= l.y0 && y < l.y1 && x >= l.x0 && x < l.x1) {
      if (best < 0 || l.d >= layers[best].d) best = i;
    }
  }
  return best;
}

// Same in right-view coordinates: a layer covers right pixel x_r iff its
// left footprint covers x_r + d.
int visible_right(const std::vector<Layer>& layers, int y, int xr) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const Layer& l = layers[i];
    int xl = xr + l.d;
    if (y >= l.y0 && y < l.y1 && xl >= l.x0 && xl < l.x1) {
      if (best < 0 || l.d >= layers[best].d) best = i;
    }
  }
  return best;
}

}  // namespace

StereoSample generate_sample(const SceneParams& params, std::uint64_t seed) {
  params.validate();
  const int h = params.height, w = params.width;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<Layer> layers;
  {
    Layer bg;
    bg.x0 = 0;
    bg.x1 = w;
    bg.y0 = 0;
    bg.y1 = h;
    bg.d = params.d_bg;
    bg.texture = make_texture(rng, h, w, 0.45, params.noise_amplitude);
    layers.push_back(std::move(bg));
  }
  std::uniform_int_distribution<int> rect_d(params.rect_d_min, params.rect_d_max);
  for (int i = 0; i < params.rect_count; ++i) {
    Layer l;
    int rw = std::max(4, static_cast<int>(std::floor((0.15 + 0.2 * u01(rng)) * w)));
    int rh = std::max(4, static_cast<int>(std::floor((0.15 + 0.2 * u01(rng)) * h)));
    l.x0 = static_cast<int>(std::floor(u01(rng) * (w - rw)));
    l.y0 = static_cast<int>(std::floor(u01(rng) * (h - rh)));
    l.x1 = l.x0 + rw;
    l.y1 = l.y0 + rh;
    l.d = rect_d(rng);
    double base = 0.2 + 0.6 * u01(rng);
    l.texture = make_texture(rng, h, w, base, params.noise_amplitude);
    layers.push_back(std::move(l));
  }

  StereoSample s;
  s.seed = seed;
  s.left = GrayImage(h, w);
  s.right = GrayImage(h, w);
  s.gt_left = DisparityMap(h, w);
  s.gt_right = DisparityMap(h, w);
  s.gt_left_full = DisparityMap(h, w);
  s.gt_right_full = DisparityMap(h, w);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int li = visible_left(layers, y, x);
      const Layer& l = layers[li];
      s.left.at(y, x) = l.texture.at(y, x);
      s.gt_left.at(y, x) = l.d;
      s.gt_left_full.at(y, x) = l.d;
      int xr = x - l.d;
      // occluded or out of view in the right image -> unlabeled
      if (xr < 0 || visible_right(layers, y, xr) != li) s.gt_left.invalidate(y, x);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int xr = 0; xr < w; ++xr) {
      int ri = visible_right(layers, y, xr);
      if (ri < 0) {
        // no layer reaches this column (right of the background's footprint)
        s.right.at(y, xr) = layers[0].texture.at(y, std::min(w - 1, xr + layers[0].d));
        s.gt_right_full.at(y, xr) = layers[0].d;
        s.gt_right.invalidate(y, xr);
        continue;
      }
      const Layer& l = layers[ri];
      int xl = xr + l.d;
      s.right.at(y, xr) = l.texture.at(y, xl);
      s.gt_right.at(y, xr) = l.d;
      s.gt_right_full.at(y, xr) = l.d;
      if (xl >= w || visible_left(layers, y, xl) != ri) s.gt_right.invalidate(y, xr);
    }
  }
  return s;
}

// ---- PFM ----

static std::runtime_error format_error(const std::string& msg) {
  return std::runtime_error("format error: " + msg);
}

void write_pfm(const DisparityMap& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "Pf\n" << d.width << " " << d.height << "\n-1.0\n";
  // rows bottom-to-top
  for (int y = d.height - 1; y >= 0; --y) {
    std::vector<float> row(d.width);
    for (int x = 0; x < d.width; ++x)
      row[x] = d.is_valid(y, x) ? static_cast<float>(d.at(y, x))
                                : std::numeric_limits<float>::infinity();
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

DisparityMap read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic == "PF") throw format_error("color PFM not supported: " + path);
  if (magic != "Pf") throw format_error("bad PFM magic in " + path);
  int w = 0, h = 0;
  double scale = 0.0;
  f >> w >> h >> scale;
  if (!f || w <= 0 || h <= 0 || scale == 0.0)
    throw format_error("malformed PFM header in " + path);
  if (scale > 0.0) throw format_error("big-endian PFM not supported: " + path);
  f.get();  // single whitespace after the scale
  DisparityMap d(h, w);
  std::vector<float> row(w);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f) throw format_error("short PFM file: " + path);
    for (int x = 0; x < w; ++x) {
      if (std::isfinite(row[x]))
        d.at(y, x) = row[x];
      else
        d.invalidate(y, x);
    }
  }
  return d;
}

// ---- PGM ----

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.v.size());
  for (std::size_t i = 0; i < img.v.size(); ++i)
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(img.v[i], 0.0, 1.0) * 255.0));
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (!f || magic != "P5" || w <= 0 || h <= 0)
    throw format_error("malformed PGM header in " + path);
  if (maxval != 255) throw format_error("PGM maxval must be 255 in " + path);
  f.get();
  GrayImage img(h, w);
  std::vector<unsigned char> bytes(img.v.size());
  f.read(reinterpret_cast<char*>(bytes.data()),
         static_cast<std::streamsize>(bytes.size()));
  if (!f) throw format_error("short PGM file: " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.v[i] = bytes[i] / 255.0;
  return img;
}

// ---- splits ----

std::pair<std::vector<int>, std::vector<int>> make_split(int n_total, int n_val,
                                                         std::uint64_t seed) {
  if (n_val <= 0 || n_val >= n_total)
    throw ad::ContractError("make_split: need 0 < n_val < n_total");
  std::vector<int> ids(n_total);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<int> val(ids.begin(), ids.begin() + n_val);
  std::vector<int> train(ids.begin() + n_val, ids.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// ---- dataset layout ----

static std::string sample_dir(const std::string& dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return (fs::path(dir) / buf).string();
}

void save_sample(const StereoSample& s, const std::string& dir, int index) {
  std::string sd = sample_dir(dir, index);
  fs::create_directories(sd);
  write_pgm(s.left, sd + "/left.pgm");
  write_pgm(s.right, sd + "/right.pgm");
  write_pfm(s.gt_left, sd + "/gt_left.pfm");
  write_pfm(s.gt_right, sd + "/gt_right.pfm");
}

StereoSample load_sample(const std::string& dir, int index) {
  std::string sd = sample_dir(dir, index);
  StereoSample s;
  s.left = read_pgm(sd + "/left.pgm");
  s.right = read_pgm(sd + "/right.pgm");
  s.gt_left = read_pfm(sd + "/gt_left.pfm");
  s.gt_right = read_pfm(sd + "/gt_right.pfm");
  return s;
}

int count_samples(const std::string& dir) {
  int n = 0;
  while (fs::exists(sample_dir(dir, n))) ++n;
  return n;
}

}  // namespace lrcr::io
