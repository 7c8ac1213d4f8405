#include "lrcr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace lrcr::model {

// Forward gains: the feed-forward path (input-to-state, head, branch) is
// initialized hot enough that the cost signal survives four gated cells --
// at gain 1 the head biases receive gradients four to five orders of
// magnitude above any weight and SGD collapses to a constant disparity.
// The recurrent path starts near zero so the stage-2 unroll begins close
// to the stage-1 model and learns the state feedback gradually.
constexpr double kForwardGain = 4.0;
constexpr double kRecurrentGain = 0.1;

static Tensor uniform_init(ad::Shape shape, int fan_in, std::mt19937_64& rng,
                           double gain) {
  double bound = gain * std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.data()) v = u(rng);
  return t;
}

static ConvLstmCell init_cell(int c_in, int c, int h, int w, std::mt19937_64& rng) {
  ConvLstmCell cell;
  const int fan_x = c_in * 9, fan_h = c * 9;
  const double gx = kForwardGain, gh = kRecurrentGain;
  cell.w_xi = uniform_init({c, c_in, 3, 3}, fan_x, rng, gx);
  cell.w_xf = uniform_init({c, c_in, 3, 3}, fan_x, rng, gx);
  cell.w_xo = uniform_init({c, c_in, 3, 3}, fan_x, rng, gx);
  cell.w_xc = uniform_init({c, c_in, 3, 3}, fan_x, rng, gx);
  cell.w_hi = uniform_init({c, c, 3, 3}, fan_h, rng, gh);
  cell.w_hf = uniform_init({c, c, 3, 3}, fan_h, rng, gh);
  cell.w_ho = uniform_init({c, c, 3, 3}, fan_h, rng, gh);
  cell.w_hc = uniform_init({c, c, 3, 3}, fan_h, rng, gh);
  cell.w_ci = uniform_init({c, h, w}, 1, rng, gh);
  cell.w_cf = uniform_init({c, h, w}, 1, rng, gh);
  cell.w_co = uniform_init({c, h, w}, 1, rng, gh);
  cell.b_i = Tensor::zeros({c}, true);
  cell.b_f = Tensor::full({c}, 1.0, true);  // open forget gate at init
  cell.b_o = Tensor::zeros({c}, true);
  cell.b_c = Tensor::zeros({c}, true);
  return cell;
}

static TowerWeights init_tower(const ModelConfig& cfg, std::mt19937_64& rng) {
  const int d = cfg.d_max;
  TowerWeights t;
  const int chan[4] = {d, 2 * d, 2 * d, d};
  int c_in = d + 1;  // cost volume + attention map
  for (int i = 0; i < 4; ++i) {
    t.cells.push_back(init_cell(c_in, chan[i], cfg.height, cfg.width, rng));
    c_in = chan[i];
  }
  const double gx = kForwardGain;
  t.head_w1 = uniform_init({d, d, 1, 1}, d, rng, gx);
  t.head_b1 = Tensor::zeros({d}, true);
  t.head_w2 = uniform_init({d, d, 1, 1}, d, rng, gx);
  t.head_b2 = Tensor::zeros({d}, true);
  t.head_w3 = uniform_init({d, d, 1, 1}, d, rng, gx);
  t.head_b3 = Tensor::zeros({d}, true);
  return t;
}

LrcrWeights LrcrWeights::init(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LrcrWeights w;
  w.config = cfg;
  w.towers.push_back(init_tower(cfg, rng));
  if (!cfg.share_towers) w.towers.push_back(init_tower(cfg, rng));
  const double gx = kForwardGain;
  w.branch.w1 = uniform_init({cfg.branch_channels, 2, 3, 3}, 2 * 9, rng, gx);
  w.branch.b1 = Tensor::zeros({cfg.branch_channels}, true);
  w.branch.w2 = uniform_init({1, cfg.branch_channels, 3, 3},
                             cfg.branch_channels * 9, rng, gx);
  w.branch.b2 = Tensor::zeros({1}, true);
  return w;
}

std::vector<ParamRef> parameters(LrcrWeights& w) {
  std::vector<ParamRef> out;
  for (std::size_t ti = 0; ti < w.towers.size(); ++ti) {
    std::string tp = "tower" + std::to_string(ti) + ".";
    auto& t = w.towers[ti];
    for (std::size_t ci = 0; ci < t.cells.size(); ++ci) {
      std::string cp = tp + "cell" + std::to_string(ci) + ".";
      auto& c = t.cells[ci];
      out.push_back({cp + "w_xi", ParamGroup::InputConv, c.w_xi});
      out.push_back({cp + "w_xf", ParamGroup::InputConv, c.w_xf});
      out.push_back({cp + "w_xo", ParamGroup::InputConv, c.w_xo});
      out.push_back({cp + "w_xc", ParamGroup::InputConv, c.w_xc});
      out.push_back({cp + "b_i", ParamGroup::InputConv, c.b_i});
      out.push_back({cp + "b_f", ParamGroup::InputConv, c.b_f});
      out.push_back({cp + "b_o", ParamGroup::InputConv, c.b_o});
      out.push_back({cp + "b_c", ParamGroup::InputConv, c.b_c});
      out.push_back({cp + "w_hi", ParamGroup::HiddenConv, c.w_hi});
      out.push_back({cp + "w_hf", ParamGroup::HiddenConv, c.w_hf});
      out.push_back({cp + "w_ho", ParamGroup::HiddenConv, c.w_ho});
      out.push_back({cp + "w_hc", ParamGroup::HiddenConv, c.w_hc});
      out.push_back({cp + "w_ci", ParamGroup::Peephole, c.w_ci});
      out.push_back({cp + "w_cf", ParamGroup::Peephole, c.w_cf});
      out.push_back({cp + "w_co", ParamGroup::Peephole, c.w_co});
    }
    out.push_back({tp + "head.w1", ParamGroup::Head, t.head_w1});
    out.push_back({tp + "head.b1", ParamGroup::Head, t.head_b1});
    out.push_back({tp + "head.w2", ParamGroup::Head, t.head_w2});
    out.push_back({tp + "head.b2", ParamGroup::Head, t.head_b2});
    out.push_back({tp + "head.w3", ParamGroup::Head, t.head_w3});
    out.push_back({tp + "head.b3", ParamGroup::Head, t.head_b3});
  }
  out.push_back({"branch.w1", ParamGroup::Branch, w.branch.w1});
  out.push_back({"branch.b1", ParamGroup::Branch, w.branch.b1});
  out.push_back({"branch.w2", ParamGroup::Branch, w.branch.w2});
  out.push_back({"branch.b2", ParamGroup::Branch, w.branch.b2});
  return out;
}

ConvLstmState zero_state(int channels, int height, int width) {
  return {Tensor::zeros({channels, height, width}),
          Tensor::zeros({channels, height, width})};
}

ConvLstmState convlstm_step(const ConvLstmCell& cell, const Tensor& x,
                            const ConvLstmState& prev) {
  using namespace ad;
  const int c = cell.channels();
  if (x.rank() != 3 || x.shape()[0] != cell.in_channels())
    throw DimensionError("convlstm_step: input channel mismatch");
  if (prev.h.shape() != prev.c.shape() || prev.h.shape()[0] != c)
    throw DimensionError("convlstm_step: state shape mismatch");
  static thread_local Tensor no_bias;
  if (!no_bias.defined() || no_bias.shape()[0] != c) no_bias = Tensor::zeros({c});

  Tensor i = sigmoid(add(add(conv2d(x, cell.w_xi, cell.b_i, 1),
                             conv2d(prev.h, cell.w_hi, no_bias, 1)),
                         hadamard(cell.w_ci, prev.c)));
  Tensor f = sigmoid(add(add(conv2d(x, cell.w_xf, cell.b_f, 1),
                             conv2d(prev.h, cell.w_hf, no_bias, 1)),
                         hadamard(cell.w_cf, prev.c)));
  Tensor g = tanh_op(add(conv2d(x, cell.w_xc, cell.b_c, 1),
                         conv2d(prev.h, cell.w_hc, no_bias, 1)));
  Tensor c_t = add(hadamard(f, prev.c), hadamard(i, g));
  Tensor o = sigmoid(add(add(conv2d(x, cell.w_xo, cell.b_o, 1),
                             conv2d(prev.h, cell.w_ho, no_bias, 1)),
                         hadamard(cell.w_co, c_t)));
  Tensor h_t = hadamard(o, tanh_op(c_t));
  return {h_t, c_t};
}

TowerOutput tower_forward(TowerWeights& tower, const Tensor& cost,
                          const Tensor& err,
                          const std::vector<ConvLstmState>& states) {
  using namespace ad;
  if (states.size() != tower.cells.size())
    throw ContractError("tower_forward: expected " +
                        std::to_string(tower.cells.size()) + " states");
  if (err.rank() != 2) throw DimensionError("tower_forward: err must be [H,W]");
  Tensor x = concat_channels(cost, stack_maps({err}));

  TowerOutput out;
  for (std::size_t i = 0; i < tower.cells.size(); ++i) {
    ConvLstmState s = convlstm_step(tower.cells[i], x, states[i]);
    x = s.h;
    out.states.push_back(std::move(s));
  }
  Tensor h = tanh_op(conv2d(x, tower.head_w1, tower.head_b1, 0));
  h = tanh_op(conv2d(h, tower.head_w2, tower.head_b2, 0));
  Tensor cost_tensor = conv2d(h, tower.head_w3, tower.head_b3, 0);
  out.scores = scale(cost_tensor, -1.0);
  return out;
}

Tensor soft_argmin(const Tensor& scores) {
  using namespace ad;
  Tensor probs = softmax_over_disparity(scores);
  const int d = scores.shape()[0];
  const std::size_t npix =
      static_cast<std::size_t>(scores.shape()[1]) * scores.shape()[2];
  std::vector<double> ramp(scores.size());
  for (int j = 0; j < d; ++j)
    std::fill(ramp.begin() + j * npix, ramp.begin() + (j + 1) * npix,
              static_cast<double>(j));
  return channel_sum(hadamard(probs, Tensor::from(scores.shape(), std::move(ramp))));
}

DisparityMap to_disparity_map(const Tensor& disp) {
  if (disp.rank() != 2) throw ad::DimensionError("to_disparity_map: expected [H,W]");
  DisparityMap d(disp.shape()[0], disp.shape()[1]);
  d.values = disp.data();
  return d;
}

Tensor comparative_branch(BranchWeights& branch, const Tensor& d_view_scaled,
                          const Tensor& d_induced_scaled) {
  using namespace ad;
  if (d_view_scaled.shape() != d_induced_scaled.shape())
    throw DimensionError("comparative_branch: input shape mismatch");
  Tensor x = stack_maps({d_view_scaled, d_induced_scaled});
  Tensor h = tanh_op(conv2d(x, branch.w1, branch.b1, 1));
  Tensor e = sigmoid(conv2d(h, branch.w2, branch.b2, 1));
  return channel_sum(e);  // [1,H,W] -> [H,W]
}

std::vector<StepOutput> lrcr_unroll(LrcrWeights& w, const cost::CostVolume& cost_left,
                                    const cost::CostVolume& cost_right, int steps) {
  using namespace ad;
  if (steps < 1) throw ContractError("lrcr_unroll: steps must be >= 1");
  if (cost_left.values.shape() != cost_right.values.shape())
    throw DimensionError("lrcr_unroll: cost volume shape mismatch");
  const int d_max = w.config.d_max;
  const int h = cost_left.height(), width = cost_left.width();
  if (cost_left.values.shape()[0] != d_max || h != w.config.height ||
      width != w.config.width)
    throw DimensionError("lrcr_unroll: cost volume does not match model config");

  const int chan[4] = {d_max, 2 * d_max, 2 * d_max, d_max};
  std::vector<ConvLstmState> states_l, states_r;
  for (int i = 0; i < 4; ++i) {
    states_l.push_back(zero_state(chan[i], h, width));
    states_r.push_back(zero_state(chan[i], h, width));
  }
  Tensor err_l = Tensor::zeros({h, width});
  Tensor err_r = Tensor::zeros({h, width});

  std::vector<StepOutput> out;
  for (int t = 0; t < steps; ++t) {
    TowerOutput tl = tower_forward(w.tower(cost::View::Left), cost_left.values,
                                   err_l, states_l);
    TowerOutput tr = tower_forward(w.tower(cost::View::Right), cost_right.values,
                                   err_r, states_r);
    states_l = tl.states;
    states_r = tr.states;

    StepOutput step;
    step.disp_left = soft_argmin(tl.scores);
    step.disp_right = soft_argmin(tr.scores);

    // the warp routing is computed from detached disparities; the deposited
    // values stay differentiable by re-gathering along the same paths
    DisparityMap dl = to_disparity_map(step.disp_left.detached());
    DisparityMap dr = to_disparity_map(step.disp_right.detached());
    step.induced_left = geom::warp_disparity(dr, geom::WarpDirection::RightToLeft);
    step.induced_right = geom::warp_disparity(dl, geom::WarpDirection::LeftToRight);

    Tensor induced_l = gather_pixels(step.disp_right, step.induced_left.src_index);
    Tensor induced_r = gather_pixels(step.disp_left, step.induced_right.src_index);
    step.err_left = comparative_branch(w.branch, scale(step.disp_left, 1.0 / d_max),
                                       scale(induced_l, 1.0 / d_max));
    step.err_right = comparative_branch(w.branch, scale(step.disp_right, 1.0 / d_max),
                                        scale(induced_r, 1.0 / d_max));
    err_l = step.err_left;
    err_r = step.err_right;
    out.push_back(std::move(step));
  }
  return out;
}

// ---- checkpoint IO ----

static constexpr char kMagic[8] = {'L', 'R', 'C', 'R', 'C', 'K', '1', '\n'};

template <class T>
static void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
static void read_raw(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void save_checkpoint(LrcrWeights& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_raw(f, static_cast<std::int32_t>(w.config.d_max));
  write_raw(f, static_cast<std::int32_t>(w.config.height));
  write_raw(f, static_cast<std::int32_t>(w.config.width));
  write_raw(f, static_cast<std::uint8_t>(w.config.share_towers ? 1 : 0));
  write_raw(f, static_cast<std::int32_t>(w.config.branch_channels));
  auto params = parameters(w);
  write_raw(f, static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    write_raw(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_raw(f, static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (int e : p.tensor.shape()) write_raw(f, static_cast<std::uint32_t>(e));
    f.write(reinterpret_cast<const char*>(p.tensor.data().data()),
            static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

LrcrWeights load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::int32_t d_max, height, width, branch_channels;
  std::uint8_t share;
  read_raw(f, d_max);
  read_raw(f, height);
  read_raw(f, width);
  read_raw(f, share);
  read_raw(f, branch_channels);
  ModelConfig cfg;
  cfg.d_max = d_max;
  cfg.height = height;
  cfg.width = width;
  cfg.share_towers = share != 0;
  cfg.branch_channels = branch_channels;
  LrcrWeights w = LrcrWeights::init(cfg, 0);
  auto params = parameters(w);
  std::uint32_t count;
  read_raw(f, count);
  if (!f || count != params.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  for (auto& p : params) {
    std::uint32_t name_len;
    read_raw(f, name_len);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (name != p.name)
      throw std::runtime_error("checkpoint parameter order mismatch: expected " +
                               p.name + ", got " + name);
    std::uint32_t rank;
    read_raw(f, rank);
    ad::Shape shape(rank);
    for (auto& e : shape) {
      std::uint32_t v;
      read_raw(f, v);
      e = static_cast<int>(v);
    }
    if (shape != p.tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    f.read(reinterpret_cast<char*>(p.tensor.data().data()),
           static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
    if (!f) throw std::runtime_error("short checkpoint file: " + path);
  }
  return w;
}

}  // namespace lrcr::model
