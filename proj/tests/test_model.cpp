#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lrcr/model.hpp"

using namespace lrcr;
using namespace lrcr::model;
using lrcr::ad::Tensor;

static ConvLstmCell zero_cell(int c_in, int c, int h, int w) {
  ConvLstmCell cell;
  cell.w_xi = Tensor::zeros({c, c_in, 3, 3}, true);
  cell.w_xf = Tensor::zeros({c, c_in, 3, 3}, true);
  cell.w_xo = Tensor::zeros({c, c_in, 3, 3}, true);
  cell.w_xc = Tensor::zeros({c, c_in, 3, 3}, true);
  cell.w_hi = Tensor::zeros({c, c, 3, 3}, true);
  cell.w_hf = Tensor::zeros({c, c, 3, 3}, true);
  cell.w_ho = Tensor::zeros({c, c, 3, 3}, true);
  cell.w_hc = Tensor::zeros({c, c, 3, 3}, true);
  cell.w_ci = Tensor::zeros({c, h, w}, true);
  cell.w_cf = Tensor::zeros({c, h, w}, true);
  cell.w_co = Tensor::zeros({c, h, w}, true);
  cell.b_i = Tensor::zeros({c}, true);
  cell.b_f = Tensor::zeros({c}, true);
  cell.b_o = Tensor::zeros({c}, true);
  cell.b_c = Tensor::zeros({c}, true);
  return cell;
}

TEST_CASE("convlstm_step: zero weights, zero state") {
  auto cell = zero_cell(3, 2, 4, 4);
  auto out = convlstm_step(cell, Tensor::full({3, 4, 4}, 0.7), zero_state(2, 4, 4));
  for (double v : out.c.data()) CHECK(v == 0.0);
  for (double v : out.h.data()) CHECK(v == 0.0);
}

TEST_CASE("convlstm_step: zero weights contract the memory cell by half") {
  const double c0 = 0.8;
  auto cell = zero_cell(3, 2, 4, 4);
  ConvLstmState prev{Tensor::zeros({2, 4, 4}), Tensor::full({2, 4, 4}, c0)};
  auto out = convlstm_step(cell, Tensor::full({3, 4, 4}, 0.7), prev);
  for (double v : out.c.data()) CHECK(v == doctest::Approx(0.5 * c0).epsilon(1e-15));
  for (double v : out.h.data())
    CHECK(v == doctest::Approx(0.5 * std::tanh(0.5 * c0)).epsilon(1e-14));
}

TEST_CASE("convlstm_step: 1x1 case matches a scalar oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto cell = zero_cell(1, 1, 1, 1);
  std::vector<Tensor> kernels = {cell.w_xi, cell.w_xf, cell.w_xo, cell.w_xc,
                                 cell.w_hi, cell.w_hf, cell.w_ho, cell.w_hc};
  for (auto& k : kernels) k.data()[4] = u(rng);  // kernel center tap
  for (Tensor t : {cell.w_ci, cell.w_cf, cell.w_co, cell.b_i, cell.b_f,
                   cell.b_o, cell.b_c})
    t.data()[0] = u(rng);

  const double x = u(rng), h0 = u(rng), c0 = u(rng);
  ConvLstmState prev{Tensor::full({1, 1, 1}, h0), Tensor::full({1, 1, 1}, c0)};
  auto out = convlstm_step(cell, Tensor::full({1, 1, 1}, x), prev);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto center = [](const Tensor& k) { return k.data()[4]; };
  double i = sig(center(cell.w_xi) * x + center(cell.w_hi) * h0 +
                 cell.w_ci.data()[0] * c0 + cell.b_i.data()[0]);
  double f = sig(center(cell.w_xf) * x + center(cell.w_hf) * h0 +
                 cell.w_cf.data()[0] * c0 + cell.b_f.data()[0]);
  double g = std::tanh(center(cell.w_xc) * x + center(cell.w_hc) * h0 +
                       cell.b_c.data()[0]);
  double ct = f * c0 + i * g;
  double o = sig(center(cell.w_xo) * x + center(cell.w_ho) * h0 +
                 cell.w_co.data()[0] * ct + cell.b_o.data()[0]);
  CHECK(std::fabs(out.c.data()[0] - ct) < 1e-12);
  CHECK(std::fabs(out.h.data()[0] - o * std::tanh(ct)) < 1e-12);
}

TEST_CASE("convlstm_step rejects mismatched shapes") {
  auto cell = zero_cell(3, 2, 4, 4);
  CHECK_THROWS_AS(
      convlstm_step(cell, Tensor::zeros({2, 4, 4}), zero_state(2, 4, 4)),
      ad::DimensionError);
  CHECK_THROWS_AS(
      convlstm_step(cell, Tensor::zeros({3, 4, 4}), zero_state(3, 4, 4)),
      ad::DimensionError);
}

static ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_max = 8;
  cfg.height = 8;
  cfg.width = 8;
  return cfg;
}

static std::vector<ConvLstmState> fresh_states(const ModelConfig& cfg) {
  const int chan[4] = {cfg.d_max, 2 * cfg.d_max, 2 * cfg.d_max, cfg.d_max};
  std::vector<ConvLstmState> s;
  for (int c : chan) s.push_back(zero_state(c, cfg.height, cfg.width));
  return s;
}

TEST_CASE("tower_forward: zero weights give all-zero scores") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 1);
  for (auto& p : parameters(w))
    for (double& v : p.tensor.data()) v = 0.0;
  auto out = tower_forward(w.towers[0], Tensor::full({8, 8, 8}, 0.3),
                           Tensor::zeros({8, 8}), fresh_states(cfg));
  for (double v : out.scores.data()) CHECK(v == 0.0);
}

TEST_CASE("tower_forward: purity and state-count contract") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor cost = Tensor::zeros({8, 8, 8});
  for (double& v : cost.data()) v = u(rng);
  Tensor err = Tensor::full({8, 8}, 0.25);

  auto a = tower_forward(w.towers[0], cost, err, fresh_states(cfg));
  auto b = tower_forward(w.towers[0], cost, err, fresh_states(cfg));
  CHECK(a.scores.data() == b.scores.data());

  auto three = fresh_states(cfg);
  three.pop_back();
  CHECK_THROWS_AS(tower_forward(w.towers[0], cost, err, three), ad::ContractError);
}

TEST_CASE("tower_forward gradient passes a sampled finite-difference audit") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 3);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor cost = Tensor::zeros({8, 8, 8});
  for (double& v : cost.data()) v = u(rng);

  auto mean_score = [&]() {
    auto out = tower_forward(w.towers[0], cost, Tensor::full({8, 8}, 0.5),
                             fresh_states(cfg));
    return ad::scale(ad::sum(out.scores), 1.0 / out.scores.size());
  };
  auto params = parameters(w);
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 5);
  for (int trial = 0; trial < 6; ++trial) {
    auto& p = params[pick_param(rng)];
    if (p.group == ParamGroup::Branch) continue;  // unused by the tower
    std::uniform_int_distribution<std::size_t> pick(0, p.tensor.size() - 1);
    std::vector<std::size_t> coords = {pick(rng), pick(rng)};
    double err = ad::finite_diff_check_coords(mean_score, p.tensor, coords, 1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("soft_argmin: uniform scores give the disparity midpoint") {
  auto d = soft_argmin(Tensor::full({4, 2, 2}, 1.3));
  for (double v : d.data()) CHECK(v == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("soft_argmin: dominant lowest cost pins the estimate near zero") {
  auto d = soft_argmin(Tensor::from({3, 1, 1}, {0.0, -10.0, -10.0}));
  double expect = 3.0 * std::exp(-10.0) / (1.0 + 2.0 * std::exp(-10.0));
  CHECK(d.data()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(d.data()[0] == doctest::Approx(1.36e-4).epsilon(1e-2));
}

TEST_CASE("soft_argmin: sharpened scores recover the hard argmin") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor scores = Tensor::zeros({8, 3, 3});
  for (double& v : scores.data()) v = u(rng);
  // unique max at d=5 with margin >= 1, then sharpen by 50
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      scores.data()[5 * 9 + y * 3 + x] = 2.5;
  auto d = soft_argmin(ad::scale(scores, 50.0));
  for (double v : d.data()) CHECK(std::fabs(v - 5.0) < 1e-3);
}

TEST_CASE("soft_argmin: range and shift invariance") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Tensor scores = Tensor::zeros({6, 4, 4});
  for (double& v : scores.data()) v = u(rng);
  auto d = soft_argmin(scores);
  for (double v : d.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 5.0);
  }
  auto shifted = soft_argmin(ad::add_scalar(scores, 7.25));
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(std::fabs(d.data()[i] - shifted.data()[i]) < 1e-12);
}

TEST_CASE("comparative_branch: zero weights output 0.5; range is (0,1)") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 4);
  BranchWeights zero;
  zero.w1 = Tensor::zeros({8, 2, 3, 3}, true);
  zero.b1 = Tensor::zeros({8}, true);
  zero.w2 = Tensor::zeros({1, 8, 3, 3}, true);
  zero.b2 = Tensor::zeros({1}, true);
  auto flat = comparative_branch(zero, Tensor::full({8, 8}, 0.3),
                                 Tensor::full({8, 8}, 0.9));
  for (double v : flat.data()) CHECK(v == 0.5);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor a = Tensor::zeros({8, 8}), b = Tensor::zeros({8, 8});
  for (double& v : a.data()) v = u(rng);
  for (double& v : b.data()) v = u(rng);
  auto e = comparative_branch(w.branch, a, b);
  for (double v : e.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(comparative_branch(w.branch, a, Tensor::zeros({4, 4})),
                  ad::DimensionError);
}

TEST_CASE("comparative_branch gradient is nonzero and passes finite differences") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 5);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor a = Tensor::zeros({8, 8}), b = Tensor::zeros({8, 8});
  for (double& v : a.data()) v = u(rng);
  for (double& v : b.data()) v = u(rng);

  auto mean_out = [&]() {
    auto e = comparative_branch(w.branch, a, b);
    return ad::scale(ad::sum(e), 1.0 / e.size());
  };
  {
    ad::Tape tape;
    for (Tensor p : {w.branch.w1, w.branch.b1, w.branch.w2, w.branch.b2})
      p.zero_grad();
    tape.backward(mean_out());
    double total = 0.0;
    for (Tensor p : {w.branch.w1, w.branch.b1, w.branch.w2, w.branch.b2})
      for (double g : p.grad()) total += std::fabs(g);
    CHECK(total > 0.0);
  }
  for (Tensor p : {w.branch.w1, w.branch.b1, w.branch.w2, w.branch.b2}) {
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    std::vector<std::size_t> coords = {pick(rng), pick(rng)};
    CHECK(ad::finite_diff_check_coords(mean_out, p, coords, 1e-5) < 1e-5);
  }
}

static cost::CostVolume random_volume(const ModelConfig& cfg, cost::View view,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t = Tensor::zeros({cfg.d_max, cfg.height, cfg.width});
  for (double& v : t.data()) v = u(rng);
  return {view, t, cfg.d_max};
}

TEST_CASE("lrcr_unroll: first step equals the non-recurrent forward") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 6);
  auto cl = random_volume(cfg, cost::View::Left, 1);
  auto cr = random_volume(cfg, cost::View::Right, 2);
  auto steps = lrcr_unroll(w, cl, cr, 1);
  REQUIRE(steps.size() == 1);

  auto tl = tower_forward(w.towers[0], cl.values, Tensor::zeros({8, 8}),
                          fresh_states(cfg));
  auto stage1 = soft_argmin(tl.scores);
  CHECK(steps[0].disp_left.data() == stage1.data());
}

TEST_CASE("lrcr_unroll: zero weights yield a constant fixed point") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 7);
  for (auto& p : parameters(w))
    for (double& v : p.tensor.data()) v = 0.0;
  auto steps = lrcr_unroll(w, random_volume(cfg, cost::View::Left, 3),
                           random_volume(cfg, cost::View::Right, 4), 3);
  REQUIRE(steps.size() == 3);
  for (const auto& s : steps) {
    // zero scores -> uniform softmax -> midpoint everywhere
    for (double v : s.disp_left.data())
      CHECK(v == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(s.disp_left.data() == steps[0].disp_left.data());
    CHECK(s.disp_right.data() == steps[0].disp_right.data());
  }
}

TEST_CASE("lrcr_unroll: purity and contracts") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 8);
  auto cl = random_volume(cfg, cost::View::Left, 5);
  auto cr = random_volume(cfg, cost::View::Right, 6);
  auto a = lrcr_unroll(w, cl, cr, 2);
  auto b = lrcr_unroll(w, cl, cr, 2);
  for (int t = 0; t < 2; ++t) {
    CHECK(a[t].disp_left.data() == b[t].disp_left.data());
    CHECK(a[t].err_right.data() == b[t].err_right.data());
  }
  for (const auto& s : a)
    for (double v : s.err_left.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  CHECK_THROWS_AS(lrcr_unroll(w, cl, cr, 0), ad::ContractError);
}

TEST_CASE("lrcr_unroll gradient passes a sampled finite-difference audit") {
  auto cfg = small_config();
  auto w = LrcrWeights::init(cfg, 9);
  // spread the scores: near-zero scores park every disparity at the softmax
  // midpoint, which sits exactly on the warp's rounding boundary
  for (double& v : w.towers[0].head_w3.data()) v *= 10.0;
  auto cl = random_volume(cfg, cost::View::Left, 7);
  auto cr = random_volume(cfg, cost::View::Right, 8);

  auto loss = [&]() {
    auto steps = lrcr_unroll(w, cl, cr, 2);
    Tensor total = ad::sum(steps[0].disp_left);
    total = ad::add(total, ad::sum(steps[1].disp_left));
    total = ad::add(total, ad::sum(steps[1].disp_right));
    return ad::scale(total, 1.0 / cl.values.size());
  };
  auto params = parameters(w);
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
  for (int trial = 0; trial < 5; ++trial) {
    auto& p = params[pick_param(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, p.tensor.size() - 1);
    std::vector<std::size_t> coords = {pick(rng)};
    // the deep graph leaves per-coordinate gradients down at 1e-9; a larger
    // step keeps the central difference above the cancellation floor
    double err = ad::finite_diff_check_coords(loss, p.tensor, coords, 1e-3);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  auto cfg = small_config();
  cfg.share_towers = false;
  auto w = LrcrWeights::init(cfg, 10);
  save_checkpoint(w, "/tmp/ck.bin");
  auto r = load_checkpoint("/tmp/ck.bin");
  CHECK(r.config.d_max == cfg.d_max);
  CHECK(r.config.share_towers == false);
  auto pa = parameters(w), pb = parameters(r);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.data() == pb[i].tensor.data());
  }
}

TEST_CASE("checkpoint loading rejects corrupt files") {
  {
    std::ofstream f("/tmp/ck_bad.bin", std::ios::binary);
    f << "NOTACKPT";
  }
  CHECK_THROWS(load_checkpoint("/tmp/ck_bad.bin"));
  CHECK_THROWS(load_checkpoint("/tmp/ck_missing.bin"));
}

TEST_CASE("parameters: naming and grouping are stable") {
  auto w = LrcrWeights::init(small_config(), 11);
  auto params = parameters(w);
  // 4 cells x 15 tensors + 6 head + 4 branch
  CHECK(params.size() == 4 * 15 + 6 + 4);
  int input = 0, hidden = 0, peep = 0, head = 0, branch = 0;
  for (const auto& p : params) {
    switch (p.group) {
      case ParamGroup::InputConv: ++input; break;
      case ParamGroup::HiddenConv: ++hidden; break;
      case ParamGroup::Peephole: ++peep; break;
      case ParamGroup::Head: ++head; break;
      case ParamGroup::Branch: ++branch; break;
    }
  }
  CHECK(input == 4 * 8);
  CHECK(hidden == 4 * 4);
  CHECK(peep == 4 * 3);
  CHECK(head == 6);
  CHECK(branch == 4);
  CHECK(params[0].name == "tower0.cell0.w_xi");
  CHECK(params.back().name == "branch.b2");
}
