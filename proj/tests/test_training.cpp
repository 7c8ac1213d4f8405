#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "lrcr/training.hpp"

using namespace lrcr;
using namespace lrcr::train;
using lrcr::ad::Tensor;

TEST_CASE("l1_disparity_loss hand cases") {
  DisparityMap gt(1, 2);
  gt.values = {1.5, 2.5};
  Tensor pred = Tensor::from({1, 2}, {1.0, 2.0});
  CHECK(l1_disparity_loss(pred, gt).value() == doctest::Approx(0.5));

  Tensor exact = Tensor::from({1, 2}, {1.5, 2.5});
  CHECK(l1_disparity_loss(exact, gt).value() == 0.0);

  DisparityMap one(1, 2);
  one.values = {3.0, 9.0};
  one.invalidate(0, 1);
  Tensor p = Tensor::from({1, 2}, {1.0, 0.0});
  CHECK(l1_disparity_loss(p, one).value() == 2.0);

  DisparityMap empty(1, 2);
  empty.invalidate(0, 0);
  empty.invalidate(0, 1);
  CHECK_THROWS_AS(l1_disparity_loss(pred, empty), ad::ContractError);
}

TEST_CASE("l1_disparity_loss ignores unlabeled pixels exactly") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  DisparityMap gt(4, 4);
  for (auto& v : gt.values) v = u(rng);
  gt.invalidate(1, 2);
  gt.invalidate(3, 0);
  Tensor pred = Tensor::zeros({4, 4});
  for (double& v : pred.data()) v = u(rng);
  double base = l1_disparity_loss(pred, gt).value();
  pred.data()[gt.idx(1, 2)] += 100.0;
  pred.data()[gt.idx(3, 0)] -= 55.0;
  CHECK(l1_disparity_loss(pred, gt).value() == base);
}

TEST_CASE("l1_disparity_loss gradient is the signed mask") {
  DisparityMap gt(2, 2);
  gt.values = {1.0, 2.0, 3.0, 4.0};
  gt.invalidate(1, 1);
  Tensor pred = Tensor::from({2, 2}, {2.0, 1.0, 3.5, 9.0}, true);
  ad::Tape tape;
  tape.backward(l1_disparity_loss(pred, gt));
  CHECK(pred.grad()[0] == doctest::Approx(1.0 / 3.0));   // pred > gt
  CHECK(pred.grad()[1] == doctest::Approx(-1.0 / 3.0));  // pred < gt
  CHECK(pred.grad()[3] == 0.0);                          // unlabeled
}

TEST_CASE("lr_schedule follows the stage decay rules") {
  TrainConfig s1;
  s1.stage = 1;
  s1.base_lr = 0.01;
  s1.lr_decay_every = 5;
  CHECK(lr_schedule(s1, 0) == 0.01);
  CHECK(lr_schedule(s1, 4) == 0.01);
  CHECK(lr_schedule(s1, 5) == doctest::Approx(0.001));
  CHECK(lr_schedule(s1, 14) == doctest::Approx(0.0001));

  TrainConfig s2;
  s2.stage = 2;
  s2.base_lr = 0.01;
  s2.lr_decay_every = 10;
  CHECK(lr_schedule(s2, 10) == doctest::Approx(0.001));
  for (int e = 1; e < 30; ++e) CHECK(lr_schedule(s2, e) <= lr_schedule(s2, e - 1));
}

static std::vector<model::ParamRef> single_param(Tensor t) {
  return {{"p", model::ParamGroup::Head, std::move(t)}};
}

TEST_CASE("sgd momentum hand cases") {
  auto all = [](const model::ParamRef&) { return true; };

  // momentum 0, lr 1, g=1 at p=0 -> p=-1
  Tensor p = Tensor::from({1}, {0.0}, true);
  p.grad()[0] = 1.0;
  SgdMomentum plain(0.0);
  auto params = single_param(p);
  plain.step(params, all, 1.0);
  CHECK(p.data()[0] == -1.0);

  // lr 0 leaves parameters unchanged (velocity still accumulates)
  Tensor q = Tensor::from({1}, {0.4}, true);
  q.grad()[0] = 3.0;
  SgdMomentum m(0.5);
  auto qp = single_param(q);
  m.step(qp, all, 0.0);
  CHECK(q.data()[0] == 0.4);

  // two steps, momentum 0.9, g=1, lr 1: v=1 then v=1.9 -> p=-2.9
  Tensor r = Tensor::from({1}, {0.0}, true);
  SgdMomentum mom(0.9);
  auto rp = single_param(r);
  r.grad()[0] = 1.0;
  mom.step(rp, all, 1.0);
  r.zero_grad();
  r.grad()[0] = 1.0;
  mom.step(rp, all, 1.0);
  CHECK(r.data()[0] == doctest::Approx(-2.9));

  CHECK_THROWS_AS(SgdMomentum(1.0), ad::ContractError);
  CHECK_THROWS_AS(SgdMomentum(-0.1), ad::ContractError);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  cfg.validate();
  cfg.stage = 3;
  CHECK_THROWS_AS(cfg.validate(), ad::ConfigError);
  cfg.stage = 2;
  cfg.steps = 1;
  CHECK_THROWS_AS(cfg.validate(), ad::ConfigError);
  cfg.steps = 5;
  cfg.decay_factor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ad::ConfigError);
}

static std::vector<PreparedSample> tiny_dataset(int n, int d_max,
                                                std::uint64_t seed0) {
  io::SceneParams p;
  p.height = 16;
  p.width = 16;
  p.d_max = d_max;
  p.d_bg = 2;
  p.rect_count = 1;
  p.rect_d_min = 4;
  p.rect_d_max = 6;
  std::vector<PreparedSample> out;
  for (int i = 0; i < n; ++i)
    out.push_back(prepare_sample(io::generate_sample(p, seed0 + i), d_max, 3));
  return out;
}

static model::LrcrWeights tiny_model(int d_max) {
  model::ModelConfig cfg;
  cfg.d_max = d_max;
  cfg.height = 16;
  cfg.width = 16;
  return model::LrcrWeights::init(cfg, 42);
}

static std::vector<double> snapshot(model::LrcrWeights& w,
                                    std::initializer_list<model::ParamGroup> groups) {
  std::vector<double> out;
  for (auto& p : model::parameters(w))
    for (auto g : groups)
      if (p.group == g)
        out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

TEST_CASE("train_stage1: freeze audit and loss decrease") {
  const int d_max = 8;
  auto data = tiny_dataset(4, d_max, 50);
  auto w = tiny_model(d_max);
  auto frozen_before = snapshot(w, {model::ParamGroup::HiddenConv,
                                    model::ParamGroup::Peephole,
                                    model::ParamGroup::Branch});
  auto trained_before = snapshot(w, {model::ParamGroup::InputConv,
                                     model::ParamGroup::Head});
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.epochs = 5;
  cfg.lr_decay_every = 5;
  auto log = train_stage1(data, {}, w, cfg);
  REQUIRE(log.size() == 5);
  CHECK(log.back().train_loss < log.front().train_loss);
  CHECK(snapshot(w, {model::ParamGroup::HiddenConv, model::ParamGroup::Peephole,
                     model::ParamGroup::Branch}) == frozen_before);
  CHECK(snapshot(w, {model::ParamGroup::InputConv, model::ParamGroup::Head}) !=
        trained_before);
}

TEST_CASE("train_stage1: lr 0 leaves every weight untouched") {
  const int d_max = 8;
  auto data = tiny_dataset(1, d_max, 60);
  auto w = tiny_model(d_max);
  auto before = snapshot(w, {model::ParamGroup::InputConv, model::ParamGroup::Head});
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.epochs = 1;
  cfg.base_lr = 0.0;
  train_stage1(data, {}, w, cfg);
  CHECK(snapshot(w, {model::ParamGroup::InputConv, model::ParamGroup::Head}) ==
        before);
}

TEST_CASE("train_stage2: lr 0 reproduces the checkpoint; logs carry per-step EPE") {
  const int d_max = 8;
  auto data = tiny_dataset(2, d_max, 70);
  auto val = tiny_dataset(1, d_max, 80);
  auto w = tiny_model(d_max);
  auto before = snapshot(w, {model::ParamGroup::InputConv,
                             model::ParamGroup::HiddenConv,
                             model::ParamGroup::Peephole, model::ParamGroup::Head,
                             model::ParamGroup::Branch});
  TrainConfig cfg;
  cfg.stage = 2;
  cfg.epochs = 1;
  cfg.base_lr = 0.0;
  cfg.lr_decay_every = 10;
  cfg.steps = 2;
  auto log = train_stage2(data, val, w, cfg);
  CHECK(snapshot(w, {model::ParamGroup::InputConv, model::ParamGroup::HiddenConv,
                     model::ParamGroup::Peephole, model::ParamGroup::Head,
                     model::ParamGroup::Branch}) == before);
  REQUIRE(log.size() == 1);
  CHECK(log[0].val_epe.size() == 2);
}

TEST_CASE("train_stage2 decreases the training loss") {
  const int d_max = 8;
  auto data = tiny_dataset(3, d_max, 90);
  auto w = tiny_model(d_max);
  TrainConfig s1;
  s1.stage = 1;
  s1.epochs = 3;
  train_stage1(data, {}, w, s1);

  TrainConfig s2;
  s2.stage = 2;
  s2.epochs = 4;
  s2.lr_decay_every = 10;
  s2.steps = 2;
  auto log = train_stage2(data, {}, w, s2);
  CHECK(log.back().train_loss < log.front().train_loss);
}

TEST_CASE("training is deterministic for fixed seed and data order") {
  const int d_max = 8;
  auto data = tiny_dataset(2, d_max, 110);
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.epochs = 2;

  auto wa = tiny_model(d_max);
  auto wb = tiny_model(d_max);
  auto la = train_stage1(data, {}, wa, cfg);
  auto lb = train_stage1(data, {}, wb, cfg);
  for (std::size_t i = 0; i < la.size(); ++i)
    CHECK(la[i].train_loss == lb[i].train_loss);
  auto pa = model::parameters(wa);
  auto pb = model::parameters(wb);
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].tensor.data() == pb[i].tensor.data());
}

TEST_CASE("stage-2 first-step loss matches stage 1 for identical weights") {
  const int d_max = 8;
  auto data = tiny_dataset(1, d_max, 120);
  auto wa = tiny_model(d_max);
  auto wb = tiny_model(d_max);

  TrainConfig s1;
  s1.stage = 1;
  s1.epochs = 1;
  s1.base_lr = 0.0;
  double stage1_loss = train_stage1(data, {}, wa, s1).front().train_loss;

  // identical weights, T=2, lr 0: the unweighted sum's t=1 term is stage 1's loss
  ad::Tape tape;
  auto outs = model::lrcr_unroll(wb, data[0].cost_left, data[0].cost_right, 2);
  double t1 = ad::add(l1_disparity_loss(outs[0].disp_left, data[0].gt_left),
                      l1_disparity_loss(outs[0].disp_right, data[0].gt_right))
                  .value();
  tape.clear();
  CHECK(t1 == doctest::Approx(stage1_loss).epsilon(1e-12));
}

TEST_CASE("write_train_log emits one CSV row per epoch") {
  std::vector<EpochLog> log(2);
  log[0] = {0, 2, 0.01, 1.5, {2.0, 1.8}};
  log[1] = {1, 2, 0.01, 1.2, {1.9, 1.6}};
  write_train_log(log, "/tmp/train_log.csv");
  std::ifstream f("/tmp/train_log.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,stage,lr,train_loss,val_epe_t1,val_epe_t2");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("training rejects an empty dataset") {
  auto w = tiny_model(8);
  TrainConfig cfg;
  cfg.stage = 1;
  CHECK_THROWS_AS(train_stage1({}, {}, w, cfg), ad::ContractError);
}
