#include "lrcr/training.hpp"

#include <cmath>
#include <fstream>

#include "lrcr/evaluation.hpp"

namespace lrcr::train {

using ad::Tensor;

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ad::ConfigError("stage must be 1 or 2");
  if (epochs < 1) throw ad::ConfigError("epochs must be >= 1");
  if (base_lr < 0.0) throw ad::ConfigError("base_lr must be >= 0");
  if (decay_factor <= 1.0) throw ad::ConfigError("decay_factor must be > 1");
  if (lr_decay_every < 1) throw ad::ConfigError("lr_decay_every must be >= 1");
  if (stage == 2 && steps < 2) throw ad::ConfigError("stage 2 requires steps >= 2");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ad::ConfigError("momentum must be in [0,1)");
}

Tensor l1_disparity_loss(const Tensor& pred, const DisparityMap& gt) {
  if (pred.rank() != 2 || pred.shape()[0] != gt.height || pred.shape()[1] != gt.width)
    throw ad::DimensionError("l1_disparity_loss: shape mismatch");
  std::size_t n = gt.count_valid();
  if (n == 0) throw ad::ContractError("l1_disparity_loss: no labeled pixels");
  std::vector<double> mask(gt.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = gt.valid[i] ? 1.0 : 0.0;
  Tensor gt_t = Tensor::from({gt.height, gt.width}, gt.values);
  Tensor mask_t = Tensor::from({gt.height, gt.width}, std::move(mask));
  return ad::scale(ad::sum(ad::hadamard(ad::abs_op(ad::sub(pred, gt_t)), mask_t)),
                   1.0 / static_cast<double>(n));
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ad::ContractError("lr_schedule: epoch must be >= 0");
  return cfg.base_lr / std::pow(cfg.decay_factor, epoch / cfg.lr_decay_every);
}

void SgdMomentum::step(std::vector<model::ParamRef>& params,
                       const std::function<bool(const model::ParamRef&)>& trainable,
                       double lr) {
  if (lr < 0.0) throw ad::ContractError("sgd step: lr must be >= 0");
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      velocity_[i].assign(params[i].tensor.size(), 0.0);
  }
  if (velocity_.size() != params.size())
    throw ad::DimensionError("sgd step: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable(params[i])) continue;
    auto& p = params[i].tensor;
    auto& v = velocity_[i];
    if (v.size() != p.size()) throw ad::DimensionError("sgd step: shape mismatch");
    const auto& g = p.grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p.data()[j] -= lr * v[j];
    }
  }
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::size_t steps = log.empty() ? 0 : log.front().val_epe.size();
  f << "epoch,stage,lr,train_loss";
  for (std::size_t t = 1; t <= steps; ++t) f << ",val_epe_t" << t;
  f << "\n";
  for (const auto& e : log) {
    f << e.epoch << "," << e.stage << "," << e.lr << "," << e.train_loss;
    for (double v : e.val_epe) f << "," << v;
    f << "\n";
  }
}

PreparedSample prepare_sample(const io::StereoSample& s, int d_max,
                              int census_window) {
  auto [cl, cr] = cost::census_cost_volume(s.left, s.right, d_max, census_window);
  PreparedSample p;
  p.cost_left = cost::normalize_cost_volume(cl);
  p.cost_right = cost::normalize_cost_volume(cr);
  p.gt_left = s.gt_left;
  p.gt_right = s.gt_right;
  return p;
}

static std::vector<double> validation_epe(model::LrcrWeights& weights,
                                          const std::vector<PreparedSample>& val,
                                          int steps) {
  if (val.empty()) return {};
  std::vector<double> abs_sum(steps, 0.0);
  std::vector<std::size_t> n(steps, 0);
  for (const auto& s : val) {
    auto outs = model::lrcr_unroll(weights, s.cost_left, s.cost_right, steps);
    for (int t = 0; t < steps; ++t) {
      DisparityMap pred = model::to_disparity_map(outs[t].disp_left);
      for (std::size_t i = 0; i < s.gt_left.values.size(); ++i) {
        if (!s.gt_left.valid[i]) continue;
        abs_sum[t] += std::fabs(pred.values[i] - s.gt_left.values[i]);
        ++n[t];
      }
    }
  }
  std::vector<double> epe(steps);
  for (int t = 0; t < steps; ++t)
    epe[t] = n[t] ? abs_sum[t] / static_cast<double>(n[t]) : 0.0;
  return epe;
}

static std::vector<EpochLog> run_training(
    const std::vector<PreparedSample>& train_data,
    const std::vector<PreparedSample>& val_data, model::LrcrWeights& weights,
    const TrainConfig& cfg, int steps,
    const std::function<bool(const model::ParamRef&)>& trainable) {
  if (train_data.empty()) throw ad::ContractError("training: empty dataset");
  auto params = model::parameters(weights);
  SgdMomentum opt(cfg.momentum);
  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_schedule(cfg, epoch);
    double total = 0.0;
    for (const auto& s : train_data) {
      ad::Tape tape;
      auto outs = model::lrcr_unroll(weights, s.cost_left, s.cost_right, steps);
      Tensor loss;
      for (const auto& step : outs) {
        Tensor term = ad::add(l1_disparity_loss(step.disp_left, s.gt_left),
                              l1_disparity_loss(step.disp_right, s.gt_right));
        loss = loss.defined() ? ad::add(loss, term) : term;
      }
      total += loss.value();
      for (auto& p : params) p.tensor.zero_grad();
      tape.backward(loss);
      opt.step(params, trainable, lr);
    }
    EpochLog e;
    e.epoch = epoch;
    e.stage = cfg.stage;
    e.lr = lr;
    e.train_loss = total / static_cast<double>(train_data.size());
    e.val_epe = validation_epe(weights, val_data, steps);
    log.push_back(std::move(e));
  }
  return log;
}

std::vector<EpochLog> train_stage1(const std::vector<PreparedSample>& train_data,
                                   const std::vector<PreparedSample>& val_data,
                                   model::LrcrWeights& weights,
                                   const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 1) throw ad::ContractError("train_stage1: cfg.stage must be 1");
  auto trainable = [](const model::ParamRef& p) {
    return p.group == model::ParamGroup::InputConv ||
           p.group == model::ParamGroup::Head;
  };
  return run_training(train_data, val_data, weights, cfg, /*steps=*/1, trainable);
}

std::vector<EpochLog> train_stage2(const std::vector<PreparedSample>& train_data,
                                   const std::vector<PreparedSample>& val_data,
                                   model::LrcrWeights& weights,
                                   const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 2) throw ad::ContractError("train_stage2: cfg.stage must be 2");
  auto trainable = [](const model::ParamRef&) { return true; };
  return run_training(train_data, val_data, weights, cfg, cfg.steps, trainable);
}

}  // namespace lrcr::train
