#pragma once

// Two-stage optimization: stage 1 trains the non-recurrent tower (zero
// states, restricted weight set), stage 2 initializes from it and trains
// the full T-step recurrence with per-step, per-view L1 losses.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lrcr/data_io.hpp"
#include "lrcr/model.hpp"

namespace lrcr::train {

struct TrainConfig {
  int stage = 1;
  int epochs = 15;
  double base_lr = 0.01;
  int lr_decay_every = 5;  // stage 1: 5, stage 2: 10
  double decay_factor = 10.0;
  int steps = 5;  // recurrent steps, stage 2
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

// Mean |pred - gt| over gt-valid pixels; differentiable w.r.t. pred.
ad::Tensor l1_disparity_loss(const ad::Tensor& pred, const DisparityMap& gt);

double lr_schedule(const TrainConfig& cfg, int epoch);

// SGD with momentum: v <- momentum*v + g; p <- p - lr*v.
// Velocity buffers persist across steps, keyed by parameter identity.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {
    if (momentum < 0.0 || momentum >= 1.0)
      throw ad::ContractError("momentum must be in [0,1)");
  }
  void step(std::vector<model::ParamRef>& params,
            const std::function<bool(const model::ParamRef&)>& trainable,
            double lr);

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;  // aligned with params order
};

// One CSV row per epoch: epoch,stage,lr,train_loss,val_epe_t1..tT.
struct EpochLog {
  int epoch;
  int stage;
  double lr;
  double train_loss;
  std::vector<double> val_epe;  // per recurrent step, left view
};

void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

// Per-sample normalized census cost volumes, computed once.
struct PreparedSample {
  cost::CostVolume cost_left, cost_right;
  DisparityMap gt_left, gt_right;
};
PreparedSample prepare_sample(const io::StereoSample& s, int d_max, int census_window);

// Stage 1: T=1, zero states and attention; only input-to-state weights,
// biases and the head are updated.
std::vector<EpochLog> train_stage1(const std::vector<PreparedSample>& train_data,
                                   const std::vector<PreparedSample>& val_data,
                                   model::LrcrWeights& weights,
                                   const TrainConfig& cfg);

// Stage 2: full unrolled recurrence from a stage-1 checkpoint; all
// parameters trainable, per-step losses summed unweighted.
std::vector<EpochLog> train_stage2(const std::vector<PreparedSample>& train_data,
                                   const std::vector<PreparedSample>& val_data,
                                   model::LrcrWeights& weights,
                                   const TrainConfig& cfg);

}  // namespace lrcr::train
