#pragma once

// The LRCR model: two parallel stacked peephole-ConvLSTM towers that read
// (cost volume + previous attention map), emit per-view disparities through
// a differentiable soft-argmin, compare them across views, and feed the
// resulting error maps back as soft attention for the next recurrent step.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrcr/cost_volume.hpp"
#include "lrcr/geometry.hpp"
#include "lrcr/image.hpp"
#include "lrcr/tensor.hpp"

namespace lrcr::model {

using ad::Tensor;

// One ConvLSTM cell. Input/hidden transforms are 3x3 convolutions with
// padding 1; peephole weights are elementwise per-channel-per-pixel maps.
struct ConvLstmCell {
  Tensor w_xi, w_xf, w_xo, w_xc;  // [C, C_in, 3, 3]
  Tensor w_hi, w_hf, w_ho, w_hc;  // [C, C, 3, 3]
  Tensor w_ci, w_cf, w_co;        // [C, H, W]
  Tensor b_i, b_f, b_o, b_c;      // [C]

  int channels() const { return w_xi.shape()[0]; }
  int in_channels() const { return w_xi.shape()[1]; }
};

struct ConvLstmState {
  Tensor h;  // [C,H,W]
  Tensor c;  // [C,H,W]
};

struct TowerWeights {
  std::vector<ConvLstmCell> cells;  // 4 cells, channel plan [D,2D,2D,D]
  Tensor head_w1, head_b1;          // 1x1 convs, D -> D -> D -> D
  Tensor head_w2, head_b2;
  Tensor head_w3, head_b3;
};

struct BranchWeights {
  Tensor w1, b1;  // 3x3, 2 -> hidden
  Tensor w2, b2;  // 3x3, hidden -> 1
};

struct ModelConfig {
  int d_max = 16;
  int height = 64;
  int width = 64;
  bool share_towers = true;
  int branch_channels = 8;
};

struct LrcrWeights {
  ModelConfig config;
  std::vector<TowerWeights> towers;  // 1 if shared, else {left, right}
  BranchWeights branch;

  static LrcrWeights init(const ModelConfig& cfg, std::uint64_t seed);

  TowerWeights& tower(cost::View v) {
    return (config.share_towers || v == cost::View::Left) ? towers[0] : towers[1];
  }
};

enum class ParamGroup { InputConv, HiddenConv, Peephole, Head, Branch };

struct ParamRef {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

std::vector<ParamRef> parameters(LrcrWeights& w);

// Eq.-style single cell update: peephole gates, C_t = f.C + i.tanh(...),
// H_t = o.tanh(C_t).
ConvLstmState convlstm_step(const ConvLstmCell& cell, const Tensor& x,
                            const ConvLstmState& prev);

ConvLstmState zero_state(int channels, int height, int width);

// Four stacked cells over concat(cost, err), then three 1x1 head convs
// (tanh between, linear last) giving a D-channel cost tensor; the returned
// scores are its negation.
struct TowerOutput {
  Tensor scores;  // [D,H,W]
  std::vector<ConvLstmState> states;
};
TowerOutput tower_forward(TowerWeights& tower, const Tensor& cost,
                          const Tensor& err,
                          const std::vector<ConvLstmState>& states);

// Probability-weighted mean disparity (softmax over negated costs). [H,W].
Tensor soft_argmin(const Tensor& scores);

DisparityMap to_disparity_map(const Tensor& disp);

// Two 3x3 convs (tanh between) + sigmoid over the concatenation of the
// view's own disparity and the opposite-view induced disparity, both
// pre-scaled by 1/d_max. Output in (0,1), shape [H,W]. Trains only through
// its effect on later-step disparity losses.
Tensor comparative_branch(BranchWeights& branch, const Tensor& d_view_scaled,
                          const Tensor& d_induced_scaled);

struct StepOutput {
  Tensor disp_left, disp_right;  // [H,W], differentiable
  Tensor err_left, err_right;    // [H,W], attention maps in (0,1)
  geom::WarpResult induced_left, induced_right;
};

// Full recurrence. States and the t=1 attention maps start at zero; the
// opposite-view induced maps are produced by forward warping of detached
// disparities (no gradient through the pixel re-indexing).
std::vector<StepOutput> lrcr_unroll(LrcrWeights& w, const cost::CostVolume& cost_left,
                                    const cost::CostVolume& cost_right, int steps);

// Versioned binary checkpoint: magic, config block, then each parameter as
// (name length, name, rank, extents, f64 little-endian data).
void save_checkpoint(LrcrWeights& w, const std::string& path);
LrcrWeights load_checkpoint(const std::string& path);

}  // namespace lrcr::model
