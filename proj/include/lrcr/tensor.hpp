#pragma once

// Minimal dense-tensor library with reverse-mode automatic differentiation.
// Tensors are 64-bit float, row-major, immutable once produced by an op.
// Ops record themselves on the thread's active Tape; backward() replays the
// tape in reverse and accumulates gradients into every requires_grad leaf.

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrcr::ad {

using Shape = std::vector<int>;

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  // set for op outputs while they sit on a tape
  std::function<void()> backprop;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value handle with shared payload. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  std::size_t size() const { return p_->data.size(); }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  bool requires_grad() const { return p_->requires_grad; }

  std::vector<double>& data() { return p_->data; }
  const std::vector<double>& data() const { return p_->data; }
  std::vector<double>& grad() {
    p_->ensure_grad();
    return p_->grad;
  }
  void zero_grad() { p_->grad.assign(p_->data.size(), 0.0); }

  double value() const;  // scalar tensors only

  // Data copy that is disconnected from any tape.
  Tensor detached() const;

  std::shared_ptr<TensorImpl> impl() const { return p_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorImpl> p_;
  friend class Tape;
  friend Tensor make_node(Shape, std::vector<double>, bool);
};

// Records op outputs in creation order (topological by construction).
// Constructing a Tape makes it the active tape on this thread; destruction
// restores the previous one. Independent tapes may live on separate threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  static Tape* active();
  void record(const Tensor& t) { nodes_.push_back(t.impl()); }

  // Reverse-topological gradient accumulation from a scalar loss.
  // Clears the tape afterwards; leaf gradients survive.
  void backward(const Tensor& scalar_loss);

 private:
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
  Tape* prev_ = nullptr;
};

void backward(const Tensor& scalar_loss);

// ---- primitive ops (all record on the active tape) ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int padding);

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
// 1/sqrt(x + eps); smooth for x >= 0, used for cosine normalization.
Tensor rsqrt_eps(const Tensor& x, double eps);

// [D,H,W] -> [D,H,W], per-pixel softmax over the leading dimension,
// stabilized by max subtraction.
Tensor softmax_over_disparity(const Tensor& scores);

Tensor sum(const Tensor& x);                       // -> scalar
Tensor channel_sum(const Tensor& x);               // [C,H,W] -> [H,W]
Tensor concat_channels(const Tensor& a, const Tensor& b);  // along dim 0
Tensor stack_maps(const std::vector<Tensor>& maps);        // n x [H,W] -> [n,H,W]
// [C,H,W] -> [C,H,W]: out(c,y,x) = in(c,y,x+dx), zero where out of bounds.
Tensor shift_x(const Tensor& x, int dx);

// out[i] = index[i] >= 0 ? flat(src)[index[i]] : 0. The index table is fixed
// routing; gradients scatter back through it to the gathered source entries.
Tensor gather_pixels(const Tensor& src, const std::vector<std::ptrdiff_t>& index);

// ---- gradient verification ----

// Compares the analytic gradient of `f` at `point` against central finite
// differences. Returns max over coordinates of
// |analytic - central| / max(1e-8, |central|).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double step);

// Same check restricted to a subset of coordinates of `param`; `f` closes
// over `param` (useful for auditing big weight tensors by sampling).
double finite_diff_check_coords(const std::function<Tensor()>& f,
                                Tensor& param,
                                const std::vector<std::size_t>& coords,
                                double step);

}  // namespace lrcr::ad
