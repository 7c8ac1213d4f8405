#include "lrcr/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace lrcr::ad {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

static void check_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("non-finite value in tensor data");
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto p = std::make_shared<TensorImpl>();
  p->data.assign(shape_size(shape), 0.0);
  p->shape = std::move(shape);
  p->requires_grad = requires_grad;
  return Tensor(std::move(p));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw NumericError("non-finite fill value");
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  check_finite(data);
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(shape);
  p->data = std::move(data);
  p->requires_grad = requires_grad;
  return Tensor(std::move(p));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::value() const {
  if (!p_->shape.empty())
    throw ContractError("value() requires a scalar tensor, got " + shape_str(p_->shape));
  return p_->data[0];
}

Tensor Tensor::detached() const {
  auto p = std::make_shared<TensorImpl>();
  p->shape = p_->shape;
  p->data = p_->data;
  p->requires_grad = false;
  return Tensor(std::move(p));
}

// ---- tape ----

static thread_local Tape* g_active_tape = nullptr;

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = prev_; }
Tape* Tape::active() { return g_active_tape; }
void Tape::clear() {
  for (auto& n : nodes_) n->backprop = nullptr;
  nodes_.clear();
}

void Tape::backward(const Tensor& scalar_loss) {
  if (!scalar_loss.defined() || !scalar_loss.shape().empty())
    throw ContractError("backward requires a scalar loss");
  if (nodes_.empty()) throw ContractError("backward on empty tape");
  auto loss = scalar_loss.impl();
  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
  clear();
}

void backward(const Tensor& scalar_loss) {
  if (!Tape::active()) throw ContractError("backward without an active tape");
  Tape::active()->backward(scalar_loss);
}

// Creates an op output. Records on the active tape (and keeps the backprop
// closure) only when some input requires grad.
static Tensor make_output(Shape shape, std::vector<double> data, bool rg,
                          std::function<void()> backprop) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), rg);
  if (rg && Tape::active()) {
    out.impl()->backprop = std::move(backprop);
    Tape::active()->record(out);
  }
  return out;
}

// ---- conv2d ----

// im2col: col[(ci*k*k + ky*k + kx) * (Ho*Wo) + y*Wo + x] = padded input.
static void im2col(const double* in, int cin, int h, int w, int k, int pad,
                   int ho, int wo, double* col) {
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + ((static_cast<std::size_t>(ci) * k * k + ky * k + kx) *
                             ho * wo);
        for (int y = 0; y < ho; ++y) {
          int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::memset(dst + static_cast<std::size_t>(y) * wo, 0,
                        sizeof(double) * wo);
            continue;
          }
          const double* src = in + (static_cast<std::size_t>(ci) * h + sy) * w;
          for (int x = 0; x < wo; ++x) {
            int sx = x + kx - pad;
            dst[static_cast<std::size_t>(y) * wo + x] =
                (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

static void col2im_add(const double* col, int cin, int h, int w, int k, int pad,
                       int ho, int wo, double* grad_in) {
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + ((static_cast<std::size_t>(ci) * k * k + ky * k + kx) *
                                   ho * wo);
        for (int y = 0; y < ho; ++y) {
          int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          double* dst = grad_in + (static_cast<std::size_t>(ci) * h + sy) * w;
          for (int x = 0; x < wo; ++x) {
            int sx = x + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[static_cast<std::size_t>(y) * wo + x];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int padding) {
  if (input.rank() != 3) throw DimensionError("conv2d input must be [C,H,W]");
  if (kernel.rank() != 4) throw DimensionError("conv2d kernel must be [Co,Ci,k,k]");
  if (bias.rank() != 1) throw DimensionError("conv2d bias must be [Co]");
  const int cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int cout = kernel.shape()[0], k = kernel.shape()[2];
  if (kernel.shape()[1] != cin)
    throw DimensionError("conv2d kernel input channels " +
                         std::to_string(kernel.shape()[1]) + " != " + std::to_string(cin));
  if (kernel.shape()[3] != k) throw DimensionError("conv2d kernel must be square");
  if (k % 2 == 0) throw ConfigError("conv2d kernel size must be odd");
  if (bias.shape()[0] != cout) throw DimensionError("conv2d bias/kernel channel mismatch");
  if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
  const int ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  if (ho < 1 || wo < 1) throw DimensionError("conv2d output would be empty");

  const std::size_t npix = static_cast<std::size_t>(ho) * wo;
  const std::size_t krows = static_cast<std::size_t>(cin) * k * k;
  std::vector<double> out(static_cast<std::size_t>(cout) * npix);

  if (k == 1 && padding == 0) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, (int)npix, cin,
                1.0, kernel.data().data(), cin, input.data().data(), (int)npix,
                0.0, out.data(), (int)npix);
  } else {
    std::vector<double> col(krows * npix);
    im2col(input.data().data(), cin, h, w, k, padding, ho, wo, col.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, (int)npix,
                (int)krows, 1.0, kernel.data().data(), (int)krows, col.data(),
                (int)npix, 0.0, out.data(), (int)npix);
  }
  for (int co = 0; co < cout; ++co) {
    double b = bias.data()[co];
    double* dst = out.data() + static_cast<std::size_t>(co) * npix;
    for (std::size_t i = 0; i < npix; ++i) dst[i] += b;
  }

  bool rg = input.requires_grad() || kernel.requires_grad() || bias.requires_grad();
  auto xi = input.impl();
  auto ki = kernel.impl();
  auto bi = bias.impl();
  Tensor result = make_output({cout, ho, wo}, std::move(out), rg,
                              std::function<void()>());
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [xi, ki, bi, oi, cin, h, w, k, padding, cout, ho, wo, npix,
                    krows]() {
      const double* gout = oi->grad.data();
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          const double* g = gout + static_cast<std::size_t>(co) * npix;
          for (std::size_t i = 0; i < npix; ++i) s += g[i];
          bi->grad[co] += s;
        }
      }
      const bool need_x = xi->requires_grad || xi->backprop != nullptr;
      const bool one_by_one = (k == 1 && padding == 0);
      std::vector<double> col;
      const double* colp = nullptr;
      if (!one_by_one) {
        col.resize(krows * npix);
        im2col(xi->data.data(), cin, h, w, k, padding, ho, wo, col.data());
        colp = col.data();
      } else {
        colp = xi->data.data();
      }
      if (ki->requires_grad) {
        ki->ensure_grad();
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, (int)krows,
                    (int)npix, 1.0, gout, (int)npix, colp, (int)npix, 1.0,
                    ki->grad.data(), (int)krows);
      }
      if (need_x) {
        xi->ensure_grad();
        if (one_by_one) {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, cin, (int)npix,
                      cout, 1.0, ki->data.data(), cin, gout, (int)npix, 1.0,
                      xi->grad.data(), (int)npix);
        } else {
          std::vector<double> gcol(krows * npix);
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)krows,
                      (int)npix, cout, 1.0, ki->data.data(), (int)krows, gout,
                      (int)npix, 0.0, gcol.data(), (int)npix);
          col2im_add(gcol.data(), cin, h, w, k, padding, ho, wo, xi->grad.data());
        }
      }
    };
  }
  return result;
}

// ---- pointwise ----

static double sigmoid1(double x) {
  // branch-stable: never exponentiates a large positive argument
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

template <class Fwd, class Bwd>
static Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x.data()[i]);
  bool rg = x.requires_grad();
  auto xi = x.impl();
  Tensor result = make_output(x.shape(), std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [xi, oi, bwd]() {
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += oi->grad[i] * bwd(xi->data[i], oi->data[i]);
    };
  }
  return result;
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, sigmoid1, [](double, double y) { return y * (1.0 - y); });
}
Tensor tanh_op(const Tensor& x) {
  return unary_op(x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}
Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}
Tensor abs_op(const Tensor& x) {
  return unary_op(x, [](double v) { return std::fabs(v); },
                  [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}
Tensor scale(const Tensor& x, double s) {
  return unary_op(x, [s](double v) { return v * s; },
                  [s](double, double) { return s; });
}
Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(x, [s](double v) { return v + s; },
                  [](double, double) { return 1.0; });
}
Tensor rsqrt_eps(const Tensor& x, double eps) {
  if (eps <= 0.0) throw ConfigError("rsqrt_eps: eps must be > 0");
  return unary_op(x, [eps](double v) { return 1.0 / std::sqrt(v + eps); },
                  [eps](double v, double) {
                    double t = v + eps;
                    return -0.5 / (t * std::sqrt(t));
                  });
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class Fwd, class BwdA, class BwdB>
static Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                        Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  check_same_shape(a, b, name);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  bool rg = a.requires_grad() || b.requires_grad();
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor result = make_output(a.shape(), std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    bool need_a = a.requires_grad(), need_b = b.requires_grad();
    oi->backprop = [ai, bi, oi, bwd_a, bwd_b, need_a, need_b]() {
      if (need_a) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->data.size(); ++i)
          ai->grad[i] += oi->grad[i] * bwd_a(ai->data[i], bi->data[i]);
      }
      if (need_b) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->data.size(); ++i)
          bi->grad[i] += oi->grad[i] * bwd_b(ai->data[i], bi->data[i]);
      }
    };
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; },
                   [](double, double) { return 1.0; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; },
                   [](double, double) { return -1.0; });
}
Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "hadamard", [](double x, double y) { return x * y; },
                   [](double, double y) { return y; },
                   [](double x, double) { return x; });
}

// ---- softmax over disparity ----

Tensor softmax_over_disparity(const Tensor& scores) {
  if (scores.rank() != 3) throw DimensionError("softmax input must be [D,H,W]");
  for (double v : scores.data())
    if (!std::isfinite(v)) throw NumericError("non-finite score in softmax input");
  const int d = scores.shape()[0];
  const std::size_t npix =
      static_cast<std::size_t>(scores.shape()[1]) * scores.shape()[2];
  std::vector<double> out(scores.size());
  const double* in = scores.data().data();
  for (std::size_t p = 0; p < npix; ++p) {
    double mx = in[p];
    for (int j = 1; j < d; ++j) mx = std::max(mx, in[j * npix + p]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      double e = std::exp(in[j * npix + p] - mx);
      out[j * npix + p] = e;
      z += e;
    }
    for (int j = 0; j < d; ++j) out[j * npix + p] /= z;
  }
  bool rg = scores.requires_grad();
  auto si = scores.impl();
  Tensor result = make_output(scores.shape(), std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [si, oi, d, npix]() {
      si->ensure_grad();
      for (std::size_t p = 0; p < npix; ++p) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j)
          dot += oi->grad[j * npix + p] * oi->data[j * npix + p];
        for (int j = 0; j < d; ++j)
          si->grad[j * npix + p] +=
              oi->data[j * npix + p] * (oi->grad[j * npix + p] - dot);
      }
    };
  }
  return result;
}

// ---- reductions / reshaping ----

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  bool rg = x.requires_grad();
  auto xi = x.impl();
  Tensor result = make_output({}, {s}, rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [xi, oi]() {
      xi->ensure_grad();
      double g = oi->grad[0];
      for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += g;
    };
  }
  return result;
}

Tensor channel_sum(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("channel_sum input must be [C,H,W]");
  const int c = x.shape()[0];
  const std::size_t npix = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  std::vector<double> out(npix, 0.0);
  for (int j = 0; j < c; ++j)
    for (std::size_t p = 0; p < npix; ++p) out[p] += x.data()[j * npix + p];
  bool rg = x.requires_grad();
  auto xi = x.impl();
  Tensor result =
      make_output({x.shape()[1], x.shape()[2]}, std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [xi, oi, c, npix]() {
      xi->ensure_grad();
      for (int j = 0; j < c; ++j)
        for (std::size_t p = 0; p < npix; ++p) xi->grad[j * npix + p] += oi->grad[p];
    };
  }
  return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw DimensionError("concat_channels operands must be [C,H,W]");
  if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
    throw DimensionError("concat_channels spatial mismatch");
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  bool rg = a.requires_grad() || b.requires_grad();
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor result = make_output({a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]},
                              std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    std::size_t na = a.size();
    bool need_a = a.requires_grad(), need_b = b.requires_grad();
    oi->backprop = [ai, bi, oi, na, need_a, need_b]() {
      if (need_a) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
      }
      if (need_b) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->data.size(); ++i)
          bi->grad[i] += oi->grad[na + i];
      }
    };
  }
  return result;
}

Tensor stack_maps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ContractError("stack_maps: empty input");
  const int h = maps[0].shape()[0], w = maps[0].shape()[1];
  std::vector<double> out;
  out.reserve(maps.size() * maps[0].size());
  bool rg = false;
  for (const auto& m : maps) {
    if (m.rank() != 2 || m.shape()[0] != h || m.shape()[1] != w)
      throw DimensionError("stack_maps: all maps must be [H,W] with equal shape");
    out.insert(out.end(), m.data().begin(), m.data().end());
    rg = rg || m.requires_grad();
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& m : maps) impls.push_back(m.impl());
  Tensor result = make_output({static_cast<int>(maps.size()), h, w},
                              std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    std::size_t npix = static_cast<std::size_t>(h) * w;
    oi->backprop = [impls, oi, npix]() {
      for (std::size_t j = 0; j < impls.size(); ++j) {
        if (!impls[j]->requires_grad && !impls[j]->backprop) continue;
        impls[j]->ensure_grad();
        for (std::size_t p = 0; p < npix; ++p)
          impls[j]->grad[p] += oi->grad[j * npix + p];
      }
    };
  }
  return result;
}

Tensor shift_x(const Tensor& x, int dx) {
  if (x.rank() != 3) throw DimensionError("shift_x input must be [C,H,W]");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out(x.size(), 0.0);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const double* src = x.data().data() + (static_cast<std::size_t>(ci) * h + y) * w;
      double* dst = out.data() + (static_cast<std::size_t>(ci) * h + y) * w;
      for (int xx = 0; xx < w; ++xx) {
        int sx = xx + dx;
        if (sx >= 0 && sx < w) dst[xx] = src[sx];
      }
    }
  bool rg = x.requires_grad();
  auto xi = x.impl();
  Tensor result = make_output(x.shape(), std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    oi->backprop = [xi, oi, c, h, w, dx]() {
      xi->ensure_grad();
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
          double* gsrc = xi->grad.data() + (static_cast<std::size_t>(ci) * h + y) * w;
          const double* gdst =
              oi->grad.data() + (static_cast<std::size_t>(ci) * h + y) * w;
          for (int xx = 0; xx < w; ++xx) {
            int sx = xx + dx;
            if (sx >= 0 && sx < w) gsrc[sx] += gdst[xx];
          }
        }
    };
  }
  return result;
}

Tensor gather_pixels(const Tensor& src, const std::vector<std::ptrdiff_t>& index) {
  if (index.size() != src.size())
    throw DimensionError("gather_pixels: index table must match source size");
  std::vector<double> out(index.size(), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= src.size())
      throw DimensionError("gather_pixels: index out of range");
    out[i] = src.data()[index[i]];
  }
  bool rg = src.requires_grad();
  auto si = src.impl();
  Tensor result = make_output(src.shape(), std::move(out), rg, nullptr);
  if (rg && Tape::active()) {
    auto oi = result.impl();
    auto idx = index;
    oi->backprop = [si, oi, idx = std::move(idx)]() {
      si->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) si->grad[idx[i]] += oi->grad[i];
    };
  }
  return result;
}

// ---- finite differences ----

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double step) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be > 0");
  Tensor p = Tensor::from(point.shape(), point.data(), true);
  {
    Tape tape;
    Tensor out = f(p);
    if (!out.shape().empty())
      throw ContractError("finite_diff_check: function output must be scalar");
    if (tape.size() > 0) tape.backward(out);  // constant f records nothing
  }
  const std::vector<double> analytic = p.grad();

  Tensor probe = point.detached();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double orig = probe.data()[i];
    double fp, fm;
    {
      Tape scratch;
      probe.data()[i] = orig + step;
      fp = f(probe).value();
      probe.data()[i] = orig - step;
      fm = f(probe).value();
      scratch.clear();
    }
    probe.data()[i] = orig;
    double central = (fp - fm) / (2.0 * step);
    double rel = std::fabs(analytic[i] - central) / std::max(1e-8, std::fabs(central));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

double finite_diff_check_coords(const std::function<Tensor()>& f, Tensor& param,
                                const std::vector<std::size_t>& coords,
                                double step) {
  if (step <= 0.0) throw ContractError("finite_diff_check_coords: step must be > 0");
  param.zero_grad();
  {
    Tape tape;
    Tensor out = f();
    if (!out.shape().empty())
      throw ContractError("finite_diff_check_coords: function output must be scalar");
    tape.backward(out);
  }
  const std::vector<double> analytic = param.grad();

  double max_rel = 0.0;
  for (std::size_t i : coords) {
    double orig = param.data()[i];
    double fp, fm;
    {
      Tape scratch;
      param.data()[i] = orig + step;
      fp = f().value();
      param.data()[i] = orig - step;
      fm = f().value();
      scratch.clear();
    }
    param.data()[i] = orig;
    double central = (fp - fm) / (2.0 * step);
    double rel = std::fabs(analytic[i] - central) / std::max(1e-8, std::fabs(central));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace lrcr::ad
