#pragma once

// Shape-tagged double tensors with a tape-based reverse-mode gradient.
//
// A Tensor is a handle: copies share storage (data and grad). Operations
// take a Graph, which records one backward closure per op when it is in
// training mode. Graph::backward seeds d(loss)/d(loss) = 1 and replays the
// closures in reverse, accumulating into every participating grad buffer.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pvf/error.hpp"

namespace pvf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  // Scalar zero.
  Tensor() : Tensor(Shape{1}) {}

  explicit Tensor(Shape shape)
      : s_(std::make_shared<Storage>()) {
    s_->data.assign(shape_size(shape), 0.0);
    s_->grad.assign(s_->data.size(), 0.0);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values)
      : s_(std::make_shared<Storage>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    }
    s_->grad.assign(values.size(), 0.0);
    s_->data = std::move(values);
    s_->shape = std::move(shape);
  }

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

  const Shape& shape() const { return s_->shape; }
  std::size_t size() const { return s_->data.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t rank() const { return s_->shape.size(); }

  std::span<double> data() { return s_->data; }
  std::span<const double> data() const { return s_->data; }
  // Gradient buffers stay writable through const handles so backward
  // closures can accumulate into captured inputs.
  std::span<double> grad() const { return s_->grad; }

  double& operator[](std::size_t i) { return s_->data[i]; }
  double operator[](std::size_t i) const { return s_->data[i]; }

  double item() const {
    if (size() != 1) throw ShapeError("tensor: item() on " + shape_string(shape()));
    return s_->data[0];
  }

  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

  // Deep copy with a fresh zero gradient and no graph origin.
  Tensor clone() const { return Tensor(s_->shape, s_->data); }

  bool shares_storage_with(const Tensor& other) const { return s_ == other.s_; }

  // Id of the graph that produced this tensor; 0 for leaves.
  std::uint64_t origin() const { return s_->origin; }
  void set_origin(std::uint64_t id) { s_->origin = id; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    std::uint64_t origin = 0;
  };
  std::shared_ptr<Storage> s_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

using ParamSet = std::vector<NamedTensor>;

inline void zero_grads(ParamSet& params) {
  for (auto& p : params) p.value.zero_grad();
}

inline ParamSet clone_params(const ParamSet& params) {
  ParamSet out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.value.clone()});
  return out;
}

// Copies values (not handles) so existing graphs/optimizers stay bound.
inline void assign_params(ParamSet& dst, const ParamSet& src) {
  if (dst.size() != src.size()) throw ShapeError("assign_params: size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].value.shape() != src[i].value.shape()) {
      throw ShapeError("assign_params: shape mismatch for " + dst[i].name);
    }
    auto d = dst[i].value.data();
    auto s = src[i].value.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

inline void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
  }
}

class Graph {
 public:
  enum class Mode { kTrain, kInference };

  explicit Graph(Mode mode = Mode::kTrain) : mode_(mode), id_(next_id()) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::kTrain; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return tape_.size(); }

  // Allocates an op output tagged with this graph.
  Tensor output(Shape shape) const {
    Tensor t(std::move(shape));
    t.set_origin(id_);
    return t;
  }

  template <class Fn>
  void record(Fn&& fn) {
    if (recording()) tape_.emplace_back(std::forward<Fn>(fn));
  }

  void backward(Tensor& loss) {
    if (!recording()) throw StateError("backward: graph is in inference mode");
    if (tape_.empty() || loss.origin() != id_) {
      throw StateError("backward: no recorded forward computation for this loss");
    }
    if (done_) throw StateError("backward: graph already consumed");
    if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar");
    loss.grad()[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    done_ = true;
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  Mode mode_;
  std::uint64_t id_;
  bool done_ = false;
  std::vector<std::function<void()>> tape_;
};

// ---------------------------------------------------------------------------
// Raw kernels shared by the tensor ops and the fused recurrent cells.

namespace detail {

// Taps j that touch at least one valid (l, l + j - pad) pair. With a
// length-1 signal and same padding only the centre tap survives.
inline std::pair<std::size_t, std::size_t> conv1d_taps(std::size_t len, std::size_t width,
                                                       std::size_t pad, std::size_t out_len) {
  const std::size_t lo = out_len - 1 < pad ? pad - (out_len - 1) : 0;
  return {lo, std::min(width, pad + len)};
}

// out[o, l] += sum_i sum_j w[o, i, j] * x[i, l + j - pad]
inline void conv1d_accumulate(std::span<const double> x, std::size_t in_ch,
                              std::size_t len, std::span<const double> w,
                              std::size_t out_ch, std::size_t width, std::size_t pad,
                              std::span<double> out, std::size_t out_len) {
  if (len == 1 && out_len == 1 && pad < width) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double* wk = w.data() + o * in_ch * width + pad;
      double acc = 0.0;
      for (std::size_t i = 0; i < in_ch; ++i) acc += wk[i * width] * x[i];
      out[o] += acc;
    }
    return;
  }
  const auto [j_lo, j_hi] = conv1d_taps(len, width, pad, out_len);
  for (std::size_t o = 0; o < out_ch; ++o) {
    double* y = out.data() + o * out_len;
    for (std::size_t i = 0; i < in_ch; ++i) {
      const double* xi = x.data() + i * len;
      const double* wk = w.data() + (o * in_ch + i) * width;
      for (std::size_t j = j_lo; j < j_hi; ++j) {
        const double wj = wk[j];
        // valid l: 0 <= l + j - pad < len
        const std::size_t lo = j < pad ? pad - j : 0;
        const std::size_t hi = std::min(out_len, len + pad - j);
        for (std::size_t l = lo; l < hi; ++l) y[l] += wj * xi[l + j - pad];
      }
    }
  }
}

// Gradient of conv1d_accumulate: dx += W^T dy, dw += dy (x) x. Either
// output span may be empty to skip it.
inline void conv1d_backward(std::span<const double> dy, std::span<const double> x,
                            std::size_t in_ch, std::size_t len,
                            std::span<const double> w, std::size_t out_ch,
                            std::size_t width, std::size_t pad, std::size_t out_len,
                            std::span<double> dx, std::span<double> dw) {
  if (len == 1 && out_len == 1 && pad < width) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double g = dy[o];
      const std::size_t base = o * in_ch * width + pad;
      if (!dx.empty()) {
        for (std::size_t i = 0; i < in_ch; ++i) dx[i] += g * w[base + i * width];
      }
      if (!dw.empty()) {
        for (std::size_t i = 0; i < in_ch; ++i) dw[base + i * width] += g * x[i];
      }
    }
    return;
  }
  const auto [j_lo, j_hi] = conv1d_taps(len, width, pad, out_len);
  for (std::size_t o = 0; o < out_ch; ++o) {
    const double* g = dy.data() + o * out_len;
    for (std::size_t i = 0; i < in_ch; ++i) {
      const double* xi = x.data() + i * len;
      const std::size_t base = (o * in_ch + i) * width;
      for (std::size_t j = j_lo; j < j_hi; ++j) {
        const std::size_t lo = j < pad ? pad - j : 0;
        const std::size_t hi = std::min(out_len, len + pad - j);
        if (!dx.empty()) {
          const double wj = w[base + j];
          double* dxi = dx.data() + i * len;
          for (std::size_t l = lo; l < hi; ++l) dxi[l + j - pad] += g[l] * wj;
        }
        if (!dw.empty()) {
          double acc = 0.0;
          for (std::size_t l = lo; l < hi; ++l) acc += g[l] * xi[l + j - pad];
          dw[base + j] += acc;
        }
      }
    }
  }
}

// y[r] += sum_c m[r, c] * x[c]
inline void matvec_accumulate(std::span<const double> m, std::size_t rows,
                              std::size_t cols, std::span<const double> x,
                              std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// dx += M^T dy, dm += dy x^T
inline void matvec_backward(std::span<const double> dy, std::span<const double> m,
                            std::size_t rows, std::size_t cols,
                            std::span<const double> x, std::span<double> dx,
                            std::span<double> dm) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* row = m.data() + r * cols;
    double* drow = dm.empty() ? nullptr : dm.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!dx.empty()) dx[c] += g * row[c];
      if (drow) drow[c] += g * x[c];
    }
  }
}

inline double sigmoid(double x) {
  // Split form avoids exp overflow for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

enum class Padding { kSame, kValid };

struct Conv1DKernel {
  Tensor weights;  // [out_channels x in_channels x width]
  Tensor bias;     // [out_channels]

  Conv1DKernel() = default;
  Conv1DKernel(std::size_t out_channels, std::size_t in_channels, std::size_t width)
      : weights(Shape{out_channels, in_channels, width}), bias(Shape{out_channels}) {
    validate();
  }
  Conv1DKernel(Tensor w, Tensor b) : weights(std::move(w)), bias(std::move(b)) {
    validate();
  }

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t width() const { return weights.dim(2); }

  void validate() const {
    if (weights.rank() != 3) throw ShapeError("conv1d kernel: weights must be rank 3");
    if (width() % 2 == 0) throw ShapeError("conv1d kernel: width must be odd");
    if (bias.shape() != Shape{out_channels()}) {
      throw ShapeError("conv1d kernel: bias shape " + shape_string(bias.shape()));
    }
  }
};

// Cross-correlation: y^j = b^j + sum_i w^{ij} * x^i, input laid out [C_in x L].
inline Tensor conv1d(Graph& g, const Tensor& x, const Conv1DKernel& k, Padding padding) {
  k.validate();
  if (x.rank() != 2 || x.dim(0) != k.in_channels()) {
    throw ShapeError("conv1d: input " + shape_string(x.shape()) + " vs kernel " +
                     shape_string(k.weights.shape()));
  }
  const std::size_t in_ch = x.dim(0), len = x.dim(1), width = k.width();
  std::size_t pad = 0, out_len = len;
  if (padding == Padding::kSame) {
    pad = (width - 1) / 2;
  } else {
    if (width > len) throw ShapeError("conv1d: kernel wider than input for valid padding");
    out_len = len - width + 1;
  }
  const std::size_t out_ch = k.out_channels();
  Tensor y = g.output({out_ch, out_len});
  auto yd = y.data();
  for (std::size_t o = 0; o < out_ch; ++o) {
    std::fill_n(yd.begin() + static_cast<std::ptrdiff_t>(o * out_len), out_len, k.bias[o]);
  }
  detail::conv1d_accumulate(x.data(), in_ch, len, k.weights.data(), out_ch, width, pad,
                            yd, out_len);
  check_finite(y.data(), "conv1d");
  g.record([x, k, y, in_ch, len, out_ch, width, pad, out_len]() mutable {
    auto dy = y.grad();
    auto db = k.bias.grad();
    for (std::size_t o = 0; o < out_ch; ++o) {
      for (std::size_t l = 0; l < out_len; ++l) db[o] += dy[o * out_len + l];
    }
    detail::conv1d_backward(dy, x.data(), in_ch, len, k.weights.data(), out_ch, width,
                            pad, out_len, x.grad(), k.weights.grad());
  });
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise activations

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(Graph& g, const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor y = g.output(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = fwd(xd[i]);
  check_finite(yd, name);
  g.record([x, y, deriv]() mutable {
    auto xd = x.data();
    auto yd = y.data();
    auto dy = y.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < xd.size(); ++i) dx[i] += dy[i] * deriv(xd[i], yd[i]);
  });
  return y;
}

}  // namespace detail

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "sigmoid", [](double v) { return detail::sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Dense layer: input of any shape is read as a flat vector of n values.

inline Tensor dense(Graph& g, const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || weights.dim(1) != x.size() ||
      bias.shape() != Shape{weights.dim(0)}) {
    throw ShapeError("dense: input " + shape_string(x.shape()) + ", weights " +
                     shape_string(weights.shape()) + ", bias " +
                     shape_string(bias.shape()));
  }
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  Tensor y = g.output({rows});
  auto yd = y.data();
  std::copy(bias.data().begin(), bias.data().end(), yd.begin());
  detail::matvec_accumulate(weights.data(), rows, cols, x.data(), yd);
  check_finite(yd, "dense");
  g.record([x, weights, bias, y, rows, cols]() mutable {
    auto dy = y.grad();
    auto db = bias.grad();
    for (std::size_t r = 0; r < rows; ++r) db[r] += dy[r];
    detail::matvec_backward(dy, weights.data(), rows, cols, x.data(), x.grad(),
                            weights.grad());
  });
  return y;
}

inline Tensor mse_loss(Graph& g, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  const std::size_t n = pred.size();
  Tensor loss = g.output({1});
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  loss[0] = acc / static_cast<double>(n);
  check_finite(loss.data(), "mse_loss");
  g.record([pred, target, loss, n]() mutable {
    const double scale = 2.0 * loss.grad()[0] / static_cast<double>(n);
    auto dp = pred.grad();
    auto dt = target.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pred[i] - target[i];
      dp[i] += scale * d;
      dt[i] -= scale * d;
    }
  });
  return loss;
}

// ---------------------------------------------------------------------------
// Initialization and optimization

using Rng = std::mt19937_64;

inline void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.data()) v = dist(rng);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter slot, so the
// same ParamSet (same order) must be passed to every step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return t_; }

  void step(ParamSet& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw StateError("adam: parameter set changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].value.data();
      auto gr = params[k].value.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != w.size()) throw StateError("adam: parameter shape changed");
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gr[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gr[i] * gr[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        gr[i] = 0.0;
      }
      check_finite(w, "adam_step");
    }
  }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace pvf
