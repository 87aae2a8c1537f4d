#pragma once

// LSTM and peephole ConvLSTM cells, stacked into a deep recurrent
// forecaster with a linear output head.
//
// Both cells are fused graph nodes: the forward pass computes all four
// gates in one sweep and records a single hand-derived backward closure.
//
//   i_t = sigma(W_xi * x_t + W_hi * h_{t-1} + W_ci o C_{t-1} + b_i)
//   f_t = sigma(W_xf * x_t + W_hf * h_{t-1} + W_cf o C_{t-1} + b_f)
//   C_t = f_t o C_{t-1} + i_t o tanh(W_xc * x_t + W_hc * h_{t-1} + b_c)
//   o_t = sigma(W_xo * x_t + W_ho * h_{t-1} + W_co o C_t + b_o)
//   h_t = o_t o tanh(C_t)
//
// For the LSTM cell '*' is a matrix product and the peephole terms are
// absent; for ConvLSTM '*' is a same-padded 1-D cross-correlation over the
// spatial axis and 'o' is the Hadamard product.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pvf/model.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

inline constexpr std::size_t kGates = 4;  // input, forget, candidate, output
enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCandidate = 2, kOutputGate = 3 };

struct CellState {
  Tensor h;
  Tensor c;

  static CellState zeros(const Shape& shape) { return {Tensor(shape), Tensor(shape)}; }
};

// Post-activation gate values of one step, for inspection in tests.
struct GateTrace {
  std::vector<double> input, forget, candidate, output;
};

struct LstmCellParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::array<Tensor, kGates> w_x;  // [hidden x input]
  std::array<Tensor, kGates> w_h;  // [hidden x hidden]
  std::array<Tensor, kGates> b;    // [hidden]

  LstmCellParams() = default;
  LstmCellParams(std::size_t input, std::size_t hidden) : input_size(input), hidden_size(hidden) {
    for (std::size_t k = 0; k < kGates; ++k) {
      w_x[k] = Tensor({hidden, input});
      w_h[k] = Tensor({hidden, hidden});
      b[k] = Tensor({hidden});
    }
  }

  void init(Rng& rng) {
    for (std::size_t k = 0; k < kGates; ++k) {
      glorot_uniform(w_x[k], input_size, hidden_size, rng);
      glorot_uniform(w_h[k], hidden_size, hidden_size, rng);
    }
  }

  void append_to(ParamSet& set, const std::string& prefix) const {
    static constexpr std::array<const char*, kGates> tag = {"i", "f", "c", "o"};
    for (std::size_t k = 0; k < kGates; ++k) {
      set.push_back({prefix + "w_x" + tag[k], w_x[k]});
      set.push_back({prefix + "w_h" + tag[k], w_h[k]});
      set.push_back({prefix + "b_" + tag[k], b[k]});
    }
  }
};

struct ConvLstmCellParams {
  std::size_t in_channels = 0;
  std::size_t channels = 0;
  std::size_t kernel_width = 0;
  std::size_t spatial = 0;
  std::array<Tensor, kGates> w_x;  // [channels x in_channels x width]
  std::array<Tensor, kGates> w_h;  // [channels x channels x width]
  std::array<Tensor, kGates> b;    // [channels]
  Tensor w_ci, w_cf, w_co;         // [channels x spatial]

  ConvLstmCellParams() = default;
  ConvLstmCellParams(std::size_t in_ch, std::size_t ch, std::size_t width, std::size_t space)
      : in_channels(in_ch), channels(ch), kernel_width(width), spatial(space),
        w_ci({ch, space}), w_cf({ch, space}), w_co({ch, space}) {
    if (width % 2 == 0) throw ShapeError("convlstm: kernel width must be odd");
    for (std::size_t k = 0; k < kGates; ++k) {
      w_x[k] = Tensor({ch, in_ch, width});
      w_h[k] = Tensor({ch, ch, width});
      b[k] = Tensor({ch});
    }
  }

  // Glorot with receptive-field fans; biases and peepholes stay zero.
  void init(Rng& rng) {
    for (std::size_t k = 0; k < kGates; ++k) {
      glorot_uniform(w_x[k], in_channels * kernel_width, channels * kernel_width, rng);
      glorot_uniform(w_h[k], channels * kernel_width, channels * kernel_width, rng);
    }
  }

  void append_to(ParamSet& set, const std::string& prefix) const {
    static constexpr std::array<const char*, kGates> tag = {"i", "f", "c", "o"};
    for (std::size_t k = 0; k < kGates; ++k) {
      set.push_back({prefix + "w_x" + tag[k], w_x[k]});
      set.push_back({prefix + "w_h" + tag[k], w_h[k]});
      set.push_back({prefix + "b_" + tag[k], b[k]});
    }
    set.push_back({prefix + "w_ci", w_ci});
    set.push_back({prefix + "w_cf", w_cf});
    set.push_back({prefix + "w_co", w_co});
  }
};

namespace detail {

struct GateCache {
  std::vector<double> i, f, g, o, tanh_c;
};

inline void record_trace(GateTrace* trace, const GateCache& cache) {
  if (!trace) return;
  trace->input = cache.i;
  trace->forget = cache.f;
  trace->candidate = cache.g;
  trace->output = cache.o;
}

}  // namespace detail

inline CellState lstm_step(Graph& g, const LstmCellParams& p, const Tensor& x,
                           const CellState& prev, GateTrace* trace = nullptr) {
  const std::size_t in = p.input_size, hid = p.hidden_size;
  if (x.size() != in || prev.h.size() != hid || prev.c.size() != hid) {
    throw ShapeError("lstm_step: input " + shape_string(x.shape()) + ", state " +
                     shape_string(prev.h.shape()) + " for cell " + std::to_string(in) +
                     "->" + std::to_string(hid));
  }
  std::array<std::vector<double>, kGates> a;
  for (std::size_t k = 0; k < kGates; ++k) {
    a[k].assign(p.b[k].data().begin(), p.b[k].data().end());
    detail::matvec_accumulate(p.w_x[k].data(), hid, in, x.data(), a[k]);
    detail::matvec_accumulate(p.w_h[k].data(), hid, hid, prev.h.data(), a[k]);
  }
  detail::GateCache cache;
  cache.i.resize(hid);
  cache.f.resize(hid);
  cache.g.resize(hid);
  cache.o.resize(hid);
  cache.tanh_c.resize(hid);
  CellState out{g.output({hid}), g.output({hid})};
  for (std::size_t n = 0; n < hid; ++n) {
    cache.i[n] = detail::sigmoid(a[kInputGate][n]);
    cache.f[n] = detail::sigmoid(a[kForgetGate][n]);
    cache.g[n] = std::tanh(a[kCandidate][n]);
    cache.o[n] = detail::sigmoid(a[kOutputGate][n]);
    out.c[n] = cache.f[n] * prev.c[n] + cache.i[n] * cache.g[n];
    cache.tanh_c[n] = std::tanh(out.c[n]);
    out.h[n] = cache.o[n] * cache.tanh_c[n];
  }
  check_finite(out.c.data(), "lstm_step");
  detail::record_trace(trace, cache);

  // Parameters outlive every graph that uses them, so they are captured by address.
  g.record([&p, x, prev, out, cache = std::move(cache), in, hid]() mutable {
    auto dh = out.h.grad();
    auto dc = out.c.grad();
    std::array<std::vector<double>, kGates> da;
    for (auto& v : da) v.assign(hid, 0.0);
    auto dc_prev = prev.c.grad();
    for (std::size_t n = 0; n < hid; ++n) {
      const double o = cache.o[n], tc = cache.tanh_c[n];
      da[kOutputGate][n] = dh[n] * tc * o * (1.0 - o);
      const double dct = dc[n] + dh[n] * o * (1.0 - tc * tc);
      const double i = cache.i[n], f = cache.f[n], gg = cache.g[n];
      da[kForgetGate][n] = dct * prev.c[n] * f * (1.0 - f);
      da[kInputGate][n] = dct * gg * i * (1.0 - i);
      da[kCandidate][n] = dct * i * (1.0 - gg * gg);
      dc_prev[n] += dct * f;
    }
    for (std::size_t k = 0; k < kGates; ++k) {
      auto db = p.b[k].grad();
      for (std::size_t n = 0; n < hid; ++n) db[n] += da[k][n];
      detail::matvec_backward(da[k], p.w_x[k].data(), hid, in, x.data(), x.grad(),
                              p.w_x[k].grad());
      detail::matvec_backward(da[k], p.w_h[k].data(), hid, hid, prev.h.data(),
                              prev.h.grad(), p.w_h[k].grad());
    }
  });
  return out;
}

// x_t is read as [in_channels x spatial]; state tensors are [channels x spatial].
inline CellState convlstm_step(Graph& g, const ConvLstmCellParams& p, const Tensor& x,
                               const CellState& prev, GateTrace* trace = nullptr) {
  const std::size_t cin = p.in_channels, ch = p.channels, s = p.spatial,
                    width = p.kernel_width, pad = (width - 1) / 2, n_state = ch * s;
  if (x.size() != cin * s || prev.h.size() != n_state || prev.c.size() != n_state) {
    throw ShapeError("convlstm_step: input " + shape_string(x.shape()) + ", state " +
                     shape_string(prev.h.shape()) + " for cell " + std::to_string(cin) +
                     "x" + std::to_string(s) + "->" + std::to_string(ch) + "x" +
                     std::to_string(s));
  }
  std::array<std::vector<double>, kGates> a;
  for (std::size_t k = 0; k < kGates; ++k) {
    a[k].resize(n_state);
    for (std::size_t c = 0; c < ch; ++c) {
      std::fill_n(a[k].begin() + static_cast<std::ptrdiff_t>(c * s), s, p.b[k][c]);
    }
    detail::conv1d_accumulate(x.data(), cin, s, p.w_x[k].data(), ch, width, pad, a[k], s);
    detail::conv1d_accumulate(prev.h.data(), ch, s, p.w_h[k].data(), ch, width, pad, a[k],
                              s);
  }
  detail::GateCache cache;
  cache.i.resize(n_state);
  cache.f.resize(n_state);
  cache.g.resize(n_state);
  cache.o.resize(n_state);
  cache.tanh_c.resize(n_state);
  CellState out{g.output({ch, s}), g.output({ch, s})};
  for (std::size_t n = 0; n < n_state; ++n) {
    cache.i[n] = detail::sigmoid(a[kInputGate][n] + p.w_ci[n] * prev.c[n]);
    cache.f[n] = detail::sigmoid(a[kForgetGate][n] + p.w_cf[n] * prev.c[n]);
    cache.g[n] = std::tanh(a[kCandidate][n]);
    out.c[n] = cache.f[n] * prev.c[n] + cache.i[n] * cache.g[n];
    // Output-gate peephole sees the updated cell state.
    cache.o[n] = detail::sigmoid(a[kOutputGate][n] + p.w_co[n] * out.c[n]);
    cache.tanh_c[n] = std::tanh(out.c[n]);
    out.h[n] = cache.o[n] * cache.tanh_c[n];
  }
  check_finite(out.c.data(), "convlstm_step");
  detail::record_trace(trace, cache);

  g.record([&p, x, prev, out, cache = std::move(cache), cin, ch, s, width, pad,
            n_state]() mutable {
    auto dh = out.h.grad();
    auto dc = out.c.grad();
    auto dc_prev = prev.c.grad();
    auto dw_ci = p.w_ci.grad();
    auto dw_cf = p.w_cf.grad();
    auto dw_co = p.w_co.grad();
    std::array<std::vector<double>, kGates> da;
    for (auto& v : da) v.assign(n_state, 0.0);
    for (std::size_t n = 0; n < n_state; ++n) {
      const double o = cache.o[n], tc = cache.tanh_c[n];
      const double dao = dh[n] * tc * o * (1.0 - o);
      da[kOutputGate][n] = dao;
      dw_co[n] += dao * out.c[n];
      const double dct = dc[n] + dh[n] * o * (1.0 - tc * tc) + dao * p.w_co[n];
      const double i = cache.i[n], f = cache.f[n], gg = cache.g[n];
      const double c_prev = prev.c[n];
      const double daf = dct * c_prev * f * (1.0 - f);
      const double dai = dct * gg * i * (1.0 - i);
      da[kForgetGate][n] = daf;
      da[kInputGate][n] = dai;
      da[kCandidate][n] = dct * i * (1.0 - gg * gg);
      dw_ci[n] += dai * c_prev;
      dw_cf[n] += daf * c_prev;
      dc_prev[n] += dct * f + dai * p.w_ci[n] + daf * p.w_cf[n];
    }
    for (std::size_t k = 0; k < kGates; ++k) {
      auto db = p.b[k].grad();
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t l = 0; l < s; ++l) db[c] += da[k][c * s + l];
      }
      detail::conv1d_backward(da[k], x.data(), cin, s, p.w_x[k].data(), ch, width, pad, s,
                              x.grad(), p.w_x[k].grad());
      detail::conv1d_backward(da[k], prev.h.data(), ch, s, p.w_h[k].data(), ch, width, pad,
                              s, prev.h.grad(), p.w_h[k].grad());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Deep stack

enum class CellKind { kConvLstm, kLstm };

inline std::string to_string(CellKind kind) {
  return kind == CellKind::kConvLstm ? "convlstm" : "lstm";
}

inline CellKind parse_cell_kind(const std::string& s) {
  if (s == "convlstm") return CellKind::kConvLstm;
  if (s == "lstm") return CellKind::kLstm;
  throw ValidationError("unknown cell kind '" + s + "'");
}

struct LayerSpec {
  CellKind kind = CellKind::kConvLstm;
  std::size_t hidden = 16;  // channels (ConvLSTM) or units (LSTM)
  std::size_t kernel_width = 3;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// The window of L samples is fed as L / spatial steps, each step a
// 1-channel slice of `spatial` consecutive samples. spatial = 1 puts all of
// time on the sequence axis; spatial = L presents the window as one
// spatial axis in a single step.
struct StackSpec {
  std::vector<LayerSpec> layers;
  std::size_t window_length = 60;
  std::size_t spatial = 1;

  std::size_t steps() const { return window_length / spatial; }

  void validate() const {
    if (layers.empty()) throw ValidationError("stack: at least one layer required");
    if (spatial == 0 || window_length == 0 || window_length % spatial != 0) {
      throw ValidationError("stack: spatial length must divide the window length");
    }
    for (const auto& l : layers) {
      if (l.hidden == 0) throw ValidationError("stack: hidden size must be positive");
      if (l.kind == CellKind::kConvLstm && l.kernel_width % 2 == 0) {
        throw ValidationError("stack: kernel width must be odd");
      }
    }
  }

  friend bool operator==(const StackSpec&, const StackSpec&) = default;
};

inline nlohmann::json to_json(const StackSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"hidden", l.hidden},
                      {"kernel_width", l.kernel_width}});
  }
  return {{"layers", layers},
          {"window_length", spec.window_length},
          {"spatial", spec.spatial}};
}

inline StackSpec stack_spec_from_json(const nlohmann::json& j) {
  StackSpec spec;
  spec.window_length = j.at("window_length").get<std::size_t>();
  spec.spatial = j.at("spatial").get<std::size_t>();
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back({parse_cell_kind(l.at("kind").get<std::string>()),
                           l.at("hidden").get<std::size_t>(),
                           l.at("kernel_width").get<std::size_t>()});
  }
  spec.validate();
  return spec;
}

class RecurrentStack final : public NeuralModel {
 public:
  RecurrentStack(StackSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    const std::size_t s = spec_.spatial;
    std::size_t in_size = s;  // one channel per step
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
      const auto& l = spec_.layers[li];
      const std::string prefix = "layer" + std::to_string(li) + ".";
      if (l.kind == CellKind::kConvLstm) {
        if (in_size % s != 0) {
          throw ValidationError("stack: layer " + std::to_string(li) +
                                " input does not tile the spatial axis");
        }
        ConvLstmCellParams cell(in_size / s, l.hidden, l.kernel_width, s);
        cell.init(rng);
        cell.append_to(params_, prefix);
        conv_cells_.push_back(std::move(cell));
        in_size = l.hidden * s;
      } else {
        LstmCellParams cell(in_size, l.hidden);
        cell.init(rng);
        cell.append_to(params_, prefix);
        lstm_cells_.push_back(std::move(cell));
        in_size = l.hidden;
      }
    }
    head_w_ = Tensor({1, in_size});
    head_b_ = Tensor({1});
    glorot_uniform(head_w_, in_size, 1, rng);
    params_.push_back({"head.w", head_w_});
    params_.push_back({"head.b", head_b_});
  }

  const StackSpec& spec() const { return spec_; }
  std::string kind() const override {
    bool all_lstm = true;
    for (const auto& l : spec_.layers) all_lstm = all_lstm && l.kind == CellKind::kLstm;
    return all_lstm ? "lstm" : "convlstm";
  }
  std::size_t window_length() const override { return spec_.window_length; }
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

  const ConvLstmCellParams& conv_cell(std::size_t i) const { return conv_cells_.at(i); }
  const LstmCellParams& lstm_cell(std::size_t i) const { return lstm_cells_.at(i); }
  Tensor& head_weights() { return head_w_; }
  Tensor& head_bias() { return head_b_; }

  Tensor forward(Graph& g, std::span<const double> window) const override {
    check_window(window, spec_.window_length, "stack_forward");
    const std::size_t s = spec_.spatial;
    std::vector<CellState> states;
    for (const auto& l : spec_.layers) {
      states.push_back(l.kind == CellKind::kConvLstm ? CellState::zeros({l.hidden, s})
                                                     : CellState::zeros({l.hidden}));
    }
    for (std::size_t t = 0; t < spec_.steps(); ++t) {
      Tensor x({1, s}, std::vector<double>(window.begin() + static_cast<std::ptrdiff_t>(t * s),
                                           window.begin() + static_cast<std::ptrdiff_t>(t * s + s)));
      std::size_t ci = 0, li = 0;
      for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
        if (spec_.layers[k].kind == CellKind::kConvLstm) {
          states[k] = convlstm_step(g, conv_cells_[ci++], x, states[k]);
        } else {
          states[k] = lstm_step(g, lstm_cells_[li++], x, states[k]);
        }
        x = states[k].h;
      }
    }
    return dense(g, states.back().h, head_w_, head_b_);
  }

  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", kind()}, {"stack", to_json(spec_)}};
    return {meta.dump(), clone_params(params_)};
  }

  static std::unique_ptr<RecurrentStack> from_checkpoint(const Checkpoint& ckpt) {
    const auto meta = nlohmann::json::parse(ckpt.meta);
    auto model = std::make_unique<RecurrentStack>(stack_spec_from_json(meta.at("stack")), 0);
    ParamSet loaded;
    for (const auto& p : model->params_) loaded.push_back({p.name, ckpt.at(p.name)});
    assign_params(model->params_, loaded);
    return model;
  }

 private:
  StackSpec spec_;
  std::vector<ConvLstmCellParams> conv_cells_;
  std::vector<LstmCellParams> lstm_cells_;
  Tensor head_w_;
  Tensor head_b_;
  ParamSet params_;
};

}  // namespace pvf
