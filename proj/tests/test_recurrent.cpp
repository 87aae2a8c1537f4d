#include <gtest/gtest.h>

#include <cmath>

#include "pvf/recurrent.hpp"
#include "pvf/trainer.hpp"
#include "support.hpp"

namespace pvf {
namespace {

using testing::fill_random;
using testing::gradcheck;
using testing::random_tensor;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void randomize(LstmCellParams& p, Rng& rng, double scale = 0.8) {
  for (std::size_t k = 0; k < kGates; ++k) {
    fill_random(p.w_x[k], rng, -scale, scale);
    fill_random(p.w_h[k], rng, -scale, scale);
    fill_random(p.b[k], rng, -scale, scale);
  }
}

void randomize(ConvLstmCellParams& p, Rng& rng, double scale = 0.8) {
  for (std::size_t k = 0; k < kGates; ++k) {
    fill_random(p.w_x[k], rng, -scale, scale);
    fill_random(p.w_h[k], rng, -scale, scale);
    fill_random(p.b[k], rng, -scale, scale);
  }
  fill_random(p.w_ci, rng, -scale, scale);
  fill_random(p.w_cf, rng, -scale, scale);
  fill_random(p.w_co, rng, -scale, scale);
}

std::vector<std::pair<std::string, Tensor>> as_wrt(const ParamSet& set) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : set) out.emplace_back(p.name, p.value);
  return out;
}

// Textbook LSTM step written out with plain loops.
void naive_lstm(const LstmCellParams& p, const std::vector<double>& x,
                const std::vector<double>& h, const std::vector<double>& c,
                std::vector<double>& h_out, std::vector<double>& c_out) {
  const std::size_t H = p.hidden_size, I = p.input_size;
  h_out.assign(H, 0.0);
  c_out.assign(H, 0.0);
  for (std::size_t n = 0; n < H; ++n) {
    double a[4];
    for (std::size_t k = 0; k < 4; ++k) {
      a[k] = p.b[k][n];
      for (std::size_t j = 0; j < I; ++j) a[k] += p.w_x[k][n * I + j] * x[j];
      for (std::size_t j = 0; j < H; ++j) a[k] += p.w_h[k][n * H + j] * h[j];
    }
    const double i = sig(a[0]), f = sig(a[1]), g = std::tanh(a[2]), o = sig(a[3]);
    c_out[n] = f * c[n] + i * g;
    h_out[n] = o * std::tanh(c_out[n]);
  }
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(LstmStep, ZeroParamsAndStateGiveZero) {
  LstmCellParams p(3, 4);
  Graph g;
  const auto out = lstm_step(g, p, Tensor({3}, {1, -2, 3}), CellState::zeros({4}));
  for (double v : out.h.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, LargeForgetBiasKeepsCellState) {
  LstmCellParams p(2, 3);
  for (std::size_t n = 0; n < 3; ++n) p.b[kForgetGate][n] = 20.0;
  const auto prev = CellState{Tensor({3}), Tensor({3}, {0.7, -1.2, 2.5})};
  Graph g;
  const auto out = lstm_step(g, p, Tensor({2}, {0.3, 0.4}), prev);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_DOUBLE_EQ(out.c[n], prev.c[n] * sig(20.0));
    EXPECT_NEAR(out.c[n], prev.c[n], 1e-8);
  }
}

TEST(LstmStep, MatchesNaiveEquations) {
  for (int s = 0; s < 20; ++s) {
    Rng rng(s);
    LstmCellParams p(3, 5);
    randomize(p, rng);
    const auto x = random_tensor({3}, rng), h = random_tensor({5}, rng),
               c = random_tensor({5}, rng);
    Graph g;
    const auto out = lstm_step(g, p, x, {h, c});
    std::vector<double> h_ref, c_ref;
    naive_lstm(p, values(x), values(h), values(c), h_ref, c_ref);
    for (std::size_t n = 0; n < 5; ++n) {
      EXPECT_NEAR(out.h[n], h_ref[n], 1e-14);
      EXPECT_NEAR(out.c[n], c_ref[n], 1e-14);
    }
  }
}

TEST(LstmStep, ShapeMismatch) {
  LstmCellParams p(3, 4);
  Graph g;
  EXPECT_THROW(lstm_step(g, p, Tensor({2}), CellState::zeros({4})), ShapeError);
  EXPECT_THROW(lstm_step(g, p, Tensor({3}), CellState::zeros({5})), ShapeError);
}

TEST(LstmStep, GradientMatchesFiniteDifferences) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(500 + s);
    LstmCellParams p(2, 3);
    randomize(p, rng);
    const auto x1 = random_tensor({2}, rng), x2 = random_tensor({2}, rng);
    const auto h0 = random_tensor({3}, rng), c0 = random_tensor({3}, rng);
    const auto target = random_tensor({3}, rng);
    ParamSet set;
    p.append_to(set, "");
    auto wrt = as_wrt(set);
    wrt.emplace_back("x1", x1);
    wrt.emplace_back("h0", h0);
    wrt.emplace_back("c0", c0);
    const auto r = gradcheck(
        [&](Graph& g) {
          auto s1 = lstm_step(g, p, x1, {h0, c0});
          auto s2 = lstm_step(g, p, x2, s1);
          return mse_loss(g, s2.h, target);
        },
        wrt);
    EXPECT_TRUE(r.ok) << "seed " << s << ": " << r.worst;
  }
}

TEST(ConvLstmStep, ZeroEverythingGivesZero) {
  ConvLstmCellParams p(1, 3, 3, 4);
  Graph g;
  const auto out = convlstm_step(g, p, Tensor({1, 4}, {1, 2, 3, 4}), CellState::zeros({3, 4}));
  for (double v : out.h.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvLstmStep, ShapeMismatch) {
  ConvLstmCellParams p(1, 2, 3, 4);
  Graph g;
  EXPECT_THROW(convlstm_step(g, p, Tensor({1, 3}), CellState::zeros({2, 4})), ShapeError);
  EXPECT_THROW(convlstm_step(g, p, Tensor({1, 4}), CellState::zeros({2, 3})), ShapeError);
  EXPECT_THROW(ConvLstmCellParams(1, 2, 2, 4), ShapeError);
}

// Peephole terms written out by hand for a single cell at spatial length 1.
TEST(ConvLstmStep, PeepholesFollowCellEquations) {
  Rng rng(21);
  ConvLstmCellParams p(1, 1, 1, 1);
  randomize(p, rng, 1.5);
  const double x = 0.4, h = -0.3, c = 0.9;
  auto a = [&](Gate k) { return p.b[k][0] + p.w_x[k][0] * x + p.w_h[k][0] * h; };
  const double i = sig(a(kInputGate) + p.w_ci[0] * c);
  const double f = sig(a(kForgetGate) + p.w_cf[0] * c);
  const double c_new = f * c + i * std::tanh(a(kCandidate));
  const double o = sig(a(kOutputGate) + p.w_co[0] * c_new);
  Graph g;
  const auto out = convlstm_step(g, p, Tensor({1, 1}, {x}),
                                 {Tensor({1, 1}, {h}), Tensor({1, 1}, {c})});
  EXPECT_NEAR(out.c[0], c_new, 1e-15);
  EXPECT_NEAR(out.h[0], o * std::tanh(c_new), 1e-15);
}

TEST(ConvLstmStep, ReducesToLstmWithoutPeepholes) {
  for (int s = 0; s < 100; ++s) {
    Rng rng(1000 + s);
    const std::size_t in = 1 + s % 3, hid = 1 + s % 5;
    ConvLstmCellParams conv(in, hid, 1, 1);
    randomize(conv, rng, 2.0);
    std::fill(conv.w_ci.data().begin(), conv.w_ci.data().end(), 0.0);
    std::fill(conv.w_cf.data().begin(), conv.w_cf.data().end(), 0.0);
    std::fill(conv.w_co.data().begin(), conv.w_co.data().end(), 0.0);
    LstmCellParams lstm(in, hid);
    for (std::size_t k = 0; k < kGates; ++k) {
      // A width-1 kernel [out x in x 1] is the matrix [out x in].
      std::copy(conv.w_x[k].data().begin(), conv.w_x[k].data().end(), lstm.w_x[k].data().begin());
      std::copy(conv.w_h[k].data().begin(), conv.w_h[k].data().end(), lstm.w_h[k].data().begin());
      std::copy(conv.b[k].data().begin(), conv.b[k].data().end(), lstm.b[k].data().begin());
    }
    const auto x = random_tensor({in}, rng, -2, 2);
    const auto h = random_tensor({hid}, rng), c = random_tensor({hid}, rng, -2, 2);
    Graph g;
    const auto a = convlstm_step(g, conv, Tensor({in, 1}, values(x)),
                                 {Tensor({hid, 1}, values(h)), Tensor({hid, 1}, values(c))});
    const auto b = lstm_step(g, lstm, x, {h, c});
    for (std::size_t n = 0; n < hid; ++n) {
      EXPECT_NEAR(a.h[n], b.h[n], 1e-12);
      EXPECT_NEAR(a.c[n], b.c[n], 1e-12);
    }
  }
}

TEST(ConvLstmStep, GradientIncludingPeepholes) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(700 + s);
    const std::size_t space = 1 + s % 4, width = s % 2 ? 3 : 1;
    ConvLstmCellParams p(1, 2, width, space);
    randomize(p, rng);
    const auto x1 = random_tensor({1, space}, rng), x2 = random_tensor({1, space}, rng);
    const auto h0 = random_tensor({2, space}, rng), c0 = random_tensor({2, space}, rng);
    const auto target = random_tensor({2, space}, rng);
    ParamSet set;
    p.append_to(set, "");
    auto wrt = as_wrt(set);
    wrt.emplace_back("x1", x1);
    wrt.emplace_back("h0", h0);
    wrt.emplace_back("c0", c0);
    const auto r = gradcheck(
        [&](Graph& g) {
          auto s1 = convlstm_step(g, p, x1, {h0, c0});
          auto s2 = convlstm_step(g, p, x2, s1);
          return mse_loss(g, s2.h, target);
        },
        wrt);
    EXPECT_TRUE(r.ok) << "seed " << s << ": " << r.worst;
  }
}

TEST(Gates, ActivationsStayInOpenRanges) {
  for (int s = 0; s < 50; ++s) {
    Rng rng(s);
    ConvLstmCellParams conv(1, 3, 3, 4);
    randomize(conv, rng, 3.0);
    LstmCellParams lstm(2, 3);
    randomize(lstm, rng, 3.0);
    GateTrace tc, tl;
    Graph g;
    convlstm_step(g, conv, random_tensor({1, 4}, rng, -3, 3),
                  {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng, -3, 3)}, &tc);
    lstm_step(g, lstm, random_tensor({2}, rng, -3, 3),
              {random_tensor({3}, rng), random_tensor({3}, rng, -3, 3)}, &tl);
    for (const auto* t : {&tc, &tl}) {
      for (const auto* gate : {&t->input, &t->forget, &t->output}) {
        for (double v : *gate) {
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
        }
      }
      for (double v : t->candidate) {
        EXPECT_GT(v, -1.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
}

StackSpec small_stack(std::size_t layers, std::size_t window, CellKind kind = CellKind::kConvLstm,
                      std::size_t hidden = 2, std::size_t spatial = 1) {
  StackSpec spec;
  spec.window_length = window;
  spec.spatial = spatial;
  for (std::size_t i = 0; i < layers; ++i) spec.layers.push_back({kind, hidden, 3});
  return spec;
}

TEST(Stack, ZeroParamsPredictHeadBias) {
  RecurrentStack stack(small_stack(1, 6), 3);
  for (auto& p : stack.params()) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
  stack.head_bias()[0] = 0.375;
  EXPECT_EQ(stack.predict(std::vector<double>(6, 0.0)), 0.375);
  stack.head_bias()[0] = 0.0;
  EXPECT_EQ(stack.predict(std::vector<double>{1, 2, 3, 4, 5, 6}), 0.0);
}

TEST(Stack, PredictionIsDeterministic) {
  const std::vector<double> w{0.1, 0.5, 0.3, 0.9, 0.2, 0.4};
  RecurrentStack a(small_stack(2, 6, CellKind::kConvLstm, 4), 17);
  RecurrentStack b(small_stack(2, 6, CellKind::kConvLstm, 4), 17);
  EXPECT_EQ(a.predict(w), a.predict(w));
  EXPECT_EQ(a.predict(w), b.predict(w));
  RecurrentStack c(small_stack(2, 6, CellKind::kConvLstm, 4), 18);
  EXPECT_NE(a.predict(w), c.predict(w));
}

TEST(Stack, RejectsBadSpecsAndWindows) {
  EXPECT_THROW(RecurrentStack(small_stack(0, 6), 1), ValidationError);
  EXPECT_THROW(RecurrentStack(small_stack(1, 6, CellKind::kConvLstm, 2, 4), 1), ValidationError);
  RecurrentStack ok(small_stack(1, 6), 1);
  EXPECT_THROW(ok.predict(std::vector<double>(5, 0.0)), ShapeError);
}

TEST(Stack, TwoLayerGradientOnTenSeeds) {
  const std::vector<std::pair<CellKind, std::size_t>> variants = {
      {CellKind::kConvLstm, 1}, {CellKind::kConvLstm, 2}, {CellKind::kLstm, 1}};
  for (int s = 0; s < 10; ++s) {
    const auto [kind, spatial] = variants[static_cast<std::size_t>(s) % variants.size()];
    RecurrentStack stack(small_stack(2, 6, kind, 2, spatial), 40 + s);
    Rng rng(900 + s);
    // Nonzero biases and peepholes so every path carries gradient.
    for (auto& p : stack.params()) fill_random(p.value, rng, -0.8, 0.8);
    std::vector<double> window(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : window) v = u(rng);
    const auto target = Tensor::scalar(u(rng));
    const auto r = gradcheck(
        [&](Graph& g) { return mse_loss(g, stack.forward(g, window), target); },
        as_wrt(stack.params()));
    EXPECT_TRUE(r.ok) << "seed " << s << ": " << r.worst;
  }
}

TEST(Stack, CheckpointRoundTripPreservesPredictions) {
  RecurrentStack stack(small_stack(2, 8, CellKind::kConvLstm, 3, 2), 5);
  Rng rng(6);
  for (auto& p : stack.params()) fill_random(p.value, rng, -0.5, 0.5);
  const auto ckpt = stack.to_checkpoint();
  const auto back = RecurrentStack::from_checkpoint(decode_checkpoint(encode_checkpoint(ckpt)));
  EXPECT_TRUE(back->spec() == stack.spec());
  const std::vector<double> w{0.3, 0.1, 0.4, 0.1, 0.5, 0.9, 0.2, 0.6};
  EXPECT_EQ(back->predict(w), stack.predict(w));
  EXPECT_EQ(encode_checkpoint(back->to_checkpoint()), encode_checkpoint(ckpt));
}

PreparedDataset sine_dataset(std::size_t n, std::size_t window, double period) {
  return prepare(testing::series_from(testing::sine_values(n, period)), window, 0.8);
}

TEST(Training, ZeroEpochsLeavesParamsUnchanged) {
  RecurrentStack stack(small_stack(1, 8), 2);
  const auto before = encode_checkpoint(stack.to_checkpoint());
  TrainConfig c;
  c.epochs = 0;
  const auto h = train_model(stack, sine_dataset(60, 8, 12.0), c);
  EXPECT_TRUE(h.train.empty());
  EXPECT_EQ(encode_checkpoint(stack.to_checkpoint()), before);
}

TEST(Training, LossHistoryIsDeterministic) {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 8;
  const auto ds = sine_dataset(80, 8, 12.0);
  RecurrentStack a(small_stack(2, 8), 3), b(small_stack(2, 8), 3);
  const auto ha = train_model(a, ds, c);
  const auto hb = train_model(b, ds, c);
  EXPECT_EQ(ha.train, hb.train);
  EXPECT_EQ(ha.validation, hb.validation);
  EXPECT_EQ(encode_checkpoint(a.to_checkpoint()), encode_checkpoint(b.to_checkpoint()));
}

TEST(Training, ConstantTargetIsLearned) {
  // Only the first window varies; every target equals 3.
  std::vector<double> v{1.0, 5.0, 2.0, 4.0, 0.0, 6.0};
  v.resize(60, 3.0);
  const auto ds = prepare(testing::series_from(v), 6, 0.8);
  for (std::size_t i = 0; i < ds.window_count(); ++i) ASSERT_EQ(ds.target(i), 0.5);
  RecurrentStack stack(small_stack(1, 6), 4);
  TrainConfig c;
  c.epochs = 60;
  c.batch_size = 8;
  c.adam.lr = 1e-2;
  c.validation_fraction = 0.0;
  const auto h = train_model(stack, ds, c);
  EXPECT_LT(h.train.back(), h.train.front());
  EXPECT_LT(h.train.back(), 1e-4);
}

TEST(Training, NoiselessSineReachesLowError) {
  const auto ds = sine_dataset(160, 10, 16.0);
  RecurrentStack stack(small_stack(1, 10, CellKind::kConvLstm, 6), 8);
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 8;
  c.adam.lr = 1e-2;
  c.validation_fraction = 0.0;
  const auto h = train_model(stack, ds, c);
  ASSERT_FALSE(h.train.empty());
  EXPECT_LT(mean_squared_error(stack, ds, 0, ds.train_count()), 1e-3);
}

TEST(Training, EarlyStoppingKeepsBestValidationParams) {
  const auto ds = sine_dataset(120, 8, 12.0);
  RecurrentStack stack(small_stack(1, 8), 9);
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 8;
  c.patience = 3;
  c.adam.lr = 5e-2;
  const auto h = train_model(stack, ds, c);
  ASSERT_GT(h.best_epoch, 0u);
  const std::size_t n_val = static_cast<std::size_t>(0.1 * static_cast<double>(ds.train_count()));
  const double restored = mean_squared_error(stack, ds, ds.train_count() - n_val, ds.train_count());
  EXPECT_DOUBLE_EQ(restored, h.validation[h.best_epoch - 1]);
}

}  // namespace
}  // namespace pvf
