#pragma once

// Feed-forward comparison networks: a 1-D CNN over the window as a spatial
// axis, and a one-hidden-layer MLP. Both train through train_model.

#include <cstdint>
#include <memory>
#include <string>

#include "json.hpp"

#include "pvf/model.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

class CnnModel final : public NeuralModel {
 public:
  // `conv_layers` conv1d+ReLU blocks of `channels` filters, then a dense head.
  CnnModel(std::size_t window_length, std::size_t conv_layers, std::size_t channels,
           std::size_t kernel_width, std::uint64_t seed)
      : window_(window_length), channels_(channels), width_(kernel_width) {
    if (conv_layers == 0 || channels == 0) throw ValidationError("cnn: empty architecture");
    Rng rng(seed);
    std::size_t in_ch = 1;
    for (std::size_t l = 0; l < conv_layers; ++l) {
      Conv1DKernel k(channels, in_ch, kernel_width);
      glorot_uniform(k.weights, in_ch * kernel_width, channels * kernel_width, rng);
      params_.push_back({"conv" + std::to_string(l) + ".w", k.weights});
      params_.push_back({"conv" + std::to_string(l) + ".b", k.bias});
      convs_.push_back(std::move(k));
      in_ch = channels;
    }
    head_w_ = Tensor({1, channels * window_length});
    head_b_ = Tensor({1});
    glorot_uniform(head_w_, channels * window_length, 1, rng);
    params_.push_back({"head.w", head_w_});
    params_.push_back({"head.b", head_b_});
  }

  std::string kind() const override { return "cnn"; }
  std::size_t window_length() const override { return window_; }
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

  Tensor forward(Graph& g, std::span<const double> window) const override {
    check_window(window, window_, "cnn");
    Tensor x({1, window_}, std::vector<double>(window.begin(), window.end()));
    for (const auto& k : convs_) x = relu(g, conv1d(g, x, k, Padding::kSame));
    return dense(g, x, head_w_, head_b_);
  }

  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", "cnn"},
                           {"window_length", window_},
                           {"conv_layers", convs_.size()},
                           {"channels", channels_},
                           {"kernel_width", width_}};
    return {meta.dump(), clone_params(params_)};
  }

  static std::unique_ptr<CnnModel> from_checkpoint(const Checkpoint& ckpt) {
    const auto m = nlohmann::json::parse(ckpt.meta);
    auto model = std::make_unique<CnnModel>(
        m.at("window_length").get<std::size_t>(), m.at("conv_layers").get<std::size_t>(),
        m.at("channels").get<std::size_t>(), m.at("kernel_width").get<std::size_t>(), 0);
    ParamSet loaded;
    for (const auto& p : model->params_) loaded.push_back({p.name, ckpt.at(p.name)});
    assign_params(model->params_, loaded);
    return model;
  }

 private:
  std::size_t window_;
  std::size_t channels_;
  std::size_t width_;
  std::vector<Conv1DKernel> convs_;
  Tensor head_w_;
  Tensor head_b_;
  ParamSet params_;
};

class MlpModel final : public NeuralModel {
 public:
  MlpModel(std::size_t window_length, std::size_t hidden, std::uint64_t seed)
      : window_(window_length), hidden_(hidden),
        w1_({hidden, window_length}), b1_({hidden}), w2_({1, hidden}), b2_({1}) {
    if (hidden == 0) throw ValidationError("mlp: hidden size must be positive");
    Rng rng(seed);
    glorot_uniform(w1_, window_length, hidden, rng);
    glorot_uniform(w2_, hidden, 1, rng);
    params_ = {{"hidden.w", w1_}, {"hidden.b", b1_}, {"head.w", w2_}, {"head.b", b2_}};
  }

  std::string kind() const override { return "mlp"; }
  std::size_t window_length() const override { return window_; }
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

  Tensor forward(Graph& g, std::span<const double> window) const override {
    check_window(window, window_, "mlp");
    Tensor x({window_}, std::vector<double>(window.begin(), window.end()));
    return dense(g, relu(g, dense(g, x, w1_, b1_)), w2_, b2_);
  }

  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", "mlp"}, {"window_length", window_}, {"hidden", hidden_}};
    return {meta.dump(), clone_params(params_)};
  }

  static std::unique_ptr<MlpModel> from_checkpoint(const Checkpoint& ckpt) {
    const auto m = nlohmann::json::parse(ckpt.meta);
    auto model = std::make_unique<MlpModel>(m.at("window_length").get<std::size_t>(),
                                            m.at("hidden").get<std::size_t>(), 0);
    ParamSet loaded;
    for (const auto& p : model->params_) loaded.push_back({p.name, ckpt.at(p.name)});
    assign_params(model->params_, loaded);
    return model;
  }

 private:
  std::size_t window_;
  std::size_t hidden_;
  Tensor w1_, b1_, w2_, b2_;
  ParamSet params_;
};

}  // namespace pvf
