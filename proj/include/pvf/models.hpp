#pragma once

// Model registry: one configuration type covering every forecaster kind,
// training dispatch, and checkpoint loading.

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvf/checkpoint.hpp"
#include "pvf/dataset.hpp"
#include "pvf/elm.hpp"
#include "pvf/model.hpp"
#include "pvf/neural_baselines.hpp"
#include "pvf/recurrent.hpp"
#include "pvf/trainer.hpp"
#include "pvf/tree.hpp"

namespace pvf {

inline const std::vector<std::string>& model_kinds() {
  static const std::vector<std::string> kinds = {"convlstm", "lstm", "cnn",  "mlp",
                                                 "elm",      "cart", "gbdt", "persistence"};
  return kinds;
}

struct ModelConfig {
  std::string kind = "convlstm";
  std::size_t layers = 2;   // recurrent or conv layers
  std::size_t hidden = 0;   // 0 picks the kind default
  std::size_t kernel_width = 3;
  std::size_t spatial = 1;  // samples per ConvLSTM step
  TrainConfig train;
  // ELM
  double ridge = 1e-6;
  // CART / GBDT
  std::size_t max_depth = 0;  // 0 picks the kind default
  std::size_t min_samples_leaf = 5;
  std::size_t n_trees = 100;
  double shrinkage = 0.1;

  std::size_t resolved_hidden() const {
    if (hidden > 0) return hidden;
    if (kind == "lstm") return 32;
    if (kind == "mlp") return 64;
    if (kind == "elm") return 200;
    return 16;
  }
  std::size_t resolved_depth() const {
    if (max_depth > 0) return max_depth;
    return kind == "gbdt" ? 3 : 8;
  }

  void validate() const {
    bool known = false;
    for (const auto& k : model_kinds()) known = known || k == kind;
    if (!known) throw ValidationError("unknown model kind '" + kind + "'");
    if (layers == 0) throw ValidationError("model: layers must be >= 1");
  }

  StackSpec stack_spec(std::size_t window_length) const {
    StackSpec spec;
    spec.window_length = window_length;
    spec.spatial = spatial;
    const CellKind cell = kind == "lstm" ? CellKind::kLstm : CellKind::kConvLstm;
    for (std::size_t l = 0; l < layers; ++l) {
      spec.layers.push_back({cell, resolved_hidden(), kernel_width});
    }
    return spec;
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", c.kind},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"kernel_width", c.kernel_width},
          {"spatial", c.spatial},
          {"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.adam.lr},
          {"beta1", c.train.adam.beta1},
          {"beta2", c.train.adam.beta2},
          {"adam_eps", c.train.adam.eps},
          {"seed", c.train.seed},
          {"patience", c.train.patience},
          {"validation_fraction", c.train.validation_fraction},
          {"ridge", c.ridge},
          {"max_depth", c.max_depth},
          {"min_samples_leaf", c.min_samples_leaf},
          {"n_trees", c.n_trees},
          {"shrinkage", c.shrinkage}};
}

// Missing keys keep their current values, so a partial JSON object
// overrides only what it names.
inline void merge_json(ModelConfig& c, const nlohmann::json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("kind", c.kind);
  take("layers", c.layers);
  take("hidden", c.hidden);
  take("kernel_width", c.kernel_width);
  take("spatial", c.spatial);
  take("epochs", c.train.epochs);
  take("batch_size", c.train.batch_size);
  take("learning_rate", c.train.adam.lr);
  take("beta1", c.train.adam.beta1);
  take("beta2", c.train.adam.beta2);
  take("adam_eps", c.train.adam.eps);
  take("seed", c.train.seed);
  take("patience", c.train.patience);
  take("validation_fraction", c.train.validation_fraction);
  take("ridge", c.ridge);
  take("max_depth", c.max_depth);
  take("min_samples_leaf", c.min_samples_leaf);
  take("n_trees", c.n_trees);
  take("shrinkage", c.shrinkage);
}

struct TrainedModel {
  std::unique_ptr<Forecaster> model;
  LossHistory history;
};

// Builds an untrained model (neural kinds only; others are fit directly).
inline std::unique_ptr<NeuralModel> make_neural_model(const ModelConfig& c,
                                                      std::size_t window_length) {
  if (c.kind == "convlstm" || c.kind == "lstm") {
    return std::make_unique<RecurrentStack>(c.stack_spec(window_length), c.train.seed);
  }
  if (c.kind == "cnn") {
    return std::make_unique<CnnModel>(window_length, c.layers, c.resolved_hidden(),
                                      c.kernel_width, c.train.seed);
  }
  if (c.kind == "mlp") {
    return std::make_unique<MlpModel>(window_length, c.resolved_hidden(), c.train.seed);
  }
  return nullptr;
}

inline TrainedModel train_forecaster(const ModelConfig& c, const PreparedDataset& ds,
                                     const EpochCallback& on_epoch = nullptr) {
  c.validate();
  TrainedModel out;
  if (auto neural = make_neural_model(c, ds.window_length)) {
    // Shuffling uses a stream separate from initialization.
    TrainConfig tc = c.train;
    tc.seed = c.train.seed ^ 0x9E3779B97F4A7C15ULL;
    out.history = train_model(*neural, ds, tc, on_epoch);
    out.model = std::move(neural);
  } else if (c.kind == "elm") {
    out.model = std::make_unique<ElmModel>(
        train_elm(ds, {c.resolved_hidden(), c.ridge, c.train.seed, ElmActivation::kSigmoid}));
  } else if (c.kind == "cart") {
    out.model = std::make_unique<CartModel>(
        train_cart(ds, {c.resolved_depth(), c.min_samples_leaf}));
  } else if (c.kind == "gbdt") {
    GbdtConfig g;
    g.n_trees = c.n_trees;
    g.shrinkage = c.shrinkage;
    g.max_depth = c.resolved_depth();
    auto model = std::make_unique<GbdtModel>(train_gbdt(ds, g));
    out.history.train = model->stage_mse();
    out.model = std::move(model);
  } else {
    out.model = std::make_unique<PersistenceModel>(ds.window_length);
  }
  return out;
}

inline std::unique_ptr<Forecaster> load_forecaster(const Checkpoint& ckpt) {
  const auto meta = nlohmann::json::parse(ckpt.meta);
  const auto kind = meta.at("kind").get<std::string>();
  if (kind == "convlstm" || kind == "lstm") return RecurrentStack::from_checkpoint(ckpt);
  if (kind == "cnn") return CnnModel::from_checkpoint(ckpt);
  if (kind == "mlp") return MlpModel::from_checkpoint(ckpt);
  if (kind == "elm") return ElmModel::from_checkpoint(ckpt);
  if (kind == "cart") return CartModel::from_checkpoint(ckpt);
  if (kind == "gbdt") return GbdtModel::from_checkpoint(ckpt);
  if (kind == "persistence") {
    return std::make_unique<PersistenceModel>(meta.at("window_length").get<std::size_t>());
  }
  throw StructuralError("checkpoint: unknown model kind '" + kind + "'");
}

}  // namespace pvf
