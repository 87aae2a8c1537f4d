#pragma once

// Mini-batch Adam training of any NeuralModel on the training windows of a
// PreparedDataset, with a chronological validation tail and early stopping.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pvf/dataset.hpp"
#include "pvf/model.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 42;
  std::size_t patience = 20;
  // Last fraction of the training windows held out for early stopping;
  // 0 disables validation.
  double validation_fraction = 0.1;
};

struct LossHistory {
  std::vector<double> train;
  std::vector<double> validation;  // empty when validation is disabled
  std::size_t best_epoch = 0;      // 1-based; 0 if no epoch ran
};

using EpochCallback = std::function<void(std::size_t epoch, double train, double val)>;

inline double mean_squared_error(const Forecaster& model, const PreparedDataset& ds,
                                 std::size_t begin, std::size_t end) {
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double d = model.predict(ds.window(i)) - ds.target(i);
    acc += d * d;
  }
  return end > begin ? acc / static_cast<double>(end - begin) : 0.0;
}

inline LossHistory train_model(NeuralModel& model, const PreparedDataset& ds,
                               const TrainConfig& config,
                               const EpochCallback& on_epoch = nullptr) {
  if (ds.train_count() == 0) throw ValidationError("train: empty training split");
  if (ds.window_length != model.window_length()) {
    throw ShapeError("train: dataset window length " + std::to_string(ds.window_length) +
                     " != model window length " + std::to_string(model.window_length()));
  }
  if (config.batch_size == 0) throw ValidationError("train: batch_size must be >= 1");

  const std::size_t n_train = ds.train_count();
  std::size_t n_val = static_cast<std::size_t>(config.validation_fraction *
                                               static_cast<double>(n_train));
  if (n_val >= n_train) n_val = 0;
  const std::size_t n_fit = n_train - n_val;

  LossHistory history;
  if (config.epochs == 0) return history;

  ParamSet& params = model.params();
  zero_grads(params);
  Adam adam(config.adam);
  Rng rng(config.seed);
  std::vector<std::size_t> order(n_fit);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_val = std::numeric_limits<double>::infinity();
  ParamSet best = clone_params(params);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_fit; start += config.batch_size) {
      const std::size_t stop = std::min(n_fit, start + config.batch_size);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t w = order[k];
        Graph g;
        Tensor loss;
        try {
          Tensor pred = model.forward(g, ds.window(w));
          loss = mse_loss(g, pred, Tensor::scalar(ds.target(w)));
        } catch (const NumericError& e) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                             e.what());
        }
        epoch_loss += loss.item();
        g.backward(loss);
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& p : params) {
        for (double& gr : p.value.grad()) gr *= inv;
      }
      adam.step(params);
    }
    history.train.push_back(epoch_loss / static_cast<double>(n_fit));

    double val = std::numeric_limits<double>::quiet_NaN();
    if (n_val > 0) {
      val = mean_squared_error(model, ds, n_fit, n_train);
      history.validation.push_back(val);
      if (val < best_val) {
        best_val = val;
        best = clone_params(params);
        history.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        if (on_epoch) on_epoch(epoch, history.train.back(), val);
        break;
      }
    } else {
      history.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, history.train.back(), val);
  }
  if (n_val > 0 && history.best_epoch > 0) assign_params(params, best);
  return history;
}

}  // namespace pvf
