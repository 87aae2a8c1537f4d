#pragma once

#include <memory>
#include <span>
#include <string>

#include "pvf/checkpoint.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

// One-step-ahead point forecaster over a normalized input window.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t window_length() const = 0;
  virtual double predict(std::span<const double> window) const = 0;

  // Parameters plus a JSON description sufficient to rebuild the model.
  virtual Checkpoint to_checkpoint() const = 0;
};

// Forecaster whose output is a differentiable function of its parameters.
class NeuralModel : public Forecaster {
 public:
  virtual ParamSet& params() = 0;
  virtual const ParamSet& params() const = 0;

  // Returns a [1] tensor holding the normalized next-step prediction.
  virtual Tensor forward(Graph& g, std::span<const double> window) const = 0;

  double predict(std::span<const double> window) const override {
    Graph g(Graph::Mode::kInference);
    return forward(g, window).item();
  }
};

inline void check_window(std::span<const double> window, std::size_t expected,
                         const char* who) {
  if (window.size() != expected) {
    throw ShapeError(std::string(who) + ": window of " + std::to_string(window.size()) +
                     " samples, expected " + std::to_string(expected));
  }
}

}  // namespace pvf
