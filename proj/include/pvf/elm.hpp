#pragma once

// Extreme learning machine: frozen random hidden layer, output weights by
// ridge-regularized least squares in closed form.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "json.hpp"
#include "pvf/dataset.hpp"
#include "pvf/model.hpp"

namespace pvf {

// Rows are windows [begin, end), columns the L normalized inputs.
inline Eigen::MatrixXd window_matrix(const PreparedDataset& ds, std::size_t begin,
                                     std::size_t end) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(end - begin),
                    static_cast<Eigen::Index>(ds.window_length));
  for (std::size_t i = begin; i < end; ++i) {
    const auto w = ds.window(i);
    for (std::size_t j = 0; j < w.size(); ++j) {
      x(static_cast<Eigen::Index>(i - begin), static_cast<Eigen::Index>(j)) = w[j];
    }
  }
  return x;
}

inline Eigen::VectorXd target_vector(const PreparedDataset& ds, std::size_t begin,
                                     std::size_t end) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) y(static_cast<Eigen::Index>(i - begin)) = ds.target(i);
  return y;
}

// Solves (A^T A + ridge I) beta = A^T y. Throws NumericError when the
// system is singular (only possible with ridge = 0).
inline Eigen::VectorXd solve_ridge(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                   double ridge) {
  if (ridge < 0.0) throw ValidationError("ridge must be >= 0");
  Eigen::MatrixXd gram = a.transpose() * a;
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = a.transpose() * y;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const Eigen::VectorXd d = Eigen::MatrixXd(llt.matrixL()).diagonal();
    const double max_diag = gram.diagonal().cwiseAbs().maxCoeff();
    singular = d.minCoeff() * d.minCoeff() <=
               1e-13 * std::max(max_diag, 1e-300) * static_cast<double>(gram.rows());
  }
  if (singular) {
    throw NumericError("least-squares system is singular; use a ridge penalty > 0");
  }
  return llt.solve(rhs);
}

enum class ElmActivation { kSigmoid, kIdentity };

struct ElmConfig {
  std::size_t hidden = 200;
  double ridge = 1e-6;
  std::uint64_t seed = 42;
  ElmActivation activation = ElmActivation::kSigmoid;
};

class ElmModel final : public Forecaster {
 public:
  ElmModel(Eigen::MatrixXd input_weights, Eigen::VectorXd hidden_bias,
           ElmActivation activation)
      : input_weights_(std::move(input_weights)), hidden_bias_(std::move(hidden_bias)),
        activation_(activation), output_weights_(Eigen::VectorXd::Zero(input_weights_.rows())) {
    if (hidden_bias_.size() != input_weights_.rows()) {
      throw ShapeError("elm: hidden bias does not match input weights");
    }
  }

  // Uniform +-1 input weights and biases.
  static ElmModel random(std::size_t inputs, std::size_t hidden, ElmActivation activation,
                         std::uint64_t seed) {
    if (hidden == 0) throw ValidationError("elm: hidden size must be positive");
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::MatrixXd w(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(inputs));
    Eigen::VectorXd b(static_cast<Eigen::Index>(hidden));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = dist(rng);
    return ElmModel(std::move(w), std::move(b), activation);
  }

  Eigen::MatrixXd hidden_activations(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x * input_weights_.transpose();
    h.rowwise() += hidden_bias_.transpose();
    if (activation_ == ElmActivation::kSigmoid) {
      h = h.unaryExpr([](double v) { return detail::sigmoid(v); });
    }
    return h;
  }

  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge) {
    if (x.rows() == 0) throw ValidationError("elm: no training samples");
    output_weights_ = solve_ridge(hidden_activations(x), y, ridge);
  }

  const Eigen::MatrixXd& input_weights() const { return input_weights_; }
  const Eigen::VectorXd& hidden_bias() const { return hidden_bias_; }
  const Eigen::VectorXd& output_weights() const { return output_weights_; }

  std::string kind() const override { return "elm"; }
  std::size_t window_length() const override {
    return static_cast<std::size_t>(input_weights_.cols());
  }

  double predict(std::span<const double> window) const override {
    check_window(window, window_length(), "elm");
    const Eigen::Map<const Eigen::RowVectorXd> x(window.data(),
                                                 static_cast<Eigen::Index>(window.size()));
    return (hidden_activations(x) * output_weights_)(0);
  }

  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {
        {"kind", "elm"},
        {"activation", activation_ == ElmActivation::kSigmoid ? "sigmoid" : "identity"}};
    return {meta.dump(),
            {{"input_weights", to_tensor(input_weights_)},
             {"hidden_bias", to_tensor(hidden_bias_)},
             {"output_weights", to_tensor(output_weights_)}}};
  }

  static std::unique_ptr<ElmModel> from_checkpoint(const Checkpoint& ckpt) {
    const auto m = nlohmann::json::parse(ckpt.meta);
    const auto act = m.at("activation").get<std::string>() == "sigmoid"
                         ? ElmActivation::kSigmoid
                         : ElmActivation::kIdentity;
    auto model = std::make_unique<ElmModel>(to_matrix(ckpt.at("input_weights")),
                                            to_matrix(ckpt.at("hidden_bias")).col(0), act);
    model->output_weights_ = to_matrix(ckpt.at("output_weights")).col(0);
    return model;
  }

 private:
  static Tensor to_tensor(const Eigen::MatrixXd& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        t[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
      }
    }
    return t;
  }

  static Eigen::MatrixXd to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw StructuralError("elm checkpoint: expected rank-2 record");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = t[static_cast<std::size_t>(r * m.cols() + c)];
      }
    }
    return m;
  }

  Eigen::MatrixXd input_weights_;
  Eigen::VectorXd hidden_bias_;
  ElmActivation activation_;
  Eigen::VectorXd output_weights_;
};

inline ElmModel train_elm(const PreparedDataset& ds, const ElmConfig& config) {
  if (ds.train_count() == 0) throw ValidationError("elm: empty training split");
  ElmModel model = ElmModel::random(ds.window_length, config.hidden, config.activation,
                                    config.seed);
  model.fit(window_matrix(ds, 0, ds.train_count()), target_vector(ds, 0, ds.train_count()),
            config.ridge);
  return model;
}

}  // namespace pvf
