#pragma once

// CART regression trees (greedy variance reduction) and gradient-boosted
// ensembles of them under squared loss.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvf/dataset.hpp"
#include "pvf/model.hpp"

namespace pvf {

// Row-major sample x feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }

  static FeatureMatrix from_windows(const PreparedDataset& ds, std::size_t begin,
                                    std::size_t end) {
    FeatureMatrix m{end - begin, ds.window_length, {}};
    m.values.reserve(m.rows * m.cols);
    for (std::size_t i = begin; i < end; ++i) {
      const auto w = ds.window(i);
      m.values.insert(m.values.end(), w.begin(), w.end());
    }
    return m;
  }
};

struct TreeConfig {
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 5;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean training target of the node
  std::size_t samples = 0;

  bool is_leaf() const { return feature < 0; }
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;  // total child SSE
};

class RegressionTree {
 public:
  using Presorted = std::vector<std::vector<std::uint32_t>>;

  // Per-feature sample order, reusable across fits on the same features.
  static Presorted presort(const FeatureMatrix& x) {
    Presorted order(x.cols);
    for (std::size_t f = 0; f < x.cols; ++f) {
      auto& o = order[f];
      o.resize(x.rows);
      std::iota(o.begin(), o.end(), std::uint32_t{0});
      std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
        return x.at(a, f) < x.at(b, f);
      });
    }
    return order;
  }

  void fit(const FeatureMatrix& x, std::span<const double> y, const TreeConfig& config) {
    fit(x, y, config, presort(x));
  }

  void fit(const FeatureMatrix& x, std::span<const double> y, const TreeConfig& config,
           Presorted order) {
    if (x.rows == 0 || y.size() != x.rows) throw ValidationError("cart: empty or mismatched data");
    nodes_.clear();
    config_ = config;
    std::vector<char> goes_left(x.rows, 0);
    build(x, y, std::move(order), 0, goes_left);
  }

  double predict(std::span<const double> features) const {
    int n = 0;
    while (!nodes_[static_cast<std::size_t>(n)].is_leaf()) {
      const auto& node = nodes_[static_cast<std::size_t>(n)];
      n = features[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                             : node.right;
    }
    return nodes_[static_cast<std::size_t>(n)].value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t depth() const { return depth_of(0); }

  // [n x 6] rows: feature, threshold, left, right, value, samples.
  Tensor to_tensor() const {
    Tensor t({nodes_.size(), 6});
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      t[i * 6 + 0] = n.feature;
      t[i * 6 + 1] = n.threshold;
      t[i * 6 + 2] = n.left;
      t[i * 6 + 3] = n.right;
      t[i * 6 + 4] = n.value;
      t[i * 6 + 5] = static_cast<double>(n.samples);
    }
    return t;
  }

  static RegressionTree from_tensor(const Tensor& t) {
    if (t.rank() != 2 || t.dim(1) != 6 || t.dim(0) == 0) {
      throw StructuralError("tree record must be [n x 6]");
    }
    RegressionTree tree;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      TreeNode n;
      n.feature = static_cast<int>(t[i * 6 + 0]);
      n.threshold = t[i * 6 + 1];
      n.left = static_cast<int>(t[i * 6 + 2]);
      n.right = static_cast<int>(t[i * 6 + 3]);
      n.value = t[i * 6 + 4];
      n.samples = static_cast<std::size_t>(t[i * 6 + 5]);
      tree.nodes_.push_back(n);
    }
    return tree;
  }

  // Best split of the samples in `order` (any feature's list gives the
  // sample set). Ties keep the lowest feature, then the lowest threshold.
  static SplitChoice best_split(const FeatureMatrix& x, std::span<const double> y,
                                const Presorted& order, std::size_t min_leaf) {
    SplitChoice best;
    const auto& any = order.front();
    const std::size_t m = any.size();
    if (m < 2 * std::max<std::size_t>(min_leaf, 1)) return best;
    double mean = 0.0;
    for (auto i : any) mean += y[i];
    mean /= static_cast<double>(m);
    double total_sse = 0.0;
    for (auto i : any) total_sse += (y[i] - mean) * (y[i] - mean);
    best.sse = total_sse;
    // With centred targets the child SSE is total - s_l^2 (1/k + 1/(m-k)).
    double best_gain = 1e-12 * total_sse;
    for (std::size_t f = 0; f < x.cols; ++f) {
      const auto& o = order[f];
      double s_left = 0.0;
      for (std::size_t k = 1; k < m; ++k) {
        s_left += y[o[k - 1]] - mean;
        const double lo = x.at(o[k - 1], f), hi = x.at(o[k], f);
        if (!(lo < hi) || k < min_leaf || m - k < min_leaf) continue;
        const double kk = static_cast<double>(k);
        const double gain = s_left * s_left * (1.0 / kk + 1.0 / (static_cast<double>(m) - kk));
        if (gain > best_gain) {
          best_gain = gain;
          best.feature = static_cast<int>(f);
          const double mid = lo + (hi - lo) / 2.0;
          best.threshold = mid < hi ? mid : lo;  // adjacent doubles round up to hi
          best.sse = total_sse - gain;
        }
      }
    }
    return best;
  }

 private:
  int build(const FeatureMatrix& x, std::span<const double> y, Presorted order,
            std::size_t depth, std::vector<char>& goes_left) {
    const auto& members = order.front();
    TreeNode node;
    node.samples = members.size();
    double sum = 0.0;
    for (auto i : members) sum += y[i];
    node.value = sum / static_cast<double>(members.size());
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (depth >= config_.max_depth) return index;

    const SplitChoice split = best_split(x, y, order, config_.min_samples_leaf);
    if (split.feature < 0) return index;

    const auto f = static_cast<std::size_t>(split.feature);
    for (auto i : members) goes_left[i] = x.at(i, f) <= split.threshold ? 1 : 0;
    Presorted left(order.size()), right(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      for (auto i : order[k]) (goes_left[i] ? left[k] : right[k]).push_back(i);
    }
    order.clear();
    order.shrink_to_fit();
    const int l = build(x, y, std::move(left), depth + 1, goes_left);
    const int r = build(x, y, std::move(right), depth + 1, goes_left);
    auto& stored = nodes_[static_cast<std::size_t>(index)];
    stored.feature = split.feature;
    stored.threshold = split.threshold;
    stored.left = l;
    stored.right = r;
    return index;
  }

  std::size_t depth_of(std::size_t n) const {
    if (nodes_.empty() || nodes_[n].is_leaf()) return 0;
    return 1 + std::max(depth_of(static_cast<std::size_t>(nodes_[n].left)),
                        depth_of(static_cast<std::size_t>(nodes_[n].right)));
  }

  TreeConfig config_;
  std::vector<TreeNode> nodes_;
};

class CartModel final : public Forecaster {
 public:
  CartModel(RegressionTree tree, std::size_t window_length)
      : tree_(std::move(tree)), window_(window_length) {}

  const RegressionTree& tree() const { return tree_; }
  std::string kind() const override { return "cart"; }
  std::size_t window_length() const override { return window_; }
  double predict(std::span<const double> window) const override {
    check_window(window, window_, "cart");
    return tree_.predict(window);
  }
  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", "cart"}, {"window_length", window_}};
    return {meta.dump(), {{"tree0", tree_.to_tensor()}}};
  }
  static std::unique_ptr<CartModel> from_checkpoint(const Checkpoint& ckpt) {
    const auto m = nlohmann::json::parse(ckpt.meta);
    return std::make_unique<CartModel>(RegressionTree::from_tensor(ckpt.at("tree0")),
                                       m.at("window_length").get<std::size_t>());
  }

 private:
  RegressionTree tree_;
  std::size_t window_;
};

inline CartModel train_cart(const PreparedDataset& ds, const TreeConfig& config) {
  if (ds.train_count() == 0) throw ValidationError("cart: empty training split");
  const auto x = FeatureMatrix::from_windows(ds, 0, ds.train_count());
  std::vector<double> y;
  for (std::size_t i = 0; i < ds.train_count(); ++i) y.push_back(ds.target(i));
  RegressionTree tree;
  tree.fit(x, y, config);
  return CartModel(std::move(tree), ds.window_length);
}

struct GbdtConfig {
  std::size_t n_trees = 100;
  double shrinkage = 0.1;
  std::size_t max_depth = 3;
  std::size_t min_samples_leaf = 1;
};

// prediction = init + shrinkage * sum of tree outputs
class GbdtModel final : public Forecaster {
 public:
  GbdtModel(double init, double shrinkage, std::size_t window_length)
      : init_(init), shrinkage_(shrinkage), window_(window_length) {}

  double init() const { return init_; }
  double shrinkage() const { return shrinkage_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  const std::vector<double>& stage_mse() const { return stage_mse_; }

  void fit(const FeatureMatrix& x, std::span<const double> y, const GbdtConfig& config) {
    if (x.rows == 0) throw ValidationError("gbdt: no training samples");
    shrinkage_ = config.shrinkage;
    init_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    trees_.clear();
    stage_mse_.clear();
    std::vector<double> current(x.rows, init_);
    std::vector<double> residual(x.rows);
    const auto order = RegressionTree::presort(x);
    const TreeConfig tree_config{config.max_depth, config.min_samples_leaf};
    stage_mse_.push_back(mse(y, current));
    for (std::size_t t = 0; t < config.n_trees; ++t) {
      for (std::size_t i = 0; i < x.rows; ++i) residual[i] = y[i] - current[i];
      RegressionTree tree;
      tree.fit(x, residual, tree_config, order);
      for (std::size_t i = 0; i < x.rows; ++i) current[i] += shrinkage_ * tree.predict(x.row(i));
      trees_.push_back(std::move(tree));
      stage_mse_.push_back(mse(y, current));
    }
  }

  std::string kind() const override { return "gbdt"; }
  std::size_t window_length() const override { return window_; }
  double predict(std::span<const double> window) const override {
    check_window(window, window_, "gbdt");
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(window);
    return init_ + shrinkage_ * sum;
  }

  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", "gbdt"},
                           {"window_length", window_},
                           {"init", init_},
                           {"shrinkage", shrinkage_},
                           {"n_trees", trees_.size()}};
    Checkpoint ckpt{meta.dump(), {}};
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      ckpt.params.push_back({"tree" + std::to_string(t), trees_[t].to_tensor()});
    }
    return ckpt;
  }

  static std::unique_ptr<GbdtModel> from_checkpoint(const Checkpoint& ckpt) {
    const auto m = nlohmann::json::parse(ckpt.meta);
    auto model = std::make_unique<GbdtModel>(m.at("init").get<double>(),
                                             m.at("shrinkage").get<double>(),
                                             m.at("window_length").get<std::size_t>());
    const auto n = m.at("n_trees").get<std::size_t>();
    for (std::size_t t = 0; t < n; ++t) {
      model->trees_.push_back(RegressionTree::from_tensor(ckpt.at("tree" + std::to_string(t))));
    }
    return model;
  }

 private:
  static double mse(std::span<const double> y, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - f[i]) * (y[i] - f[i]);
    return acc / static_cast<double>(y.size());
  }

  double init_;
  double shrinkage_;
  std::size_t window_;
  std::vector<RegressionTree> trees_;
  std::vector<double> stage_mse_;  // entry 0 is the init-only model
};

inline GbdtModel train_gbdt(const PreparedDataset& ds, const GbdtConfig& config) {
  if (ds.train_count() == 0) throw ValidationError("gbdt: empty training split");
  const auto x = FeatureMatrix::from_windows(ds, 0, ds.train_count());
  std::vector<double> y;
  for (std::size_t i = 0; i < ds.train_count(); ++i) y.push_back(ds.target(i));
  GbdtModel model(0.0, config.shrinkage, ds.window_length);
  model.fit(x, y, config);
  return model;
}

class PersistenceModel final : public Forecaster {
 public:
  explicit PersistenceModel(std::size_t window_length) : window_(window_length) {}

  std::string kind() const override { return "persistence"; }
  std::size_t window_length() const override { return window_; }
  double predict(std::span<const double> window) const override {
    if (window.empty()) throw ShapeError("persistence: empty window");
    return window.back();
  }
  Checkpoint to_checkpoint() const override {
    nlohmann::json meta = {{"kind", "persistence"}, {"window_length", window_}};
    return {meta.dump(), {}};
  }

 private:
  std::size_t window_;
};

inline double persistence_forecast(std::span<const double> window) {
  return PersistenceModel(window.size()).predict(window);
}

}  // namespace pvf
